#include "lepde/rollout.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "lepde/error.hpp"

namespace lepde {

using ag::Var;

namespace {

Tensor with_batch(const Tensor& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return t.reshaped(s);
}

void check_finite_latent(const Tensor& z, int step) {
    if (!z.all_finite()) {
        std::ostringstream os;
        os << "rollout: non-finite latent at step " << step;
        throw NonFiniteError(os.str());
    }
}

}  // namespace

RolloutReport rollout_from_latent(const LatentDynamics& model, const Tensor& z0, const Tensor& z_p, int m,
                                  int decode_every) {
    if (m < 0) throw InvalidArgument("rollout: m must be >= 0");
    if (decode_every < 0) throw InvalidArgument("rollout: decode_every must be >= 0");
    ag::NoGradGuard guard;
    const int d = model.latent_dim();
    if (static_cast<int>(z0.numel()) != d) throw ShapeMismatch("rollout: z0 has wrong length");
    Var z(z0.reshaped({1, d}));
    const Var zp(z_p.reshaped({1, static_cast<int>(z_p.numel())}));
    check_finite_latent(z.value(), 0);

    RolloutReport rep;
    rep.latents = Tensor(Shape{m + 1, d});
    std::copy_n(z.value().data(), d, rep.latents.data());
    std::vector<Tensor> decoded;
    for (int i = 1; i <= m; ++i) {
        z = model.evolve(z, zp);
        check_finite_latent(z.value(), i);
        std::copy_n(z.value().data(), d, rep.latents.data() + static_cast<std::size_t>(i) * d);
        if (decode_every > 0 && i % decode_every == 0) {
            decoded.push_back(model.decode(z).value());
            rep.decoded_steps.push_back(i);
        }
    }
    Shape ps = model.state_shape();
    ps.insert(ps.begin(), static_cast<int>(decoded.size()));
    rep.predictions = Tensor(ps);
    std::size_t off = 0;
    for (const auto& t : decoded) {
        std::copy(t.vec().begin(), t.vec().end(), rep.predictions.data() + off);
        off += t.numel();
    }
    return rep;
}

RolloutReport rollout(const LatentDynamics& model, const Tensor& u0, const Tensor& statics, int m, int decode_every) {
    ag::NoGradGuard guard;
    const Tensor z0 = model.encode(Var(with_batch(u0))).value();
    Tensor zp = model.encode_static(Var(statics.reshaped({1, static_cast<int>(statics.numel())}))).value();
    return rollout_from_latent(model, z0, zp, m, decode_every);
}

double accumulated_error(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeMismatch("accumulated_error: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    if (pred.rank() < 1 || pred.dim(0) == 0) return 0.0;
    const int T = pred.dim(0);
    const std::size_t per = pred.numel() / static_cast<std::size_t>(T);
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            const double d = pred[t * per + i] - gt[t * per + i];
            s += d * d;
        }
        total += s / static_cast<double>(per);
    }
    return total;
}

double relative_l2(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeMismatch("relative_l2: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - gt[i];
        num += d * d;
        den += gt[i] * gt[i];
    }
    if (den == 0.0) throw InvalidArgument("relative_l2: ground truth has zero norm");
    return std::sqrt(num / den);
}

double mean_accumulated_error(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    if (preds.size() != gts.size() || preds.empty()) throw ShapeMismatch("mean_accumulated_error: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += accumulated_error(preds[i], gts[i]);
    return s / static_cast<double>(preds.size());
}

double mean_relative_l2(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    if (preds.size() != gts.size() || preds.empty()) throw ShapeMismatch("mean_relative_l2: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += relative_l2(preds[i], gts[i]);
    return s / static_cast<double>(preds.size());
}

RuntimeResult benchmark_runtime(const LatentDynamics& model, const Tensor& u0, const Tensor& statics, int m,
                                int repeats, int warmups) {
    if (repeats < 3) throw InvalidArgument("benchmark_runtime: repeats must be >= 3");
    using clock = std::chrono::steady_clock;
    auto time_once = [&](int decode_every) {
        const auto t0 = clock::now();
        const auto rep = rollout(model, u0, statics, m, decode_every);
        const auto t1 = clock::now();
        if (rep.latents.numel() == 0) throw Error("benchmark_runtime: empty rollout");
        return std::chrono::duration<double>(t1 - t0).count();
    };
    for (int w = 0; w < warmups; ++w) {
        time_once(0);
        time_once(1);
    }
    RuntimeResult r;
    for (int k = 0; k < repeats; ++k) {
        r.evo_samples.push_back(time_once(0));
        r.full_samples.push_back(time_once(1));
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    r.t_evo = median(r.evo_samples);
    r.t_full = median(r.full_samples);
    return r;
}

json EvalReport::to_json() const {
    json per = json::array();
    for (const auto& t : per_trajectory)
        per.push_back({{"trajectory", t.trajectory},
                       {"accumulated_error", t.accumulated_error},
                       {"relative_l2", t.relative_l2},
                       {"persistence_error", t.persistence_error}});
    return {{"start_frame", start_frame},
            {"frames", frames},
            {"accumulated_error", accumulated_error},
            {"relative_l2", relative_l2},
            {"persistence_error", persistence_error},
            {"persistence_relative_l2", persistence_relative_l2},
            {"representation_dim", representation_dim},
            {"state_dim", state_dim},
            {"compression_ratio", compression_ratio},
            {"t_full", runtime.t_full},
            {"t_evo", runtime.t_evo},
            {"per_trajectory", per}};
}

EvalReport evaluate_model(const LatentDynamics& model, const Dataset& ds, const std::vector<int>& trajectories,
                          const NormStats& stats, const EvalOptions& opt) {
    if (trajectories.empty()) throw InvalidArgument("evaluate_model: no trajectories");
    const Shape bundle = model.state_shape();
    const int S = bundle.at(0);
    const int n_t = ds.meta.state_shape.at(0);
    if (opt.start_frame < S) throw InvalidArgument("evaluate_model: start_frame must leave room for one input bundle");
    int frames = opt.frames < 0 ? n_t - opt.start_frame : opt.frames;
    frames -= frames % S;
    if (frames <= 0 || opt.start_frame + frames > n_t) throw InvalidArgument("evaluate_model: no whole bundle to predict");
    const int steps = frames / S;

    EvalReport rep;
    rep.start_frame = opt.start_frame;
    rep.frames = frames;
    rep.representation_dim = model.latent_dim();
    rep.state_dim = shape_numel(bundle);
    rep.compression_ratio = static_cast<double>(rep.state_dim) / model.latent_dim();

    std::vector<Tensor> preds, gts, persist;
    for (int ti : trajectories) {
        const auto& traj = ds.at(ti);
        const Tensor u0 = frames_tensor(traj, opt.start_frame - S, S, &stats);
        const auto st = static_input(traj, opt.mask_beta);
        const Tensor statics(Shape{static_cast<int>(st.size())}, st);
        auto r = rollout(model, u0, statics, steps, 1);
        Shape fs = traj.shape;
        fs[0] = frames;
        Tensor pred = r.predictions.reshaped(fs);
        stats.invert(pred, 1);
        Tensor gt = frames_tensor(traj, opt.start_frame, frames);
        Tensor last = frames_tensor(traj, opt.start_frame - S, S);
        Tensor base(fs);
        for (int k = 0; k < steps; ++k)
            std::copy(last.vec().begin(), last.vec().end(), base.data() + static_cast<std::size_t>(k) * last.numel());
        TrajectoryEval te;
        te.trajectory = ti;
        te.accumulated_error = accumulated_error(pred, gt);
        te.relative_l2 = relative_l2(pred, gt);
        te.persistence_error = accumulated_error(base, gt);
        rep.per_trajectory.push_back(te);
        preds.push_back(std::move(pred));
        gts.push_back(std::move(gt));
        persist.push_back(std::move(base));
    }
    rep.accumulated_error = mean_accumulated_error(preds, gts);
    rep.relative_l2 = mean_relative_l2(preds, gts);
    rep.persistence_error = mean_accumulated_error(persist, gts);
    rep.persistence_relative_l2 = mean_relative_l2(persist, gts);

    if (opt.benchmark_repeats > 0) {
        const auto& traj = ds.at(trajectories.front());
        const Tensor u0 = frames_tensor(traj, opt.start_frame - S, S, &stats);
        const auto st = static_input(traj, opt.mask_beta);
        rep.runtime = benchmark_runtime(model, u0, Tensor(Shape{static_cast<int>(st.size())}, st), steps,
                                        opt.benchmark_repeats, opt.benchmark_warmups);
    }
    return rep;
}

}  // namespace lepde
