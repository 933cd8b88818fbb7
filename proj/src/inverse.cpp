#include "lepde/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "lepde/error.hpp"

namespace lepde {

using ag::Node;
using ag::Var;

void AnnealSchedule::validate() const {
    if (!(beta1 > 0.0) || beta0 < beta1) throw InvalidArgument("AnnealSchedule: need beta0 >= beta1 > 0");
    if (iters < 0) throw InvalidArgument("AnnealSchedule: iters must be >= 0");
}

double anneal_schedule(const AnnealSchedule& sched, int iter) {
    sched.validate();
    if (iter < 0 || iter >= std::max(sched.iters, 1)) throw InvalidArgument("anneal_schedule: iter out of range");
    if (sched.iters <= 1) return sched.beta0;
    return sched.beta0 + (sched.beta1 - sched.beta0) * static_cast<double>(iter) / (sched.iters - 1);
}

namespace {

FractionResult score(double a1, double a2, std::array<double, 2> t) {
    FractionResult r;
    r.total = a1 + a2;
    const double K = std::max(r.total, kFractionFloor);
    r.lower = a1 / K;
    r.upper = a2 / K;
    r.loss = (t[0] - r.lower) * (t[0] - r.lower) + (t[1] - r.upper) * (t[1] - r.upper);
    return r;
}

double dot(const double* a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

FractionResult smoke_fraction_objective(const std::vector<std::vector<double>>& frames, const std::vector<double>& o1,
                                        const std::vector<double>& o2, std::array<double, 2> targets, int k_s, int k_e) {
    if (k_s < 0 || k_s >= k_e) throw InvalidArgument("smoke_fraction_objective: need 0 <= k_s < k_e");
    if (k_e >= static_cast<int>(frames.size())) throw InvalidArgument("smoke_fraction_objective: k_e beyond the rollout");
    if (o1.size() != o2.size()) throw ShapeMismatch("smoke_fraction_objective: outlet masks differ in size");
    for (std::size_t i = 0; i < o1.size(); ++i)
        if (o1[i] > 0.0 && o2[i] > 0.0) throw InvalidArgument("smoke_fraction_objective: outlet masks overlap");
    double a1 = 0.0, a2 = 0.0;
    for (int m = k_s; m <= k_e; ++m) {
        const auto& f = frames[static_cast<std::size_t>(m)];
        if (f.size() != o1.size()) throw ShapeMismatch("smoke_fraction_objective: frame size differs from masks");
        a1 += dot(f.data(), o1);
        a2 += dot(f.data(), o2);
    }
    return score(a1, a2, targets);
}

Var smoke_fraction_loss(const Var& smoke, const std::vector<double>& o1, const std::vector<double>& o2,
                        std::array<double, 2> targets, FractionResult* out) {
    const auto& v = smoke.value();
    if (v.rank() != 2 || static_cast<std::size_t>(v.dim(1)) != o1.size() || o1.size() != o2.size())
        throw ShapeMismatch("smoke_fraction_loss: expected [T, cells] matching the masks, got " + shape_str(v.shape()));
    const int T = v.dim(0);
    const std::size_t cells = o1.size();
    double a1 = 0.0, a2 = 0.0;
    for (int t = 0; t < T; ++t) {
        a1 += dot(v.data() + t * cells, o1);
        a2 += dot(v.data() + t * cells, o2);
    }
    const FractionResult r = score(a1, a2, targets);
    if (out) *out = r;
    return ag::make_result(Tensor::scalar(r.loss), {smoke}, [smoke, o1, o2, targets, r, T, cells](Node& self) {
        const double g = self.grad[0];
        const double dl_df1 = 2.0 * (r.lower - targets[0]);
        const double dl_df2 = 2.0 * (r.upper - targets[1]);
        double da1 = 0.0, da2 = 0.0;
        if (r.total > kFractionFloor) {
            // f_i = a_i / (a1 + a2)
            const double K2 = r.total * r.total;
            const double a1v = r.lower * r.total, a2v = r.upper * r.total;
            da1 = dl_df1 * (r.total - a1v) / K2 - dl_df2 * a2v / K2;
            da2 = dl_df2 * (r.total - a2v) / K2 - dl_df1 * a1v / K2;
        } else {
            da1 = dl_df1 / kFractionFloor;
            da2 = dl_df2 / kFractionFloor;
        }
        Tensor dx(Shape{T, static_cast<int>(cells)});
        for (int t = 0; t < T; ++t)
            for (std::size_t c = 0; c < cells; ++c) dx[t * cells + c] = g * (da1 * o1[c] + da2 * o2[c]);
        smoke.node()->accumulate(dx);
    });
}

std::vector<double> design_vector(const BoundaryParams& p, const DesignMask& free) {
    const auto a = p.as_array();
    std::vector<double> x;
    for (int k = 0; k < 3; ++k)
        if (free[k]) x.push_back(a[k]);
    return x;
}

BoundaryParams with_design_vector(BoundaryParams p, const DesignMask& free, const std::vector<double>& theta) {
    std::size_t j = 0;
    double* fields[3] = {&p.inlet_y, &p.outlet_lo_y, &p.outlet_hi_y};
    for (int k = 0; k < 3; ++k)
        if (free[k]) {
            if (j >= theta.size()) throw ShapeMismatch("with_design_vector: too few values");
            *fields[k] = theta[j++];
        }
    if (j != theta.size()) throw ShapeMismatch("with_design_vector: too many values");
    return p;
}

Var boundary_mask_var(const Var& theta, const BoundaryParams& base, const DesignMask& free, double beta) {
    const std::vector<double> x(theta.value().vec().begin(), theta.value().vec().end());
    const BoundaryParams p = with_design_vector(base, free, x);
    const int n = p.n;
    MaskJacobian jac;
    auto mask = continuous_boundary_mask(smoke_box_segments(p), beta, n, n, &jac);
    Tensor value(Shape{1, n * n}, std::move(mask.values));
    return ag::make_result(std::move(value), {theta}, [theta, free, jac = std::move(jac)](Node& self) {
        Tensor g(theta.shape());
        int j = 0;
        for (int k = 0; k < 3; ++k) {
            if (!free[k]) continue;
            // Segments 2, 3, 4 hold the inlet and the two outlets; both edges move with the center.
            const auto& d1 = jac.d_x1.at(static_cast<std::size_t>(2 + k));
            const auto& d2 = jac.d_x2.at(static_cast<std::size_t>(2 + k));
            double s = 0.0;
            for (std::size_t c = 0; c < d1.size(); ++c) s += self.grad[c] * (d1[c] + d2[c]);
            g[static_cast<std::size_t>(j++)] = s;
        }
        theta.node()->accumulate(g);
    });
}

std::pair<std::vector<double>, std::vector<double>> outlet_masks(const BoundaryParams& p, double beta) {
    const int n = p.n;
    if (beta <= 0.0) {
        const auto g = smoke_geometry(p);
        return {g.lower_mask, g.upper_mask};
    }
    const auto segs = smoke_box_segments(p);
    const auto mask = continuous_boundary_mask(segs, beta, n, n);
    std::vector<double> o1(static_cast<std::size_t>(n) * n, 0.0), o2 = o1;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const std::size_t idx = static_cast<std::size_t>(j) * n + i;
            if (segs[3].contains(j, i)) o1[idx] = 1.0 - mask.values[idx];
            else if (segs[4].contains(j, i)) o2[idx] = 1.0 - mask.values[idx];
        }
    return {o1, o2};
}

BoundaryParams project_boundary(BoundaryParams p, double margin, const DesignMask& free) {
    const double lo = p.wall + p.width / 2 + margin;
    const double hi = p.n - p.wall - p.width / 2 - margin;
    if (lo > hi) throw InvalidArgument("project_boundary: voids do not fit in the wall");
    p.inlet_y = std::clamp(p.inlet_y, lo, hi);
    p.outlet_lo_y = std::clamp(p.outlet_lo_y, lo, hi);
    p.outlet_hi_y = std::clamp(p.outlet_hi_y, lo, hi);
    const double gap = p.width + margin;
    if (p.outlet_hi_y - p.outlet_lo_y >= gap) return p;
    if (free[1] && !free[2]) {
        p.outlet_lo_y = p.outlet_hi_y - gap;
    } else if (!free[1] && free[2]) {
        p.outlet_hi_y = p.outlet_lo_y + gap;
    } else {
        const double mid = 0.5 * (p.outlet_lo_y + p.outlet_hi_y);
        p.outlet_lo_y = std::clamp(mid - gap / 2, lo, hi - gap);
        p.outlet_hi_y = p.outlet_lo_y + gap;
    }
    if (p.outlet_lo_y < lo || p.outlet_hi_y > hi) throw InvalidArgument("project_boundary: outlets cannot both fit");
    return p;
}

void DesignProblem::validate() const {
    if (std::abs(targets[0] + targets[1] - 1.0) > 1e-9) throw InvalidArgument("DesignProblem: targets must sum to 1");
    if (k_s < 0 || k_s >= k_e) throw InvalidArgument("DesignProblem: need 0 <= k_s < k_e");
    if (iters < 0) throw InvalidArgument("DesignProblem: iters must be >= 0");
    if (!(lr > 0.0)) throw InvalidArgument("DesignProblem: lr must be positive");
    p0.validate();
    if (smoke_init.size() != static_cast<std::size_t>(p0.n) * p0.n)
        throw ShapeMismatch("DesignProblem: smoke_init must have n*n cells");
    for (double s : smoke_init)
        if (!(s >= 0.0)) throw InvalidArgument("DesignProblem: smoke_init must be non-negative");
}

Tensor smoke_initial_bundle(const BoundaryParams& p, const DesignProblem& problem, int S) {
    const auto traj = simulate_smoke2d(p, problem.smoke_init, problem.inflow_speed, S, problem.solver);
    return frames_tensor(traj, 0, S);
}

namespace {

struct GraphForward {
    Var loss;
    Var theta;
    FractionResult fractions;
    Tensor latents;
};

GraphForward design_graph(const LatentDynamics& model, const NormStats& stats, const BoundaryParams& p,
                          const DesignProblem& problem, double beta) {
    const Shape bundle = model.state_shape();
    const int S = bundle.at(0);
    const int n = p.n;
    if (bundle.size() != 4 || bundle[2] != n || bundle[3] != n)
        throw ShapeMismatch("optimize_boundary: model state " + shape_str(bundle) + " does not match the box");
    if (problem.k_s < S) throw InvalidArgument("optimize_boundary: k_s must lie after the input bundle");
    const int first = problem.k_s / S, last = problem.k_e / S;

    GraphForward out;
    out.theta = Var(Tensor(Shape{static_cast<int>(std::count(problem.free.begin(), problem.free.end(), true))},
                           design_vector(p, problem.free)),
                    true);
    const Var mask = boundary_mask_var(out.theta, p, problem.free, beta);
    const Var zp = model.encode_static(mask);

    Tensor u0 = smoke_initial_bundle(p, problem, S);
    stats.apply(u0, 1);
    Shape bs = u0.shape();
    bs.insert(bs.begin(), 1);
    Var z;
    {
        ag::NoGradGuard guard;
        z = Var(model.encode(Var(u0.reshaped(bs))).value());
    }
    const int d = model.latent_dim();
    out.latents = Tensor(Shape{last + 1, d});
    std::copy_n(z.value().data(), d, out.latents.data());
    std::vector<Var> kept;
    for (int i = 1; i <= last; ++i) {
        z = model.evolve(z, zp);
        std::copy_n(z.value().data(), d, out.latents.data() + static_cast<std::size_t>(i) * d);
        if (i >= first) kept.push_back(z);
    }
    // [T, S, C, n, n] -> smoke frames [frames in window, n*n] in physical units
    const Var dec = model.decode(ag::stack_rows(kept));
    const int C = bundle[1];
    const std::size_t cells = static_cast<std::size_t>(n) * n;
    std::vector<int> rows;  // offsets of the smoke channel for each accounted frame
    for (int i = first; i <= last; ++i)
        for (int s = 0; s < S; ++s) {
            const int frame = i * S + s;
            if (frame < problem.k_s || frame > problem.k_e) continue;
            rows.push_back(((i - first) * S + s) * C);
        }
    const double mean0 = stats.mean.at(0), std0 = stats.std.at(0);
    const bool clamp = problem.clamp_negative;
    Tensor smoke(Shape{static_cast<int>(rows.size()), static_cast<int>(cells)});
    const auto& dv = dec.value();
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cells; ++c) {
            const double x = dv[static_cast<std::size_t>(rows[r]) * cells + c] * std0 + mean0;
            smoke[r * cells + c] = clamp ? std::max(x, 0.0) : x;
        }
    const Var smoke_var = ag::make_result(std::move(smoke), {dec}, [dec, rows, cells, std0, mean0, clamp](Node& self) {
        Tensor g(dec.shape());
        const auto& dv2 = dec.value();
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < cells; ++c) {
                const std::size_t src = static_cast<std::size_t>(rows[r]) * cells + c;
                if (clamp && dv2[src] * std0 + mean0 < 0.0) continue;
                g[src] = self.grad[r * cells + c] * std0;
            }
        dec.node()->accumulate(g);
    });
    const auto [o1, o2] = outlet_masks(p, beta);
    out.loss = smoke_fraction_loss(smoke_var, o1, o2, problem.targets, &out.fractions);
    return out;
}

void clear_parameter_grads(const LatentDynamics& model) {
    for (auto v : model.parameters()) v.zero_grad();
}

}  // namespace

DesignForward model_fractions(const LatentDynamics& model, const NormStats& stats, const BoundaryParams& p,
                              const DesignProblem& problem, double beta) {
    ag::NoGradGuard guard;
    auto g = design_graph(model, stats, p, problem, beta);
    return {g.fractions, std::move(g.latents)};
}

std::vector<double> projected_adam(std::vector<double> x, const LossGradFn& f, const ProjectFn& project, double lr,
                                   int steps,
                                   const std::function<void(int, const std::vector<double>&, double,
                                                            const std::vector<double>&)>& on_iter) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0), g(x.size(), 0.0);
    for (int it = 0; it < steps; ++it) {
        std::fill(g.begin(), g.end(), 0.0);
        const double loss = f(x, g);
        for (double gi : g)
            if (!std::isfinite(gi)) {
                std::ostringstream os;
                os << "projected_adam: non-finite gradient at iteration " << it;
                throw NonFiniteError(os.str());
            }
        if (on_iter) on_iter(it, x, loss, g);
        const double c1 = 1.0 - std::pow(b1, it + 1), c2 = 1.0 - std::pow(b2, it + 1);
        for (std::size_t k = 0; k < x.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
        x = project(x);
    }
    return x;
}

DesignResult optimize_boundary(const LatentDynamics& model, const NormStats& stats, const DesignProblem& problem,
                               const AnnealSchedule& sched) {
    problem.validate();
    sched.validate();
    if (sched.iters != problem.iters) throw InvalidArgument("optimize_boundary: schedule and problem disagree on iters");
    DesignResult res;
    res.p0 = problem.p0;
    const auto project = [&](const std::vector<double>& x) {
        return design_vector(project_boundary(with_design_vector(problem.p0, problem.free, x), problem.margin, problem.free),
                             problem.free);
    };
    int iter = 0;
    const auto f = [&](const std::vector<double>& x, std::vector<double>& grad) {
        const double beta = anneal_schedule(sched, iter);
        const BoundaryParams p = with_design_vector(problem.p0, problem.free, x);
        auto gf = design_graph(model, stats, p, problem, beta);
        gf.loss.backward();
        const Tensor g = gf.theta.grad();
        clear_parameter_grads(model);
        std::copy(g.vec().begin(), g.vec().end(), grad.begin());
        DesignIteration rec;
        rec.iter = iter;
        rec.beta = beta;
        rec.loss = gf.fractions.loss;
        rec.lower = gf.fractions.lower;
        rec.upper = gf.fractions.upper;
        rec.p = p.as_array();
        rec.grad = grad;
        res.history.push_back(std::move(rec));
        ++iter;
        return gf.fractions.loss;
    };
    try {
        const auto x = projected_adam(project(design_vector(problem.p0, problem.free)), f, project, problem.lr,
                                      problem.iters);
        res.p = with_design_vector(problem.p0, problem.free, x);
    } catch (const NonFiniteError&) {
        std::ostringstream os;
        os << "optimize_boundary: non-finite gradient at iteration " << (iter - 1);
        throw NonFiniteError(os.str());
    }
    if (problem.iters == 0) res.p = problem.p0;
    res.model = model_fractions(model, stats, res.p, problem, sched.beta1).fractions;
    return res;
}

json DesignResult::to_json() const {
    json hist = json::array();
    for (const auto& h : history)
        hist.push_back({{"iter", h.iter},
                        {"beta", h.beta},
                        {"loss", h.loss},
                        {"model_lower", h.lower},
                        {"model_upper", h.upper},
                        {"p", h.p},
                        {"grad", h.grad}});
    return {{"p0", p0.as_array()},
            {"p", p.as_array()},
            {"model_lower", model.lower},
            {"model_upper", model.upper},
            {"model_loss", model.loss},
            {"history", hist}};
}

DesignEvaluation evaluate_design(const BoundaryParams& p, const DesignProblem& problem, double model_lower) {
    p.validate();
    const auto traj = simulate_smoke2d(p, problem.smoke_init, problem.inflow_speed, problem.k_e + 1, problem.solver);
    const auto [o1, o2] = outlet_masks(p, 0.0);
    std::vector<std::vector<double>> frames(static_cast<std::size_t>(traj.n_t()));
    for (int t = 0; t < traj.n_t(); ++t) {
        const auto c = traj.channel(t, 0);
        frames[static_cast<std::size_t>(t)].assign(c.begin(), c.end());
    }
    const auto fr = smoke_fraction_objective(frames, o1, o2, problem.targets, problem.k_s, problem.k_e);
    DesignEvaluation ev;
    ev.solver_lower = fr.lower;
    ev.solver_upper = fr.upper;
    double tl = 0.0, tu = 0.0;
    const auto& el = traj.series.at("exit_lower");
    const auto& eu = traj.series.at("exit_upper");
    for (int t = problem.k_s; t <= problem.k_e; ++t) {
        tl += el.at(static_cast<std::size_t>(t));
        tu += eu.at(static_cast<std::size_t>(t));
    }
    const double K = std::max(tl + tu, kFractionFloor);
    ev.tally_lower = tl / K;
    ev.tally_upper = tu / K;
    ev.solver_error = std::abs(ev.solver_lower - problem.targets[0]);
    if (model_lower >= 0.0) {
        ev.model_lower = model_lower;
        ev.model_error = std::abs(model_lower - problem.targets[0]);
        ev.gap = std::abs(model_lower - ev.solver_lower);
    }
    return ev;
}

json DesignEvaluation::to_json() const {
    return {{"solver_lower", solver_lower}, {"solver_upper", solver_upper}, {"tally_lower", tally_lower},
            {"tally_upper", tally_upper},   {"solver_error", solver_error}, {"model_lower", model_lower},
            {"model_error", model_error},   {"gap", gap}};
}

DesignStart sample_design_start(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double s = n / 128.0;
    std::uniform_int_distribution<int> inlet(-1, 1), outlet(44, 50), sx(0, 1), sy(-1, 1);
    DesignStart d;
    d.p.n = n;
    d.p.wall = std::max(1, n / 16);
    d.p.width = n / 8.0;
    d.p.inlet_y = n / 2.0 + s * inlet(rng);
    d.p.outlet_lo_y = s * outlet(rng);
    d.p.outlet_hi_y = 0.75 * n;
    d.p.validate();
    d.blob_x = d.p.wall + 2.0 + sx(rng);
    d.blob_y = d.p.inlet_y + sy(rng);
    return d;
}

}  // namespace lepde
