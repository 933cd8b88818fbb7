#include "lepde/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "lepde/error.hpp"

namespace lepde {

namespace fs = std::filesystem;
using ag::Var;

std::string to_string(LossKernel k) {
    switch (k) {
        case LossKernel::MSE: return "mse";
        case LossKernel::RMSE: return "rmse";
        case LossKernel::L2: return "l2";
    }
    return "mse";
}

LossKernel loss_kernel_from_string(const std::string& s) {
    if (s == "mse") return LossKernel::MSE;
    if (s == "rmse") return LossKernel::RMSE;
    if (s == "l2") return LossKernel::L2;
    throw InvalidArgument("unknown loss kernel '" + s + "'");
}

double LossWeights::alpha_m(int m) const {
    if (m < 1) throw InvalidArgument("alpha_m: m is 1-based");
    if (alpha.empty()) return m == 1 ? 1.0 : 0.1;
    if (m > static_cast<int>(alpha.size())) throw InvalidArgument("alpha_m: no weight for horizon " + std::to_string(m));
    return alpha[m - 1];
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("TrainConfig: " + m); };
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (schedule != "cosine" && schedule != "constant") fail("schedule must be cosine or constant");
    if (horizon < 1) fail("horizon must be >= 1");
    if (stride < 0) fail("stride must be >= 0");
    if (!weights.alpha.empty() && static_cast<int>(weights.alpha.size()) != horizon)
        fail("alpha must have one weight per horizon step");
    for (double a : weights.alpha)
        if (a < 0.0) fail("alpha weights must be >= 0");
    if (!(mask_beta > 0.0)) fail("mask_beta must be positive");
}

json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"schedule", schedule},
            {"horizon", horizon},
            {"stride", stride},
            {"kernel", to_string(kernel)},
            {"seed", seed},
            {"alpha", weights.alpha},
            {"enable_multistep", weights.enable_multistep},
            {"enable_recons", weights.enable_recons},
            {"enable_consistency", weights.enable_consistency},
            {"consistency_floor", consistency_floor},
            {"mask_beta", mask_beta},
            {"verbose", verbose}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    try {
        c.epochs = j.at("epochs").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.lr = j.at("lr").get<double>();
        c.schedule = j.at("schedule").get<std::string>();
        c.horizon = j.at("horizon").get<int>();
        c.stride = j.at("stride").get<int>();
        c.kernel = loss_kernel_from_string(j.at("kernel").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.weights.alpha = j.at("alpha").get<std::vector<double>>();
        c.weights.enable_multistep = j.at("enable_multistep").get<bool>();
        c.weights.enable_recons = j.at("enable_recons").get<bool>();
        c.weights.enable_consistency = j.at("enable_consistency").get<bool>();
        c.consistency_floor = j.at("consistency_floor").get<double>();
        c.mask_beta = j.at("mask_beta").get<double>();
        c.verbose = j.at("verbose").get<bool>();
    } catch (const json::exception& e) {
        throw SchemaMismatch(std::string("train config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Objective

LossBreakdown ObjectiveTerms::values() const {
    return {total.value().item(), multi_step.value().item(), recons.value().item(), consistency.value().item()};
}

namespace {

Var kernel_loss(LossKernel k, const Var& pred, const Var& target) {
    switch (k) {
        case LossKernel::MSE: return ag::mse(pred, target);
        case LossKernel::RMSE: return ag::rmse(pred, target);
        case LossKernel::L2: return ag::relative_l2(pred, target);
    }
    return ag::mse(pred, target);
}

}  // namespace

ObjectiveTerms objective_graph(const LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg) {
    const int B = batch.size();
    const int M = batch.horizon();
    if (M != cfg.horizon)
        throw InvalidArgument("objective: batch horizon " + std::to_string(M) + " != configured " +
                              std::to_string(cfg.horizon));

    // Inputs and every target bundle go through the encoder in one call,
    // ordered horizon-major: rows [m B, (m + 1) B) hold U^{k+m}.
    Shape bundle(batch.inputs.shape().begin() + 1, batch.inputs.shape().end());
    const std::size_t bsz = shape_numel(bundle);
    Shape all_shape = bundle;
    all_shape.insert(all_shape.begin(), (M + 1) * B);
    Tensor all(all_shape);
    std::copy(batch.inputs.vec().begin(), batch.inputs.vec().end(), all.vec().begin());
    for (int m = 1; m <= M; ++m)
        for (int b = 0; b < B; ++b) {
            const double* src = batch.targets.data() + (static_cast<std::size_t>(b) * M + (m - 1)) * bsz;
            std::copy_n(src, bsz, all.data() + (static_cast<std::size_t>(m) * B + b) * bsz);
        }
    const Var states = ag::constant(std::move(all));
    const Var encoded = model.encode(states);
    const Var z_p = model.encode_static(ag::constant(batch.params));

    std::vector<Var> z{ag::slice_rows(encoded, 0, B)};
    for (int m = 1; m <= M; ++m) z.push_back(model.evolve(z.back(), z_p));

    const Var decoded = model.decode(ag::stack_rows(z));

    ObjectiveTerms t;
    t.recons = kernel_loss(cfg.kernel, ag::slice_rows(decoded, 0, B), ag::slice_rows(states, 0, B));
    std::vector<Var> multi, cons;
    for (int m = 1; m <= M; ++m) {
        const Var target = ag::slice_rows(states, m * B, B);
        multi.push_back(ag::scale(kernel_loss(cfg.kernel, ag::slice_rows(decoded, m * B, B), target),
                                  cfg.weights.alpha_m(m)));
        cons.push_back(ag::relative_sq_error(z[m], ag::slice_rows(encoded, m * B, B), cfg.consistency_floor));
    }
    t.multi_step = ag::sum_scalars(multi);
    t.consistency = ag::sum_scalars(cons);
    std::vector<Var> enabled;
    if (cfg.weights.enable_multistep) enabled.push_back(t.multi_step);
    if (cfg.weights.enable_recons) enabled.push_back(t.recons);
    if (cfg.weights.enable_consistency) enabled.push_back(t.consistency);
    t.total = enabled.empty() ? ag::constant(Tensor::scalar(0.0)) : ag::sum_scalars(enabled);
    return t;
}

LossBreakdown compute_objective(const LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg) {
    ag::NoGradGuard guard;
    return objective_graph(model, batch, cfg).values();
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& node = params_[k].node();
        if (node->grad.empty()) continue;
        auto& w = node->value.vec();
        const auto& g = node->grad.vec();
        auto& m = m_[k].vec();
        auto& v = v_[k].vec();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
    if (cfg.schedule == "constant" || cfg.epochs == 0) return cfg.lr;
    return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
}

// ---------------------------------------------------------------------------
// Training

namespace {

LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
    a.total += b.total;
    a.multi_step += b.multi_step;
    a.recons += b.recons;
    a.consistency += b.consistency;
    return a;
}

LossBreakdown scaled(LossBreakdown a, double s) {
    a.total *= s;
    a.multi_step *= s;
    a.recons *= s;
    a.consistency *= s;
    return a;
}

int model_bundle(const LatentDynamics& model) { return model.state_shape().at(0); }

std::vector<std::vector<double>> all_statics(const Dataset& ds, double beta) {
    std::vector<std::vector<double>> out;
    out.reserve(ds.trajectories.size());
    for (const auto& t : ds.trajectories) out.push_back(static_input(t, beta));
    return out;
}

}  // namespace

LossBreakdown evaluate_split(const LatentDynamics& model, const Dataset& ds, const std::vector<WindowIndex>& windows,
                             const TrainConfig& cfg, const NormStats& stats,
                             const std::vector<std::vector<double>>& statics) {
    LossBreakdown sum;
    if (windows.empty()) return sum;
    const int S = model_bundle(model);
    for (std::size_t off = 0; off < windows.size(); off += cfg.batch_size) {
        const std::size_t n = std::min<std::size_t>(cfg.batch_size, windows.size() - off);
        const auto batch =
            gather_batch(ds, std::span(windows).subspan(off, n), S, cfg.horizon, &stats, statics);
        sum += scaled(compute_objective(model, batch, cfg), static_cast<double>(n));
    }
    return scaled(sum, 1.0 / static_cast<double>(windows.size()));
}

TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    const int S = model.config().bundle;
    const int stride = cfg.stride > 0 ? cfg.stride : S;
    TrainResult result;
    result.stats = compute_norm_stats(ds, ds.meta.splits.train);
    if (cfg.epochs == 0) return result;

    const auto statics = all_statics(ds, cfg.mask_beta);
    auto train_windows = make_windows(ds, ds.meta.splits.train, S, cfg.horizon, stride);
    const auto val_split = ds.meta.splits.val.empty() ? ds.meta.splits.train : ds.meta.splits.val;
    const auto val_windows = make_windows(ds, val_split, S, cfg.horizon, stride);
    if (train_windows.empty()) throw InvalidArgument("train: no training windows (trajectories too short?)");

    Adam opt(model.parameters(), cfg.lr);
    std::mt19937_64 rng(cfg.seed);
    std::vector<double> best_params = model.flat_parameters();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg, epoch);
        opt.set_lr(lr);
        std::shuffle(train_windows.begin(), train_windows.end(), rng);
        LossBreakdown train_sum;
        for (std::size_t off = 0, bi = 0; off < train_windows.size(); off += cfg.batch_size, ++bi) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, train_windows.size() - off);
            const auto batch = gather_batch(ds, std::span(train_windows).subspan(off, n), S, cfg.horizon,
                                            &result.stats, statics);
            opt.zero_grad();
            const auto terms = objective_graph(model, batch, cfg);
            const auto vals = terms.values();
            if (!std::isfinite(vals.total)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << ", batch " << bi;
                throw NonFiniteError(os.str());
            }
            terms.total.backward();
            opt.step();
            train_sum += scaled(vals, static_cast<double>(n));
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train = scaled(train_sum, 1.0 / static_cast<double>(train_windows.size()));
        rec.val = evaluate_split(model, ds, val_windows, cfg, result.stats, statics);
        result.history.push_back(rec);
        if (result.best_epoch < 0 || rec.val.total < result.best_val) {
            result.best_epoch = epoch;
            result.best_val = rec.val.total;
            best_params = model.flat_parameters();
        }
        if (cfg.verbose)
            std::cerr << "epoch " << epoch << " lr " << lr << " train " << rec.train.total << " val " << rec.val.total
                      << "\n";
    }
    model.set_flat_parameters(best_params);
    return result;
}

std::vector<double> train_on_batch(LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg,
                                   int steps) {
    Adam opt(model.parameters(), cfg.lr);
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
        opt.zero_grad();
        const auto terms = objective_graph(model, batch, cfg);
        const double v = terms.total.value().item();
        if (!std::isfinite(v)) throw NonFiniteError("train_on_batch: non-finite loss at step " + std::to_string(s));
        losses.push_back(v);
        terms.total.backward();
        opt.step();
    }
    return losses;
}

void write_history_csv(const std::vector<EpochRecord>& history, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,lr,train_total,train_multi_step,train_recons,train_consistency,val_total,val_multi_step,val_recons,"
           "val_consistency\n";
    out.precision(17);
    for (const auto& r : history)
        out << r.epoch << "," << r.lr << "," << r.train.total << "," << r.train.multi_step << "," << r.train.recons
            << "," << r.train.consistency << "," << r.val.total << "," << r.val.multi_step << "," << r.val.recons
            << "," << r.val.consistency << "\n";
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport gradient_check(LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg, double eps,
                               int coordinates, std::uint64_t seed, double floor) {
    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();
    const auto terms = objective_graph(model, batch, cfg);
    terms.total.backward();

    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k].value().numel(); ++i) all.emplace_back(k, i);
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    if (static_cast<int>(all.size()) > coordinates) all.resize(static_cast<std::size_t>(coordinates));

    GradCheckReport rep;
    double norm2 = 0.0;
    for (const auto& p : params) {
        const Tensor g = p.grad();
        for (double v : g.vec()) norm2 += v * v;
    }
    rep.analytic_norm = std::sqrt(norm2);
    for (const auto& [k, i] : all) {
        const double a = params[k].grad()[i];
        double& w = params[k].node()->value[i];
        const double w0 = w;
        w = w0 + eps;
        const double lp = compute_objective(model, batch, cfg).total;
        w = w0 - eps;
        const double lm = compute_objective(model, batch, cfg).total;
        w = w0;
        const double n = (lp - lm) / (2.0 * eps);
        rep.analytic.push_back(a);
        rep.numeric.push_back(n);
        const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
    rep.coordinates = static_cast<int>(all.size());
    for (auto& p : params) p.zero_grad();
    return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json read_checkpoint_json(const fs::path& dir) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) throw IoError("cannot open " + (dir / "checkpoint.json").string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaMismatch(std::string("checkpoint.json: ") + e.what());
    }
    const int version = j.value("format_version", -1);
    if (version != kCheckpointFormatVersion)
        throw VersionMismatch("checkpoint format_version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));
    return j;
}

std::vector<double> read_params_bin(const fs::path& dir, std::size_t expected) {
    const auto path = dir / "params.bin";
    if (!fs::exists(path)) throw IoError("missing " + path.string());
    const auto size = fs::file_size(path);
    if (size != expected * sizeof(double))
        throw TruncatedPayload(path.string() + ": " + std::to_string(size) + " bytes, expected " +
                               std::to_string(expected * sizeof(double)));
    std::vector<double> flat(expected);
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(size));
    if (!in) throw TruncatedPayload(path.string());
    return flat;
}

}  // namespace

void save_checkpoint(const Model& model, const NormStats& stats, const json& metadata, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const auto& cfg = model.config();
    json j = {{"format_version", kCheckpointFormatVersion},
              {"model", cfg.to_json()},
              {"config_hash", std::to_string(cfg.hash())},
              {"parameter_count", model.counts().total()},
              {"parameter_order", model.parameter_names()},
              {"norm_stats", stats.to_json()},
              {"training", metadata}};
    {
        std::ofstream out(dir / "checkpoint.json");
        if (!out) throw IoError("cannot write " + (dir / "checkpoint.json").string());
        out << j.dump(2) << "\n";
    }
    const auto flat = model.flat_parameters();
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
    bin.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!bin) throw IoError("write failed: params.bin");
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const json j = read_checkpoint_json(dir);
    ModelConfig cfg = ModelConfig::from_json(j.at("model"));
    if (j.at("config_hash").get<std::string>() != std::to_string(cfg.hash()))
        throw ConfigHashMismatch("checkpoint config hash does not match its stored model config");
    Model model(cfg, 0);
    model.set_flat_parameters(read_params_bin(dir, model.counts().total()));
    return {std::move(model), NormStats::from_json(j.at("norm_stats")), j.value("training", json::object())};
}

NormStats load_checkpoint_into(Model& model, const fs::path& dir) {
    const json j = read_checkpoint_json(dir);
    const std::string stored = j.at("config_hash").get<std::string>();
    if (stored != std::to_string(model.config().hash()))
        throw ConfigHashMismatch("checkpoint config hash " + stored + " does not match model config hash " +
                                 std::to_string(model.config().hash()));
    model.set_flat_parameters(read_params_bin(dir, model.counts().total()));
    return NormStats::from_json(j.at("norm_stats"));
}

}  // namespace lepde
