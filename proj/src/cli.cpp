#include "lepde/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "lepde/error.hpp"
#include "lepde/inverse.hpp"
#include "lepde/rollout.hpp"
#include "lepde/training.hpp"

namespace fs = std::filesystem;

namespace lepde::cli {

namespace {

json model_schema() {
    // null leaves are derived from the dataset
    return {{"spatial_dims", nullptr}, {"grid", nullptr},           {"in_channels", nullptr},
            {"bundle", 25},            {"latent_dim", 128},         {"channels", 32},
            {"depth", 4},              {"static_kind", "identity"}, {"static_input_dim", nullptr},
            {"static_dim", nullptr},   {"static_depth", 0}};
}

json train_schema() {
    json t = TrainConfig{}.to_json();
    t.erase("seed");
    return t;
}

json eval_schema() {
    return {{"split", "test"},
            {"start_frame", nullptr},
            {"frames", -1},
            {"mask_beta", nullptr},
            {"benchmark_repeats", 5},
            {"benchmark_warmups", 2}};
}

}  // namespace

json default_config(const std::string& command) {
    if (command == "generate") {
        const GenerateConfig g;
        return {{"seed", 0},
                {"out", ""},
                {"pde", g.pde},
                {"scenario", g.scenario},
                {"n_train", g.n_train},
                {"n_val", g.n_val},
                {"n_test", g.n_test},
                {"burgers", {{"n_x", g.n_x}, {"fine_n_x", g.fine_n_x}, {"n_t", g.n_t}, {"t_end", g.t_end},
                             {"length", g.length}}},
                {"ns", {{"n", g.ns_n}, {"x_factor", g.ns_x_factor}, {"nu", g.nu}, {"dt", g.ns_dt}, {"n_t", g.ns_n_t}}},
                {"smoke", {{"n", g.smoke_n},
                           {"n_t", g.smoke_n_t},
                           {"frame_dt", g.smoke_frame_dt},
                           {"inflow_speed", g.inflow_speed},
                           {"inlet", {g.inlet_lo, g.inlet_hi}},
                           {"outlet_lo", {g.outlet_lo_lo, g.outlet_lo_hi}},
                           {"outlet_hi_y", g.outlet_hi_y},
                           {"blob_radius", g.blob_radius},
                           {"blob_amount", g.blob_amount}}},
                {"noise", {{"amplitude", 0.0}, {"seed", 0}}}};
    }
    if (command == "train") {
        return {{"seed", 0},           {"dataset", ""},          {"run_dir", ""},
                {"model", model_schema()}, {"train", train_schema()}, {"evaluate", eval_schema()}};
    }
    if (command == "evaluate") {
        json j = eval_schema();
        j["run"] = "";
        j["checkpoint"] = "";
        j["dataset"] = "";
        j["run_dir"] = "";
        return j;
    }
    if (command == "rollout") {
        return {{"checkpoint", ""},   {"dataset", ""},      {"run_dir", ""},         {"trajectory", 0},
                {"start_frame", nullptr}, {"steps", nullptr}, {"decode_every", 1}, {"mask_beta", nullptr}};
    }
    if (command == "invert") {
        const DesignProblem d;
        const AnnealSchedule a;
        return {{"seed", 0},
                {"checkpoint", ""},
                {"run_dir", ""},
                {"starts", 10},
                {"iters", a.iters},
                {"beta0", a.beta0},
                {"beta1", a.beta1},
                {"lr", d.lr},
                {"targets", d.targets},
                {"k_s", 20},
                {"k_e", 39},
                {"free", d.free},
                {"inflow_speed", d.inflow_speed},
                {"frame_dt", 2.0},
                {"jacobi_iterations", d.solver.jacobi_iterations},
                {"blob_radius", 2.5},
                {"blob_amount", 1.0},
                {"clamp_negative", d.clamp_negative}};
    }
    if (command == "benchmark") {
        json m = ModelConfig{}.to_json();
        return {{"seed", 0},  {"checkpoint", ""}, {"run_dir", ""}, {"model", m},
                {"steps", 200}, {"repeats", 5},     {"warmups", 2}};
    }
    throw InvalidArgument("unknown command '" + command + "'");
}

namespace {

bool compatible(const json& def, const json& val) {
    if (def.is_null() || val.is_null()) return true;
    if (def.is_number()) return val.is_number();
    if (def.is_boolean()) return val.is_boolean();
    if (def.is_string()) return val.is_string();
    if (def.is_array()) return val.is_array();
    if (def.is_object()) return val.is_object();
    return false;
}

}  // namespace

void merge_checked(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw SchemaMismatch("config" + (where.empty() ? "" : " at '" + where + "'") + " must be an object");
    for (const auto& [key, val] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw SchemaMismatch("unknown config key '" + path + "'");
        auto& slot = base[key];
        if (slot.is_object() && !val.is_null()) {
            merge_checked(slot, val, path);
            continue;
        }
        if (!compatible(slot, val)) throw SchemaMismatch("config key '" + path + "' has the wrong type");
        slot = val;
    }
}

void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw SchemaMismatch("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    json probe = cfg;
    // a string-typed slot keeps the raw text even if it parses as JSON
    const json* slot = &cfg;
    for (const auto& p : parts) {
        if (!slot->is_object() || !slot->contains(p)) throw SchemaMismatch("unknown config key '" + key + "'");
        slot = &(*slot)[p];
    }
    if (slot->is_string() && !value.is_string()) {
        patch = raw;
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    }
    merge_checked(probe, patch);
    cfg = std::move(probe);
}

json resolve_config(const std::string& command, const json& file_cfg, const std::vector<std::string>& overrides,
                    const char* env_seed) {
    json cfg = default_config(command);
    if (!file_cfg.is_null()) merge_checked(cfg, file_cfg);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (env_seed && cfg.contains("seed")) {
        char* end = nullptr;
        const unsigned long long s = std::strtoull(env_seed, &end, 10);
        if (end == env_seed || *end != '\0') throw SchemaMismatch("LEPDE_SEED must be a non-negative integer");
        cfg["seed"] = s;
    }
    return cfg;
}

GenerateConfig generate_config_from_json(const json& cfg) {
    GenerateConfig g;
    try {
        g.pde = cfg.at("pde").get<std::string>();
        g.scenario = cfg.at("scenario").get<std::string>();
        g.n_train = cfg.at("n_train").get<int>();
        g.n_val = cfg.at("n_val").get<int>();
        g.n_test = cfg.at("n_test").get<int>();
        g.seed = cfg.at("seed").get<std::uint64_t>();
        const auto& b = cfg.at("burgers");
        g.n_x = b.at("n_x").get<int>();
        g.fine_n_x = b.at("fine_n_x").get<int>();
        g.n_t = b.at("n_t").get<int>();
        g.t_end = b.at("t_end").get<double>();
        g.length = b.at("length").get<double>();
        const auto& n = cfg.at("ns");
        g.ns_n = n.at("n").get<int>();
        g.ns_x_factor = n.at("x_factor").get<int>();
        g.nu = n.at("nu").get<double>();
        g.ns_dt = n.at("dt").get<double>();
        g.ns_n_t = n.at("n_t").get<int>();
        const auto& s = cfg.at("smoke");
        g.smoke_n = s.at("n").get<int>();
        g.smoke_n_t = s.at("n_t").get<int>();
        g.smoke_frame_dt = s.at("frame_dt").get<double>();
        g.inflow_speed = s.at("inflow_speed").get<double>();
        const auto in = s.at("inlet").get<std::vector<double>>();
        const auto out = s.at("outlet_lo").get<std::vector<double>>();
        if (in.size() != 2 || out.size() != 2) throw SchemaMismatch("smoke.inlet and smoke.outlet_lo are [lo, hi]");
        g.inlet_lo = in[0];
        g.inlet_hi = in[1];
        g.outlet_lo_lo = out[0];
        g.outlet_lo_hi = out[1];
        g.outlet_hi_y = s.at("outlet_hi_y").get<double>();
        g.blob_radius = s.at("blob_radius").get<double>();
        g.blob_amount = s.at("blob_amount").get<double>();
    } catch (const json::exception& e) {
        throw SchemaMismatch(std::string("generate config: ") + e.what());
    }
    return g;
}

namespace {

void write_json(const json& j, const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("write failed: " + p.string());
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot open " + p.string());
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw SchemaMismatch("not valid JSON: " + p.string());
    return j;
}

std::string csv_cell(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object()) flatten(v, key, out);
        else if (!v.is_array()) out.emplace_back(key, csv_cell(v));
    }
}

class RunLog {
public:
    explicit RunLog(const fs::path& dir) : file_(dir / "log.txt") {
        if (!file_) throw IoError("cannot write " + (dir / "log.txt").string());
    }
    void operator()(const std::string& msg) {
        std::cout << msg << '\n';
        file_ << msg << '\n';
        file_.flush();
    }

private:
    std::ofstream file_;
};

fs::path make_run_dir(const json& cfg, const std::string& key, const std::string& command) {
    std::string dir = cfg.at(key).get<std::string>();
    if (dir.empty()) throw SchemaMismatch(command + ": '" + key + "' is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    return dir;
}

fs::path existing_path(const json& cfg, const std::string& key, const std::string& command) {
    const std::string p = cfg.at(key).get<std::string>();
    if (p.empty()) throw SchemaMismatch(command + ": '" + key + "' is required");
    if (!fs::exists(p)) throw IoError(command + ": " + key + " not found: " + p);
    return p;
}

std::vector<int> split_ids(const Dataset& ds, const std::string& name) {
    const auto& ids = ds.meta.splits.get(name);
    if (ids.empty()) throw SchemaMismatch("split '" + name + "' is empty");
    return ids;
}

// Fills derived (null) evaluation fields.
void resolve_eval(json& ev, const Dataset& ds, int S, double trained_beta) {
    if (ev.at("start_frame").is_null()) ev["start_frame"] = ds.meta.state_shape.at(0) >= 250 ? 50 : S;
    if (ev.at("mask_beta").is_null()) ev["mask_beta"] = trained_beta;
}

EvalOptions eval_options(const json& ev) {
    EvalOptions o;
    o.start_frame = ev.at("start_frame").get<int>();
    o.frames = ev.at("frames").get<int>();
    o.mask_beta = ev.at("mask_beta").get<double>();
    o.benchmark_repeats = ev.at("benchmark_repeats").get<int>();
    o.benchmark_warmups = ev.at("benchmark_warmups").get<int>();
    return o;
}

json eval_report(const EvalReport& rep, const std::string& split) {
    json j = rep.to_json();
    j["split"] = split;
    j["rows"] = j.at("per_trajectory");
    j.erase("per_trajectory");
    return j;
}

double checkpoint_mask_beta(const Checkpoint& ck) {
    if (ck.metadata.contains("train") && ck.metadata["train"].contains("mask_beta"))
        return ck.metadata["train"]["mask_beta"].get<double>();
    return TrainConfig{}.mask_beta;
}

// ---------------------------------------------------------------------------

int cmd_generate(json cfg) {
    const fs::path out = make_run_dir(cfg, "out", "generate");
    const GenerateConfig g = generate_config_from_json(cfg);
    write_json(cfg, out / "generate_config.json");
    RunLog log(out);
    const auto t0 = std::chrono::steady_clock::now();
    Dataset ds = generate_dataset(g);
    const double amp = cfg.at("noise").at("amplitude").get<double>();
    if (amp > 0.0) ds = inject_fixed_noise(ds, amp, cfg.at("noise").at("seed").get<std::uint64_t>());
    write_dataset(ds, out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << "generated " << ds.size() << " " << g.pde << " trajectories of shape " << shape_str(ds.meta.state_shape)
       << " in " << secs << " s -> " << out.string();
    log(os.str());
    return kExitOk;
}

int cmd_train(json cfg) {
    const fs::path data_dir = existing_path(cfg, "dataset", "train");
    const fs::path run = make_run_dir(cfg, "run_dir", "train");
    const Dataset ds = read_dataset(data_dir);
    const auto seed = cfg.at("seed").get<std::uint64_t>();

    json tj = cfg.at("train");
    tj["seed"] = seed;
    const TrainConfig tc = TrainConfig::from_json(tj);
    tc.validate();

    json& mj = cfg["model"];
    const Shape& st = ds.meta.state_shape;
    if (mj["spatial_dims"].is_null()) mj["spatial_dims"] = static_cast<int>(st.size()) - 2;
    if (mj["grid"].is_null()) mj["grid"] = Shape(st.begin() + 2, st.end());
    if (mj["in_channels"].is_null()) mj["in_channels"] = st.at(1);
    if (mj["static_input_dim"].is_null())
        mj["static_input_dim"] = static_cast<int>(static_input(ds.at(0), tc.mask_beta).size());
    if (mj["static_dim"].is_null())
        mj["static_dim"] = mj["static_kind"] == "identity" ? mj["static_input_dim"].get<int>() : 16;
    const ModelConfig mc = ModelConfig::from_json(mj);
    mc.validate();
    resolve_eval(cfg["evaluate"], ds, mc.bundle, tc.mask_beta);
    write_json(cfg, run / "config.json");

    RunLog log(run);
    Model model = build_model(mc, seed);
    log("model parameters: " + std::to_string(model.counts().total()));
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult tr = train(model, ds, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& h : tr.history) {
        std::ostringstream os;
        os << "epoch " << h.epoch << " lr " << h.lr << " train " << h.train.total << " val " << h.val.total;
        log(os.str());
    }
    log("training took " + std::to_string(secs) + " s; best epoch " + std::to_string(tr.best_epoch));
    write_history_csv(tr.history, run / "history.csv");
    save_checkpoint(model, tr.stats, {{"dataset", data_dir.string()}, {"train", tc.to_json()}}, run / "checkpoint");

    const json& ev = cfg.at("evaluate");
    const std::string split = ev.at("split").get<std::string>();
    const auto rep = evaluate_model(model, ds, split_ids(ds, split), tr.stats, eval_options(ev));
    emit_report(eval_report(rep, split), run / "report");
    std::ostringstream os;
    os << split << " accumulated error " << rep.accumulated_error << " (persistence " << rep.persistence_error
       << "), relative L2 " << rep.relative_l2;
    log(os.str());
    return kExitOk;
}

int cmd_evaluate(json cfg) {
    if (!cfg.at("run").get<std::string>().empty()) {
        const fs::path run = existing_path(cfg, "run", "evaluate");
        const json rc = read_json(run / "config.json");
        if (cfg.at("checkpoint").get<std::string>().empty()) cfg["checkpoint"] = (run / "checkpoint").string();
        if (cfg.at("dataset").get<std::string>().empty()) cfg["dataset"] = rc.at("dataset");
        if (cfg.at("run_dir").get<std::string>().empty()) cfg["run_dir"] = (run / "eval").string();
        if (rc.contains("evaluate"))
            for (const auto& [k, v] : rc.at("evaluate").items())
                if (cfg.at(k).is_null()) cfg[k] = v;
    }
    const fs::path ck_dir = existing_path(cfg, "checkpoint", "evaluate");
    const fs::path data_dir = existing_path(cfg, "dataset", "evaluate");
    const fs::path out = make_run_dir(cfg, "run_dir", "evaluate");
    const Checkpoint ck = load_checkpoint(ck_dir);
    const Dataset ds = read_dataset(data_dir);
    resolve_eval(cfg, ds, ck.model.config().bundle, checkpoint_mask_beta(ck));
    write_json(cfg, out / "config.json");
    RunLog log(out);
    const std::string split = cfg.at("split").get<std::string>();
    const auto rep = evaluate_model(ck.model, ds, split_ids(ds, split), ck.stats, eval_options(cfg));
    emit_report(eval_report(rep, split), out / "report");
    std::ostringstream os;
    os << split << " accumulated error " << rep.accumulated_error << " (persistence " << rep.persistence_error
       << "), relative L2 " << rep.relative_l2 << ", t_full " << rep.runtime.t_full << " s, t_evo " << rep.runtime.t_evo
       << " s";
    log(os.str());
    return kExitOk;
}

int cmd_rollout(json cfg) {
    const fs::path ck_dir = existing_path(cfg, "checkpoint", "rollout");
    const fs::path data_dir = existing_path(cfg, "dataset", "rollout");
    const fs::path out = make_run_dir(cfg, "run_dir", "rollout");
    const Checkpoint ck = load_checkpoint(ck_dir);
    const Dataset ds = read_dataset(data_dir);
    const int S = ck.model.config().bundle;
    const int n_t = ds.meta.state_shape.at(0);
    if (cfg.at("mask_beta").is_null()) cfg["mask_beta"] = checkpoint_mask_beta(ck);
    if (cfg.at("start_frame").is_null()) cfg["start_frame"] = n_t >= 250 ? 50 : S;
    const int start = cfg.at("start_frame").get<int>();
    if (cfg.at("steps").is_null()) cfg["steps"] = (n_t - start) / S;
    write_json(cfg, out / "config.json");
    RunLog log(out);

    const int ti = cfg.at("trajectory").get<int>();
    const int steps = cfg.at("steps").get<int>();
    const int every = cfg.at("decode_every").get<int>();
    if (start < S) throw InvalidArgument("rollout: start_frame must leave room for the input bundle");
    const auto& traj = ds.at(ti);
    const Tensor u0 = frames_tensor(traj, start - S, S, &ck.stats);
    const auto st = static_input(traj, cfg.at("mask_beta").get<double>());
    const auto rep = rollout(ck.model, u0, Tensor(Shape{static_cast<int>(st.size())}, st), steps, every);

    json rows = json::array();
    for (std::size_t k = 0; k < rep.decoded_steps.size(); ++k) {
        const int i = rep.decoded_steps[k];
        const int frame = start + (i - 1) * S;
        Shape fs_ = traj.shape;
        fs_[0] = S;
        Tensor pred(fs_);
        const std::size_t sz = pred.numel();
        std::copy_n(rep.predictions.data() + k * sz, sz, pred.data());
        ck.stats.invert(pred, 1);
        json row = {{"step", i}, {"first_frame", frame}};
        if (frame + S <= n_t) {
            const Tensor gt = frames_tensor(traj, frame, S);
            row["accumulated_error"] = accumulated_error(pred, gt);
            row["relative_l2"] = relative_l2(pred, gt);
        }
        rows.push_back(row);
    }
    json report = {{"trajectory", ti},
                   {"start_frame", start},
                   {"steps", steps},
                   {"latent_dim", ck.model.latent_dim()},
                   {"prediction_shape", rep.predictions.shape()},
                   {"rows", rows}};
    std::ofstream bin(out / "predictions.bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + (out / "predictions.bin").string());
    bin.write(reinterpret_cast<const char*>(rep.predictions.data()),
              static_cast<std::streamsize>(rep.predictions.numel() * sizeof(double)));
    emit_report(report, out / "rollout");
    log("rolled out " + std::to_string(steps) + " latent steps of trajectory " + std::to_string(ti));
    return kExitOk;
}

int cmd_invert(json cfg) {
    const fs::path ck_dir = existing_path(cfg, "checkpoint", "invert");
    const fs::path out = make_run_dir(cfg, "run_dir", "invert");
    const Checkpoint ck = load_checkpoint(ck_dir);
    write_json(cfg, out / "config.json");
    RunLog log(out);
    const auto& mc = ck.model.config();
    if (mc.spatial_dims != 2 || mc.grid.at(0) != mc.grid.at(1)) throw InvalidArgument("invert: needs a square 2D model");
    const int n = mc.grid[0];

    AnnealSchedule sched;
    sched.beta0 = cfg.at("beta0").get<double>();
    sched.beta1 = cfg.at("beta1").get<double>();
    sched.iters = cfg.at("iters").get<int>();
    const auto seed = cfg.at("seed").get<std::uint64_t>();
    json rows = json::array();
    std::vector<double> model_err, solver_err;
    for (int k = 0; k < cfg.at("starts").get<int>(); ++k) {
        const DesignStart start = sample_design_start(n, seed + static_cast<std::uint64_t>(k));
        DesignProblem prob;
        prob.p0 = start.p;
        prob.targets = cfg.at("targets").get<std::array<double, 2>>();
        prob.k_s = cfg.at("k_s").get<int>();
        prob.k_e = cfg.at("k_e").get<int>();
        prob.free = cfg.at("free").get<DesignMask>();
        prob.inflow_speed = cfg.at("inflow_speed").get<double>();
        prob.solver.frame_dt = cfg.at("frame_dt").get<double>();
        prob.solver.jacobi_iterations = cfg.at("jacobi_iterations").get<int>();
        prob.smoke_init = smoke_blob(n, start.blob_x, start.blob_y, cfg.at("blob_radius").get<double>(),
                                     cfg.at("blob_amount").get<double>());
        prob.lr = cfg.at("lr").get<double>();
        prob.iters = sched.iters;
        prob.clamp_negative = cfg.at("clamp_negative").get<bool>();
        const auto res = optimize_boundary(ck.model, ck.stats, prob, sched);
        const auto ev0 = evaluate_design(prob.p0, prob);
        const auto ev = evaluate_design(res.p, prob, res.model.lower);
        json j = res.to_json();
        j["blob"] = {start.blob_x, start.blob_y};
        j["initial_evaluation"] = ev0.to_json();
        j["evaluation"] = ev.to_json();
        write_json(j, out / ("design_" + std::to_string(k) + ".json"));
        const auto p0 = prob.p0.as_array(), p = res.p.as_array();
        rows.push_back({{"start", k},
                        {"inlet_y0", p0[0]},
                        {"outlet_lo_y0", p0[1]},
                        {"inlet_y", p[0]},
                        {"outlet_lo_y", p[1]},
                        {"initial_solver_lower", ev0.solver_lower},
                        {"model_lower", ev.model_lower},
                        {"solver_lower", ev.solver_lower},
                        {"tally_lower", ev.tally_lower},
                        {"model_error", ev.model_error},
                        {"solver_error", ev.solver_error},
                        {"gap", ev.gap}});
        model_err.push_back(ev.model_error);
        solver_err.push_back(ev.solver_error);
        std::ostringstream os;
        os << "design " << k << ": lower fraction model " << ev.model_lower << ", solver " << ev.solver_lower
           << " (initial " << ev0.solver_lower << ")";
        log(os.str());
    }
    auto median = [](std::vector<double> v) {
        if (v.empty()) return 0.0;
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size();
        return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    };
    json summary = {{"starts", rows.size()},
                    {"median_model_error", median(model_err)},
                    {"median_solver_error", median(solver_err)},
                    {"rows", rows}};
    emit_report(summary, out / "designs");
    return kExitOk;
}

int cmd_benchmark(json cfg) {
    const fs::path out = make_run_dir(cfg, "run_dir", "benchmark");
    std::optional<Checkpoint> ck;
    if (!cfg.at("checkpoint").get<std::string>().empty()) {
        ck = load_checkpoint(existing_path(cfg, "checkpoint", "benchmark"));
        cfg["model"] = ck->model.config().to_json();
    }
    write_json(cfg, out / "config.json");
    RunLog log(out);
    const ModelConfig mc = ModelConfig::from_json(cfg.at("model"));
    const Model model = ck ? ck->model.clone() : build_model(mc, cfg.at("seed").get<std::uint64_t>());
    std::mt19937_64 rng(cfg.at("seed").get<std::uint64_t>());
    std::normal_distribution<double> nd;
    Shape bs = model.state_shape();
    Tensor u0(bs);
    for (std::size_t i = 0; i < u0.numel(); ++i) u0[i] = nd(rng);
    Tensor p(Shape{mc.static_input_dim});
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] = nd(rng);
    const auto r = benchmark_runtime(model, u0, p, cfg.at("steps").get<int>(), cfg.at("repeats").get<int>(),
                                     cfg.at("warmups").get<int>());
    json rep = {{"steps", cfg.at("steps")},
                {"t_full", r.t_full},
                {"t_evo", r.t_evo},
                {"ratio", r.t_evo / r.t_full},
                {"latent_dim", model.latent_dim()},
                {"state_dim", state_size(mc)},
                {"rows", json::array()}};
    for (std::size_t k = 0; k < r.full_samples.size(); ++k)
        rep["rows"].push_back({{"run", k}, {"t_full", r.full_samples[k]}, {"t_evo", r.evo_samples[k]}});
    emit_report(rep, out / "benchmark");
    std::ostringstream os;
    os << "t_full " << r.t_full << " s, t_evo " << r.t_evo << " s, ratio " << r.t_evo / r.t_full;
    log(os.str());
    return kExitOk;
}

}  // namespace

void emit_report(const json& report, const fs::path& stem) {
    fs::path js = stem, cs = stem;
    js += ".json";
    cs += ".csv";
    write_json(report, js);
    std::ofstream f(cs);
    if (!f) throw IoError("cannot write " + cs.string());
    if (report.contains("rows") && report["rows"].is_array() && !report["rows"].empty() &&
        report["rows"][0].is_object()) {
        std::vector<std::string> keys;
        for (const auto& [k, v] : report["rows"][0].items()) keys.push_back(k);
        for (std::size_t i = 0; i < keys.size(); ++i) f << (i ? "," : "") << keys[i];
        f << '\n';
        for (const auto& row : report["rows"]) {
            for (std::size_t i = 0; i < keys.size(); ++i) f << (i ? "," : "") << (row.contains(keys[i]) ? csv_cell(row[keys[i]]) : "");
            f << '\n';
        }
    } else {
        std::vector<std::pair<std::string, std::string>> kv;
        flatten(report, "", kv);
        f << "key,value\n";
        for (const auto& [k, v] : kv) f << k << ',' << v << '\n';
    }
    if (!f) throw IoError("write failed: " + cs.string());
}

int run(int argc, const char* const* argv) {
    CLI::App app{"Latent-evolution PDE surrogates: data generation, training, rollout and inverse design"};
    app.require_subcommand(1, 1);
    struct Sub {
        CLI::App* app;
        std::string config;
        std::vector<std::string> sets;
        json flags = json::object();
    };
    std::map<std::string, Sub> subs;
    auto add = [&](const std::string& name, const std::string& help) -> Sub& {
        Sub& s = subs[name];
        s.app = app.add_subcommand(name, help);
        s.app->add_option("--config", s.config, "JSON config file");
        s.app->add_option("--set", s.sets, "dotted override key=value (repeatable)");
        return s;
    };
    // convenience flags land in the override patch with their JSON types
    auto str_flag = [](Sub& s, const std::string& flag, const std::string& key, const std::string& help) {
        s.app->add_option_function<std::string>(flag, [&s, key](const std::string& v) { s.flags[key] = v; }, help);
    };
    auto int_flag = [](Sub& s, const std::string& flag, const std::string& key, const std::string& help) {
        s.app->add_option_function<long long>(flag, [&s, key](long long v) { s.flags[key] = v; }, help);
    };

    auto& gen = add("generate", "simulate a dataset");
    str_flag(gen, "--pde", "pde", "burgers1d | ns2d | smoke2d");
    str_flag(gen, "--scenario", "scenario", "E1 | E2 | E3");
    int_flag(gen, "--n-train", "n_train", "training trajectories");
    int_flag(gen, "--n-val", "n_val", "validation trajectories");
    int_flag(gen, "--n-test", "n_test", "test trajectories");
    int_flag(gen, "--seed", "seed", "base seed");
    str_flag(gen, "--out", "out", "dataset directory");

    auto& trn = add("train", "train a model on a dataset");
    str_flag(trn, "--dataset", "dataset", "dataset directory");
    str_flag(trn, "--run-dir", "run_dir", "output run directory");
    int_flag(trn, "--seed", "seed", "seed");

    auto& evl = add("evaluate", "score a checkpoint on a dataset split");
    str_flag(evl, "--run", "run", "training run directory");
    str_flag(evl, "--checkpoint", "checkpoint", "checkpoint directory");
    str_flag(evl, "--dataset", "dataset", "dataset directory");
    str_flag(evl, "--run-dir", "run_dir", "output directory");

    auto& rol = add("rollout", "latent rollout of one trajectory");
    str_flag(rol, "--checkpoint", "checkpoint", "checkpoint directory");
    str_flag(rol, "--dataset", "dataset", "dataset directory");
    str_flag(rol, "--run-dir", "run_dir", "output directory");
    int_flag(rol, "--trajectory", "trajectory", "trajectory index");
    int_flag(rol, "--steps", "steps", "latent steps");

    auto& inv = add("invert", "optimize smoke-box boundaries through a trained model");
    str_flag(inv, "--checkpoint", "checkpoint", "checkpoint directory");
    str_flag(inv, "--run-dir", "run_dir", "output directory");
    int_flag(inv, "--starts", "starts", "random initial designs");
    int_flag(inv, "--iters", "iters", "design iterations");
    int_flag(inv, "--seed", "seed", "seed");

    auto& ben = add("benchmark", "time latent evolution against full decoding");
    str_flag(ben, "--checkpoint", "checkpoint", "checkpoint directory (random model if absent)");
    str_flag(ben, "--run-dir", "run_dir", "output directory");
    int_flag(ben, "--steps", "steps", "rollout length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        for (auto& [name, s] : subs) {
            if (!s.app->parsed()) continue;
            json file_cfg;
            if (!s.config.empty()) {
                if (!fs::exists(s.config)) throw IoError("config file not found: " + s.config);
                file_cfg = read_json(s.config);
            }
            json cfg = default_config(name);
            if (!file_cfg.is_null()) merge_checked(cfg, file_cfg);
            merge_checked(cfg, s.flags);
            cfg = resolve_config(name, cfg, s.sets, std::getenv("LEPDE_SEED"));
            if (name == "generate") return cmd_generate(cfg);
            if (name == "train") return cmd_train(cfg);
            if (name == "evaluate") return cmd_evaluate(cfg);
            if (name == "rollout") return cmd_rollout(cfg);
            if (name == "invert") return cmd_invert(cfg);
            if (name == "benchmark") return cmd_benchmark(cfg);
        }
        std::cerr << "error: no command given\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: missing or unwritable path: " << e.what() << '\n';
        return kExitMissingPath;
    } catch (const SchemaMismatch& e) {
        std::cerr << "error: invalid configuration: " << e.what() << '\n';
        return kExitSchema;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: invalid configuration: " << e.what() << '\n';
        return kExitSchema;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace lepde::cli
