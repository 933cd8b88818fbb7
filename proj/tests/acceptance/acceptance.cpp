// Acceptance run: one PASS/FAIL line per criterion. Exit status 0 iff all pass.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "lepde/cli.hpp"
#include "lepde/error.hpp"
#include "lepde/inverse.hpp"
#include "lepde/rollout.hpp"
#include "lepde/training.hpp"

using namespace lepde;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------

Outcome parameter_counts() {
    ModelConfig one;  // 1D: n_x 100, d_z 128, identity static encoder over (alpha, beta, gamma)
    const auto m1 = build_model(one, 0);
    ModelConfig two;
    two.spatial_dims = 2;
    two.grid = {64, 64};
    two.bundle = 1;
    two.static_input_dim = 0;
    two.static_dim = 0;
    const auto m2 = build_model(two, 0);
    const auto a = m1.counts().evolution, b = m2.counts().evolution;
    return {a == 82944 && b == 82560, "1D evolution " + std::to_string(a) + " (expect 82944), 2D evolution " +
                                          std::to_string(b) + " (expect 82560)"};
}

Outcome gradient_correctness() {
    ModelConfig c;
    c.grid = {32};
    c.bundle = 4;
    c.latent_dim = 16;
    c.channels = 4;
    c.depth = 2;
    auto model = build_model(c, 5);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    WindowBatch b;
    b.inputs = Tensor(Shape{3, 4, 1, 32});
    b.targets = Tensor(Shape{3, 2, 4, 1, 32});
    b.params = Tensor(Shape{3, 3});
    for (Tensor* t : {&b.inputs, &b.targets, &b.params})
        for (auto& v : t->vec()) v = nd(rng);
    b.indices = {{0, 0}, {1, 0}, {2, 0}};
    TrainConfig tc;
    tc.horizon = 2;
    const auto r = gradient_check(model, b, tc, 1e-6, 256, 7, 1e-8);
    return {r.coordinates >= 200 && r.max_rel_error < 1e-4,
            std::to_string(r.coordinates) + " coordinates, max relative error " + fmt(r.max_rel_error, 3) +
                " (limit 1e-4)"};
}

Outcome solver_oracles() {
    std::vector<std::string> fails;
    std::ostringstream os;
    {
        const double L = 16.0, beta = 0.1;
        Grid1D g{200, L, true};
        std::vector<double> u0(200);
        for (int i = 0; i < 200; ++i) u0[i] = std::sin(2 * M_PI * i * g.dx() / L);
        const auto t = simulate_burgers1d({0.0, beta, 0.0}, ForcingSpec1D{}, g, 2, 1.0, u0);
        double a0 = 0.0, a1 = 0.0;
        for (int i = 0; i < 200; ++i) {
            a0 += t.frame(0)[i] * u0[i];
            a1 += t.frame(1)[i] * u0[i];
        }
        const double expected = std::exp(-beta * std::pow(2 * M_PI / L, 2));
        const double err = std::abs(a1 / a0 / expected - 1.0);
        os << "heat decay rel err " << fmt(err, 3);
        if (err >= 0.01) fails.push_back("heat");
    }
    {
        const int n = 64;
        Grid2D g{n, 1.0, true};
        std::vector<double> w0(n * n);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) w0[j * n + i] = std::cos(2 * M_PI * (i + j) / n);
        const auto t = simulate_ns2d(1e-3, g, w0, std::vector<double>(n * n, 0.0), 2, 1.0);
        double num = 0.0, den = 0.0;
        for (int k = 0; k < n * n; ++k) {
            num += t.frame(1)[k] * w0[k];
            den += w0[k] * w0[k];
        }
        const double err = std::abs(num / den / std::exp(-1e-3 * 8 * M_PI * M_PI) - 1.0);
        os << ", NS eigenmode rel err " << fmt(err, 3);
        if (err >= 0.01) fails.push_back("ns");
    }
    {
        Grid1D g{100, 16.0, true};
        std::vector<double> u0(100);
        for (int i = 0; i < 100; ++i) u0[i] = 1.0 + 0.5 * std::sin(2 * M_PI * i / 100.0);
        const auto t = simulate_burgers1d({1.0, 0.3, 0.2}, ForcingSpec1D{}, g, 250, 4.0 / 249, u0);
        auto mean = [&](int k) {
            const auto f = t.frame(k);
            return std::accumulate(f.begin(), f.end(), 0.0) / 100.0;
        };
        double worst = 0.0;
        for (int k = 1; k < 250; ++k) worst = std::max(worst, std::abs(mean(k) - mean(0)) / std::abs(mean(0)));
        os << ", mass drift " << fmt(worst, 3);
        if (worst >= 1e-6) fails.push_back("mass");
    }
    {
        BoundaryParams p;
        p.inlet_y = 18.3;
        p.outlet_lo_y = 11.6;
        SmokeOptions o;
        o.frame_dt = 2.0;
        const auto t = simulate_smoke2d(p, smoke_blob(p.n, 5.0, 18.0, 2.5), 1.0, 100, o);
        const auto s0 = t.channel(0, 0);
        const double m0 = std::accumulate(s0.begin(), s0.end(), 0.0);
        double exited = 0.0, worst = 0.0;
        for (int k = 0; k < t.n_t(); ++k) {
            exited += t.series.at("exit_lower")[k] + t.series.at("exit_upper")[k];
            const auto s = t.channel(k, 0);
            worst = std::max(worst, std::abs(std::accumulate(s.begin(), s.end(), 0.0) + exited - m0) / m0);
        }
        os << ", smoke budget " << fmt(worst, 3);
        if (worst >= 1e-3) fails.push_back("smoke");
    }
    return {fails.empty(), os.str()};
}

Outcome rollout_structure() {
    bool ok = true;
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ModelConfig c;
        c.grid = {32};
        c.bundle = 4;
        c.latent_dim = 16;
        c.channels = 4;
        c.depth = 2;
        const auto m = build_model(c, seed);
        std::mt19937_64 rng(seed + 100);
        std::normal_distribution<double> nd;
        Tensor u0(Shape{4, 1, 32}), p(Shape{3});
        for (auto& v : u0.vec()) v = nd(rng);
        for (auto& v : p.vec()) v = nd(rng);
        const int m1 = 3 + static_cast<int>(seed), m2 = 5;
        const auto full = rollout(m, u0, p, m1 + m2);
        const auto first = rollout(m, u0, p, m1);
        Tensor z(Shape{16});
        std::copy_n(first.latents.data() + m1 * 16, 16, z.data());
        const auto second = rollout_from_latent(m, z, p, m2);
        ok = ok && std::equal(second.latents.vec().begin(), second.latents.vec().end(), full.latents.data() + m1 * 16);
        const std::size_t per = full.predictions.numel() / (m1 + m2);
        ok = ok && std::equal(second.predictions.vec().begin(), second.predictions.vec().end(),
                              full.predictions.data() + m1 * per);
        const auto bare = rollout(m, u0, p, m1 + m2, 0);
        ok = ok && bare.latents.vec() == full.latents.vec();
        checked += 2;
    }
    return {ok, std::to_string(checked) + " exact comparisons (composition and decode independence) on 3 random models"};
}

// Desk-scale 1D training shared by criteria 5 and 6.
struct DeskRuns {
    std::vector<double> full, ablated, persistence;
    double seconds = 0.0;
};

DeskRuns desk_training(const fs::path& work, bool with_ablation) {
    GenerateConfig g;  // E1, n_x 50, n_t 250
    g.n_train = 96;
    g.n_val = 12;
    g.n_test = 12;
    g.seed = 1000;
    const auto t0 = Clock::now();
    const auto ds = generate_dataset(g);
    write_dataset(ds, work / "e1");
    ModelConfig mc;
    mc.grid = {50};
    mc.bundle = 25;
    mc.latent_dim = 64;
    DeskRuns out;
    for (int variant = 0; variant < (with_ablation ? 2 : 1); ++variant)
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            TrainConfig tc;
            tc.epochs = 20;
            tc.horizon = 2;
            tc.seed = seed;
            tc.weights.enable_consistency = variant == 0;
            auto model = build_model(mc, seed);
            const auto tr = train(model, ds, tc);
            EvalOptions eo;
            eo.start_frame = 50;
            eo.benchmark_repeats = 0;
            const auto rep = evaluate_model(model, ds, ds.meta.splits.test, tr.stats, eo);
            (variant == 0 ? out.full : out.ablated).push_back(rep.accumulated_error);
            if (variant == 0) out.persistence.push_back(rep.persistence_error);
            std::cerr << "  desk run " << (variant == 0 ? "full" : "no-consistency") << " seed " << seed
                      << ": accumulated error " << rep.accumulated_error << " (persistence " << rep.persistence_error
                      << ", " << rep.frames << " frames)\n";
        }
    out.seconds = seconds_since(t0);
    return out;
}

Outcome desk_vs_persistence(const DeskRuns& r) {
    int wins = 0;
    std::ostringstream os;
    for (std::size_t s = 0; s < r.full.size(); ++s) {
        wins += r.full[s] < r.persistence[s] ? 1 : 0;
        os << (s ? "; " : "") << "seed " << s << " " << fmt(r.full[s]) << " vs " << fmt(r.persistence[s]);
    }
    return {wins >= 2, std::to_string(wins) + "/3 seeds below persistence (" + os.str() + ")"};
}

Outcome ablation_trend(const DeskRuns& r) {
    const double a = median(r.full), b = median(r.ablated);
    return {a < b, "median accumulated error full " + fmt(a) + " vs no-consistency " + fmt(b)};
}

Outcome runtime_asymmetry() {
    ModelConfig c;  // n_x 100, d_z 128
    const auto m = build_model(c, 0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    Tensor u0(Shape{25, 1, 100}), p(Shape{3});
    for (auto& v : u0.vec()) v = nd(rng);
    const auto r = benchmark_runtime(m, u0, p, 200, 7, 2);
    const double ratio = r.t_evo / r.t_full;
    return {ratio <= 0.6, "t_evo " + fmt(r.t_evo * 1e3) + " ms, t_full " + fmt(r.t_full * 1e3) + " ms, ratio " +
                              fmt(ratio, 3) + " (limit 0.6)"};
}

Outcome mask_properties() {
    BoundaryParams p;
    p.inlet_y = 15.3;
    p.outlet_lo_y = 9.8;
    const auto segs = smoke_box_segments(p);
    const auto m = continuous_boundary_mask(segs, 1e-4, p.n, p.n);
    std::size_t near = 0;
    for (double v : m.values) near += (v < 1e-3 || v > 1.0 - 1e-3) ? 1 : 0;
    const double frac = static_cast<double>(near) / static_cast<double>(m.values.size());

    const double beta = 0.05, h = 1e-6;
    MaskJacobian jac;
    continuous_boundary_mask(segs, beta, p.n, p.n, &jac);
    double worst = 0.0;
    for (std::size_t s = 2; s < segs.size(); ++s) {
        auto plus = segs, minus = segs;
        plus[s].x1 += h;
        minus[s].x1 -= h;
        const auto mp = continuous_boundary_mask(plus, beta, p.n, p.n).values;
        const auto mm = continuous_boundary_mask(minus, beta, p.n, p.n).values;
        for (std::size_t c = 0; c < mp.size(); ++c) {
            const double fd = (mp[c] - mm[c]) / (2 * h);
            worst = std::max(worst, std::abs(fd - jac.d_x1[s][c]) / std::max(std::abs(fd), 1e-6));
        }
    }
    return {frac >= 0.99 && worst < 1e-4, "near-binary cells " + fmt(100 * frac) + "% at beta 1e-4, d mask/d x1 " +
                                              "max relative error " + fmt(worst, 3) + " at beta 0.05"};
}

Outcome inverse_design(const fs::path& work) {
    const auto t0 = Clock::now();
    GenerateConfig g;
    g.pde = "smoke2d";
    g.n_train = 100;
    g.n_val = 10;
    g.n_test = 10;
    g.seed = 2000;
    const auto ds = generate_dataset(g);

    ModelConfig mc;
    mc.spatial_dims = 2;
    mc.grid = {32, 32};
    mc.in_channels = 3;
    mc.bundle = 1;
    mc.latent_dim = 128;
    mc.channels = 16;
    mc.depth = 3;
    mc.static_kind = StaticEncoderKind::CNN;
    mc.static_input_dim = 32 * 32;
    mc.static_dim = 16;
    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 16;
    tc.horizon = 4;
    tc.seed = 0;
    auto model = build_model(mc, 0);
    const auto tr = train(model, ds, tc);
    save_checkpoint(model, tr.stats, json::object(), work / "smoke_checkpoint");
    std::cerr << "  smoke surrogate: best val " << tr.best_val << " after " << seconds_since(t0) << " s\n";

    AnnealSchedule sched;  // 0.1 -> 0.05 over 100 iterations
    std::vector<double> model_err, solver_err;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const auto start = sample_design_start(32, k);
        DesignProblem pr;
        pr.p0 = start.p;
        pr.k_s = 20;
        pr.k_e = 39;
        pr.solver.frame_dt = g.smoke_frame_dt;
        pr.smoke_init = smoke_blob(32, start.blob_x, start.blob_y, g.blob_radius, g.blob_amount);
        pr.iters = sched.iters;
        const auto res = optimize_boundary(model, tr.stats, pr, sched);
        const auto ev = evaluate_design(res.p, pr, res.model.lower);
        model_err.push_back(ev.model_error);
        solver_err.push_back(ev.solver_error);
        std::cerr << "  design " << k << ": inlet " << res.p.inlet_y << ", lower outlet " << res.p.outlet_lo_y
                  << ", model " << ev.model_lower << ", solver " << ev.solver_lower << "\n";
    }
    const double me = median(model_err), se = median(solver_err);
    return {me <= 0.10 && se <= 0.15, "median |fraction - 0.3|: model " + fmt(me, 3) + " (limit 0.10), solver " +
                                          fmt(se, 3) + " (limit 0.15); " + fmt(seconds_since(t0), 3) + " s"};
}

Outcome serialization(const fs::path& work) {
    std::vector<std::string> fails;
    GenerateConfig g;
    g.n_train = 3;
    g.n_val = 1;
    g.n_test = 1;
    g.n_t = 100;
    g.t_end = 1.6;
    const auto ds = generate_dataset(g);
    const auto dd = work / "ser_data";
    fs::remove_all(dd);
    write_dataset(ds, dd);
    const auto back = read_dataset(dd);
    for (int i = 0; i < ds.size(); ++i)
        if (back.at(i).states != ds.at(i).states) fails.push_back("dataset");

    ModelConfig mc;
    mc.grid = {50};
    mc.bundle = 10;
    mc.latent_dim = 16;
    mc.channels = 8;
    mc.depth = 3;
    const auto m = build_model(mc, 3);
    const NormStats st{{0.123456789}, {1.987654321}};
    save_checkpoint(m, st, json::object(), work / "ser_ckpt");
    const auto ck = load_checkpoint(work / "ser_ckpt");
    if (ck.model.flat_parameters() != m.flat_parameters() || ck.stats.mean != st.mean || ck.stats.std != st.std)
        fails.push_back("checkpoint");

    const auto run = work / "ser_run";
    fs::remove_all(run);
    auto cli = [](std::vector<std::string> args) {
        args.insert(args.begin(), "lepde");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return cli::run(static_cast<int>(argv.size()), argv.data());
    };
    const int tcode = cli({"train", "--dataset", dd.string(), "--run-dir", run.string(), "--set", "model.bundle=10",
                           "--set", "model.latent_dim=16", "--set", "model.channels=8", "--set", "model.depth=3",
                           "--set", "train.epochs=2", "--set", "evaluate.benchmark_repeats=0"});
    const int ecode = cli({"evaluate", "--run", run.string()});
    if (tcode != 0 || ecode != 0) {
        fails.push_back("cli");
    } else {
        auto read = [](const fs::path& p) {
            std::ifstream f(p);
            return json::parse(f);
        };
        const auto a = read(run / "report.json"), b = read(run / "eval" / "report.json");
        for (const char* k : {"accumulated_error", "relative_l2", "persistence_error", "rows"})
            if (a.at(k) != b.at(k)) fails.push_back(std::string("metric ") + k);
    }
    std::string detail = "dataset, checkpoint and CLI re-evaluation";
    if (fails.empty()) return {true, detail + " reproduce exactly"};
    for (const auto& f : fails) detail += "; mismatch: " + f;
    return {false, detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string workdir = "acceptance_runs";
    std::vector<int> only;
    app.add_option("--workdir", workdir, "scratch directory for datasets and runs");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);
    const fs::path work = workdir;
    fs::create_directories(work);
    const std::set<int> chosen(only.begin(), only.end());
    auto want = [&](int k) { return chosen.empty() || chosen.count(k) > 0; };

    const std::vector<std::pair<int, std::string>> names{
        {1, "evolution parameter counts"}, {2, "gradient correctness"}, {3, "solver oracles"},
        {4, "latent rollout structure"},   {5, "desk-scale 1D training"}, {6, "consistency ablation trend"},
        {7, "runtime asymmetry"},          {8, "mask properties"},        {9, "desk-scale inverse design"},
        {10, "serialization"}};

    std::optional<DeskRuns> desk;
    int failed = 0;
    for (const auto& [k, name] : names) {
        if (!want(k)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            switch (k) {
                case 1: o = parameter_counts(); break;
                case 2: o = gradient_correctness(); break;
                case 3: o = solver_oracles(); break;
                case 4: o = rollout_structure(); break;
                case 5:
                case 6:
                    if (!desk) desk = desk_training(work, want(6));
                    o = k == 5 ? desk_vs_persistence(*desk) : ablation_trend(*desk);
                    break;
                case 7: o = runtime_asymmetry(); break;
                case 8: o = mask_properties(); break;
                case 9: o = inverse_design(work); break;
                case 10: o = serialization(work); break;
            }
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << name << "): " << o.detail << " ["
                  << fmt(seconds_since(t0), 3) << " s]" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
