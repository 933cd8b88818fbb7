#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lepde/error.hpp"
#include "lepde/training.hpp"

using namespace lepde;
using ag::Var;
namespace fs = std::filesystem;

namespace {

// q = flatten, g = identity, h = s * unflatten with a learnable scalar s.
class ScaleModel final : public LatentDynamics {
public:
    explicit ScaleModel(Shape bundle) : bundle_(std::move(bundle)), s_(Tensor::scalar(1.0), true) {}
    Var encode(const Var& u) const override { return ag::reshape(u, {u.shape()[0], static_cast<int>(shape_numel(bundle_))}); }
    Var encode_static(const Var& p) const override { return p; }
    Var evolve(const Var& z, const Var&) const override { return z; }
    Var decode(const Var& z) const override {
        const Tensor& sv = s_.value();
        const Var s = s_;
        Tensor out = z.value();
        for (auto& v : out.vec()) v *= sv[0];
        Shape shp = bundle_;
        shp.insert(shp.begin(), z.shape()[0]);
        out.reshape_inplace(shp);
        return ag::make_result(std::move(out), {z, s}, [z, s](ag::Node& self) {
            Tensor gz(z.shape());
            double gs = 0.0;
            for (std::size_t i = 0; i < gz.numel(); ++i) {
                gz[i] = self.grad[i] * s.value()[0];
                gs += self.grad[i] * z.value()[i];
            }
            if (z.requires_grad()) z.node()->accumulate(gz);
            if (s.requires_grad()) s.node()->accumulate(Tensor::scalar(gs));
        });
    }
    std::vector<Var> parameters() const override { return {s_}; }
    int latent_dim() const override { return static_cast<int>(shape_numel(bundle_)); }
    Shape state_shape() const override { return bundle_; }

private:
    Shape bundle_;
    Var s_;
};

WindowBatch scalar_batch(double u0, std::vector<double> targets) {
    WindowBatch b;
    const int M = static_cast<int>(targets.size());
    b.inputs = Tensor(Shape{1, 1, 1, 1}, u0);
    b.targets = Tensor(Shape{1, M, 1, 1, 1}, std::move(targets));
    b.params = Tensor(Shape{1, 1}, 0.0);
    b.indices = {{0, 0}};
    return b;
}

Trajectory wave(int n_t, int n_x, double speed, double phase) {
    Trajectory t;
    t.shape = {n_t, 1, n_x};
    t.dt = 0.1;
    t.grid = Grid1D{n_x, 16.0, true};
    t.params = PDEParams1D{1.0, speed, 0.0};
    t.channels = {"u"};
    for (int k = 0; k < n_t; ++k)
        for (int i = 0; i < n_x; ++i)
            t.states.push_back(static_cast<float>(std::sin(2 * M_PI * i / n_x - speed * k * 0.1 + phase)));
    return t;
}

Dataset wave_dataset(int n) {
    Dataset ds;
    for (int i = 0; i < n; ++i) ds.trajectories.push_back(wave(24, 16, 0.5 + 0.1 * i, 0.3 * i));
    ds.meta = infer_meta(ds.trajectories, "burgers1d");
    ds.meta.splits.train.clear();
    ds.meta.splits.val.clear();
    ds.meta.splits.test.clear();
    for (int i = 0; i < n; ++i) (i < n - 1 ? ds.meta.splits.train : ds.meta.splits.val).push_back(i);
    return ds;
}

ModelConfig tiny() {
    ModelConfig c;
    c.grid = {16};
    c.bundle = 2;
    c.latent_dim = 8;
    c.channels = 4;
    c.depth = 2;
    return c;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.epochs = 2;
    t.batch_size = 4;
    t.horizon = 2;
    t.stride = 2;
    t.seed = 3;
    return t;
}

}  // namespace

TEST_CASE("objective of a perfect model is zero") {
    const ScaleModel m({1, 1, 1});
    TrainConfig cfg;
    cfg.horizon = 2;
    const auto v = compute_objective(m, scalar_batch(1.5, {1.5, 1.5}), cfg);
    CHECK(v.total == 0.0);
    CHECK(v.multi_step == 0.0);
    CHECK(v.recons == 0.0);
    CHECK(v.consistency == 0.0);
}

TEST_CASE("objective by hand with u0 = 1 and u1 = 2") {
    const ScaleModel m({1, 1, 1});
    TrainConfig cfg;
    cfg.horizon = 1;
    auto v = compute_objective(m, scalar_batch(1.0, {2.0}), cfg);
    CHECK(v.multi_step == Catch::Approx(1.0));
    CHECK(v.recons == Catch::Approx(0.0));
    CHECK(v.consistency == Catch::Approx(0.25));
    CHECK(v.total == Catch::Approx(1.25));

    SECTION("toggles drop terms from the total only") {
        cfg.weights.enable_consistency = false;
        v = compute_objective(m, scalar_batch(1.0, {2.0}), cfg);
        CHECK(v.total == Catch::Approx(1.0));
        CHECK(v.consistency == Catch::Approx(0.25));
        cfg.weights.enable_multistep = false;
        v = compute_objective(m, scalar_batch(1.0, {2.0}), cfg);
        CHECK(v.total == 0.0);
    }
    SECTION("default horizon weights") {
        cfg.horizon = 3;
        CHECK(cfg.weights.alpha_m(1) == 1.0);
        CHECK(cfg.weights.alpha_m(2) == 0.1);
        // targets 2, 2, 2: every step errs by 1.
        v = compute_objective(m, scalar_batch(1.0, {2.0, 2.0, 2.0}), cfg);
        CHECK(v.multi_step == Catch::Approx(1.2));
        CHECK(v.consistency == Catch::Approx(0.75));
    }
    SECTION("horizon mismatch") {
        cfg.horizon = 2;
        CHECK_THROWS_AS(compute_objective(m, scalar_batch(1.0, {2.0}), cfg), InvalidArgument);
    }
}

TEST_CASE("gradient of the objective at zero loss vanishes") {
    ScaleModel m({1, 1, 1});
    TrainConfig cfg;
    cfg.horizon = 2;
    const auto r = gradient_check(m, scalar_batch(1.5, {1.5, 1.5}), cfg, 1e-6, 1);
    CHECK(r.analytic_norm < 1e-10);
}

TEST_CASE("analytic gradients match central differences") {
    const auto ds = wave_dataset(3);
    auto m = build_model(tiny(), 11);
    const auto cfg = tiny_train();
    const auto w = make_windows(ds, {0, 1}, 2, 2, 2);
    const auto stats = compute_norm_stats(ds, {0, 1});
    std::vector<std::vector<double>> statics;
    for (const auto& t : ds.trajectories) statics.push_back(static_input(t));
    const auto batch = gather_batch(ds, std::span(w).subspan(0, 4), 2, 2, &stats, statics);
    const auto r = gradient_check(m, batch, cfg, 1e-6, 64, 5, 1e-6);
    CHECK(r.coordinates == 64);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("cosine schedule") {
    TrainConfig cfg;
    cfg.epochs = 10;
    CHECK(scheduled_lr(cfg, 0) == Catch::Approx(1e-3));
    CHECK(scheduled_lr(cfg, 5) == Catch::Approx(5e-4));
    cfg.schedule = "constant";
    CHECK(scheduled_lr(cfg, 7) == Catch::Approx(1e-3));
}

TEST_CASE("zero epochs leave the model untouched") {
    const auto ds = wave_dataset(3);
    auto m = build_model(tiny(), 1);
    const auto before = m.flat_parameters();
    auto cfg = tiny_train();
    cfg.epochs = 0;
    const auto r = train(m, ds, cfg);
    CHECK(r.history.empty());
    CHECK(r.best_epoch == -1);
    CHECK(m.flat_parameters() == before);
}

TEST_CASE("training is deterministic in the seed") {
    const auto ds = wave_dataset(3);
    auto a = build_model(tiny(), 1), b = build_model(tiny(), 1);
    const auto ra = train(a, ds, tiny_train()), rb = train(b, ds, tiny_train());
    REQUIRE(ra.history.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(ra.history[e].train.total == rb.history[e].train.total);
        CHECK(ra.history[e].val.total == rb.history[e].val.total);
    }
    CHECK(a.flat_parameters() == b.flat_parameters());

    const auto path = fs::temp_directory_path() / "lepde_history.csv";
    write_history_csv(ra.history, path);
    std::ifstream in(path);
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 3);
    fs::remove(path);
}

TEST_CASE("a small model overfits four windows") {
    const auto ds = wave_dataset(2);
    auto m = build_model(tiny(), 2);
    auto cfg = tiny_train();
    cfg.lr = 3e-3;
    const auto w = make_windows(ds, {0, 1}, 2, 2, 2);
    const auto stats = NormStats::identity(1);
    std::vector<std::vector<double>> statics;
    for (const auto& t : ds.trajectories) statics.push_back(static_input(t));
    const std::vector<WindowIndex> four{w[0], w[3], w[7], w[12]};
    const auto batch = gather_batch(ds, four, 2, 2, &stats, statics);
    const auto losses = train_on_batch(m, batch, cfg, 2000);
    CHECK(losses.front() > 0.1);
    CHECK(compute_objective(m, batch, cfg).total < 1e-3);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = fs::temp_directory_path() / "lepde_ckpt_test";
    fs::remove_all(dir);
    const auto m = build_model(tiny(), 4);
    const NormStats st{{0.25}, {2.0}};
    save_checkpoint(m, st, {{"note", "x"}}, dir);
    const auto c = load_checkpoint(dir);
    CHECK(c.model.flat_parameters() == m.flat_parameters());
    CHECK(c.model.config().hash() == m.config().hash());
    CHECK(c.stats.mean == st.mean);
    CHECK(c.stats.std == st.std);
    CHECK(c.metadata.at("note") == "x");

    auto other = build_model(tiny(), 9);
    load_checkpoint_into(other, dir);
    CHECK(other.flat_parameters() == m.flat_parameters());

    auto cfg = tiny();
    cfg.latent_dim = 6;
    auto wrong = build_model(cfg, 0);
    CHECK_THROWS_AS(load_checkpoint_into(wrong, dir), ConfigHashMismatch);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);
    fs::remove_all(dir);
}
