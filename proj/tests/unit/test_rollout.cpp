#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "lepde/error.hpp"
#include "lepde/rollout.hpp"

using namespace lepde;

namespace {

ModelConfig small() {
    ModelConfig c;
    c.grid = {16};
    c.bundle = 2;
    c.latent_dim = 8;
    c.channels = 4;
    c.depth = 2;
    return c;
}

Tensor random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Tensor t(std::move(s));
    for (auto& v : t.vec()) v = nd(rng);
    return t;
}

Tensor row(const Tensor& t, int i) {
    const int d = t.dim(1);
    return Tensor(Shape{d}, std::vector<double>(t.data() + static_cast<std::size_t>(i) * d,
                                                t.data() + static_cast<std::size_t>(i + 1) * d));
}

}  // namespace

TEST_CASE("zero steps returns the encoding and no predictions") {
    const auto m = build_model(small(), 1);
    const auto u0 = random_tensor({2, 1, 16}, 2);
    const auto r = rollout(m, u0, Tensor(Shape{3}, 0.5), 0);
    CHECK(r.latents.shape() == Shape{1, 8});
    CHECK(r.decoded_steps.empty());
    CHECK(r.predictions.dim(0) == 0);
    const auto z = m.encode(ag::Var(u0.reshaped({1, 2, 1, 16}))).value();
    CHECK(r.latents.vec() == z.vec());
}

TEST_CASE("rollouts compose exactly") {
    const auto m = build_model(small(), 3);
    const auto u0 = random_tensor({2, 1, 16}, 4);
    const Tensor p(Shape{3}, std::vector<double>{1.0, 0.3, 0.1});
    const auto full = rollout(m, u0, p, 7);
    const auto first = rollout(m, u0, p, 3);
    const auto second = rollout_from_latent(m, row(first.latents, 3), p, 4);
    for (int i = 0; i <= 4; ++i) CHECK(row(second.latents, i).vec() == row(full.latents, 3 + i).vec());
    for (int i = 0; i < 4; ++i) {
        const std::size_t per = full.predictions.numel() / 7;
        CHECK(std::equal(second.predictions.data() + i * per, second.predictions.data() + (i + 1) * per,
                         full.predictions.data() + (3 + i) * per));
    }
}

TEST_CASE("latents do not depend on decoding") {
    const auto m = build_model(small(), 5);
    const auto u0 = random_tensor({2, 1, 16}, 6);
    const Tensor p(Shape{3}, 0.2);
    const auto a = rollout(m, u0, p, 9, 1), b = rollout(m, u0, p, 9, 0), c = rollout(m, u0, p, 9, 3);
    CHECK(a.latents.vec() == b.latents.vec());
    CHECK(a.latents.vec() == c.latents.vec());
    CHECK(b.predictions.dim(0) == 0);
    CHECK(c.decoded_steps == std::vector<int>{3, 6, 9});
    const std::size_t per = a.predictions.numel() / 9;
    CHECK(std::equal(c.predictions.data() + per, c.predictions.data() + 2 * per, a.predictions.data() + 5 * per));
}

TEST_CASE("rollout flags a non-finite latent") {
    auto m = build_model(small(), 7);
    for (auto v : m.component_parameters("g")) v.mutable_value().fill(1e200);
    CHECK_THROWS_AS(rollout(m, random_tensor({2, 1, 16}, 8), Tensor(Shape{3}, 1.0), 5), NonFiniteError);
}

TEST_CASE("accumulated error") {
    const auto gt = random_tensor({200, 1, 10}, 9);
    Tensor pred = gt;
    for (auto& v : pred.vec()) v += 0.1;
    CHECK(accumulated_error(pred, gt) == Catch::Approx(2.0).epsilon(1e-12));

    // Brute force against a random pair.
    const auto a = random_tensor({7, 2, 5}, 10), b = random_tensor({7, 2, 5}, 11);
    double expected = 0.0;
    for (int t = 0; t < 7; ++t) {
        double s = 0.0;
        for (int i = 0; i < 10; ++i) s += std::pow(a[t * 10 + i] - b[t * 10 + i], 2);
        expected += s / 10;
    }
    CHECK(accumulated_error(a, b) == Catch::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(accumulated_error(a, Tensor(Shape{7, 10})), ShapeMismatch);
}

TEST_CASE("relative L2") {
    const auto gt = random_tensor({4, 1, 10}, 12);
    CHECK(relative_l2(gt, gt) == 0.0);
    CHECK(relative_l2(Tensor::zeros_like(gt), gt) == Catch::Approx(1.0));
    Tensor twice = gt;
    for (auto& v : twice.vec()) v *= 2;
    CHECK(relative_l2(twice, gt) == Catch::Approx(1.0));
    CHECK_THROWS(relative_l2(gt, Tensor::zeros_like(gt)));
    CHECK(mean_relative_l2({gt, twice}, {gt, gt}) == Catch::Approx(0.5));
}

TEST_CASE("latent evolution alone is cheaper than a decoded rollout") {
    ModelConfig c;  // n_x 100, d_z 128
    const auto m = build_model(c, 13);
    const auto u0 = random_tensor({25, 1, 100}, 14);
    const Tensor p(Shape{3}, 0.5);
    const auto r = benchmark_runtime(m, u0, p, 50, 5, 1);
    CHECK(r.full_samples.size() == 5);
    CHECK(r.t_evo <= r.t_full);
    const auto r2 = benchmark_runtime(m, u0, p, 100, 5, 1);
    const double ratio = r2.t_full / r.t_full;
    CHECK((ratio > 1.3 && ratio < 3.0));
    CHECK_THROWS_AS(benchmark_runtime(m, u0, p, 10, 2, 0), InvalidArgument);
}

TEST_CASE("evaluation beats nothing on a constant dataset") {
    Dataset ds;
    for (int i = 0; i < 2; ++i) {
        Trajectory t;
        t.shape = {10, 1, 16};
        t.states.assign(160, static_cast<float>(i + 1));
        t.grid = Grid1D{16, 16.0, true};
        t.params = PDEParams1D{};
        t.channels = {"u"};
        t.dt = 0.1;
        ds.trajectories.push_back(t);
    }
    ds.meta = infer_meta(ds.trajectories, "burgers1d");
    const auto m = build_model(small(), 15);
    EvalOptions o;
    o.start_frame = 2;
    o.benchmark_repeats = 0;
    const auto rep = evaluate_model(m, ds, {0, 1}, NormStats::identity(1), o);
    CHECK(rep.frames == 8);
    CHECK(rep.per_trajectory.size() == 2);
    CHECK(rep.persistence_error == 0.0);
    CHECK(rep.accumulated_error > 0.0);
    CHECK(rep.representation_dim == 8);
    CHECK(rep.state_dim == 32);
    const auto j = rep.to_json();
    CHECK(j.contains("accumulated_error"));
    CHECK(j.contains("compression_ratio"));
}
