#include <catch_amalgamated.hpp>

#include <cmath>

#include "lepde/error.hpp"
#include "lepde/model.hpp"

using namespace lepde;
using ag::Var;

namespace {

ModelConfig small_1d() {
    ModelConfig c;
    c.grid = {16};
    c.bundle = 2;
    c.latent_dim = 8;
    c.channels = 4;
    c.depth = 2;
    return c;
}

void zero_component(Model& m, const std::string& comp) {
    for (auto v : m.component_parameters(comp)) v.mutable_value().fill(0.0);
}

}  // namespace

TEST_CASE("evolution parameter counts") {
    CHECK(evolution_param_count(128, 3) == 82944);
    CHECK(evolution_param_count(128, 0) == 82560);
    ModelConfig c;  // n_x 100, d_z 128, identity static encoder with d_zp 3
    const auto m = build_model(c, 0);
    CHECK(m.counts().evolution == 82944);
    CHECK(m.counts().static_encoder == 0);
}

TEST_CASE("encoder extents and flattened dimension") {
    ModelConfig c;
    const auto e = encoder_extents(c);
    REQUIRE(e.size() == 5);
    CHECK(e[0] == Shape{100});
    CHECK(e[1] == Shape{50});
    CHECK(e[2] == Shape{25});
    CHECK(e[3] == Shape{12});
    CHECK(e[4] == Shape{6});
    const auto m = build_model(c, 0);
    CHECK(m.flattened_dim() == 1536);
    CHECK(m.compression_ratio() == Catch::Approx(2500.0 / 128.0));
    CHECK(state_size(c) == 2500);
}

TEST_CASE("decoder mirrors the encoder channel schedule") {
    ModelConfig c;
    const auto m = build_model(c, 0);
    std::vector<std::pair<int, int>> q, h;
    for (const auto& l : m.layers()) {
        if (l.kind != "conv" && l.kind != "conv_t") continue;
        (l.component == "q" ? q : h).push_back({l.in_channels, l.out_channels});
    }
    CHECK(q == std::vector<std::pair<int, int>>{{25, 32}, {32, 32}, {32, 64}, {64, 128}, {128, 256}});
    CHECK(h == std::vector<std::pair<int, int>>{{256, 128}, {128, 64}, {64, 32}, {32, 32}, {32, 25}});
}

TEST_CASE("collapsing or inconsistent configurations are rejected") {
    ModelConfig c;
    c.grid = {10};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = ModelConfig{};
    c.static_dim = 4;  // identity needs d_zp == P
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("identity static encoder passes parameters through") {
    ModelConfig c = small_1d();
    const auto m = build_model(c, 1);
    const auto zp = m.encode_static(Var(Tensor(Shape{1, 3}, std::vector<double>{1.0, 0.1, 0.0})));
    CHECK(zp.value().to_vector() == std::vector<double>{1.0, 0.1, 0.0});
}

TEST_CASE("CNN static encoder maps a mask to d_zp") {
    ModelConfig c;
    c.spatial_dims = 2;
    c.grid = {32, 32};
    c.in_channels = 3;
    c.bundle = 2;
    c.latent_dim = 16;
    c.channels = 4;
    c.depth = 3;
    c.static_kind = StaticEncoderKind::CNN;
    c.static_input_dim = 32 * 32;
    c.static_dim = 16;
    const auto m = build_model(c, 2);
    const auto zp = m.encode_static(Var(Tensor(Shape{2, 1024}, 0.5)));
    CHECK(zp.shape() == Shape{2, 16});
    CHECK(m.counts().static_encoder > 0);
    const auto z = m.encode(Var(Tensor(Shape{2, 2, 3, 32, 32}, 0.1)));
    CHECK(z.shape() == Shape{2, 16});
    const auto u = m.decode(z);
    CHECK(u.shape() == Shape{2, 2, 3, 32, 32});
    CHECK(m.state_shape() == Shape{2, 3, 32, 32});
}

TEST_CASE("MLP static encoder") {
    ModelConfig c = small_1d();
    c.static_kind = StaticEncoderKind::MLP;
    c.static_dim = 5;
    c.static_depth = 2;
    const auto m = build_model(c, 3);
    CHECK(m.counts().static_encoder == (3 * 5 + 5) + (5 * 5 + 5));
    CHECK(m.encode_static(Var(Tensor(Shape{4, 3}, 1.0))).shape() == Shape{4, 5});
}

TEST_CASE("zero evolution weights give the identity map") {
    auto m = build_model(small_1d(), 4);
    zero_component(m, "g");
    Tensor z0(Shape{2, 8});
    for (std::size_t i = 0; i < z0.numel(); ++i) z0[i] = std::sin(1.0 + i);
    const Var zp(Tensor(Shape{2, 3}, 0.7));
    const auto z1 = m.evolve(Var(z0), zp);
    CHECK(z1.value().vec() == z0.vec());

    // Jacobian of z -> g(z) by central differences is the identity.
    const double h = 1e-6;
    for (int j = 0; j < 8; ++j) {
        Tensor a = z0, b = z0;
        a[j] += h;
        b[j] -= h;
        const auto fa = m.evolve(Var(a), zp).value(), fb = m.evolve(Var(b), zp).value();
        for (int i = 0; i < 8; ++i) CHECK(std::abs((fa[i] - fb[i]) / (2 * h) - (i == j ? 1.0 : 0.0)) < 1e-8);
    }
}

TEST_CASE("encode and decode round-trip shapes") {
    const auto m = build_model(small_1d(), 5);
    const Var u(Tensor(Shape{3, 2, 1, 16}, 0.3));
    const auto z = m.encode(u);
    CHECK(z.shape() == Shape{3, 8});
    CHECK(m.decode(z).shape() == Shape{3, 2, 1, 16});
    CHECK_THROWS_AS(m.encode(Var(Tensor(Shape{3, 2, 1, 15}))), ShapeMismatch);
}

TEST_CASE("initialization is deterministic and clone is independent") {
    const auto a = build_model(small_1d(), 7), b = build_model(small_1d(), 7), c = build_model(small_1d(), 8);
    CHECK(a.flat_parameters() == b.flat_parameters());
    CHECK(a.flat_parameters() != c.flat_parameters());
    auto d = a.clone();
    CHECK(d.flat_parameters() == a.flat_parameters());
    zero_component(d, "q");
    CHECK(d.flat_parameters() != a.flat_parameters());
    CHECK(a.flat_parameters() == b.flat_parameters());
}

TEST_CASE("config json round trip and hash") {
    ModelConfig c = small_1d();
    c.static_kind = StaticEncoderKind::MLP;
    c.static_depth = 1;
    const auto back = ModelConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    c.latent_dim = 9;
    CHECK(back.hash() != c.hash());
}
