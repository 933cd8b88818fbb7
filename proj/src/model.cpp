#include "lepde/model.hpp"

#include <cmath>
#include <numeric>

#include "lepde/error.hpp"

namespace lepde {

using ag::Var;

std::string to_string(StaticEncoderKind k) {
    switch (k) {
        case StaticEncoderKind::Identity: return "identity";
        case StaticEncoderKind::MLP: return "mlp";
        case StaticEncoderKind::CNN: return "cnn";
    }
    return "identity";
}

StaticEncoderKind static_kind_from_string(const std::string& s) {
    if (s == "identity") return StaticEncoderKind::Identity;
    if (s == "mlp") return StaticEncoderKind::MLP;
    if (s == "cnn") return StaticEncoderKind::CNN;
    throw InvalidArgument("unknown static encoder kind '" + s + "'");
}

std::vector<Shape> encoder_extents(const ModelConfig& cfg) {
    std::vector<Shape> out{cfg.grid};
    for (int i = 0; i < cfg.depth; ++i) {
        Shape next;
        for (int e : out.back()) next.push_back(ag::conv_out_extent(e, 4, 2, 1));
        out.push_back(next);
    }
    return out;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("ModelConfig: " + m); };
    if (spatial_dims != 1 && spatial_dims != 2) fail("spatial_dims must be 1 or 2");
    if (static_cast<int>(grid.size()) != spatial_dims) fail("grid rank must equal spatial_dims");
    for (int e : grid)
        if (e < 1) fail("grid extents must be positive");
    if (in_channels < 1) fail("in_channels must be >= 1");
    if (bundle < 1) fail("bundle must be >= 1");
    if (latent_dim < 1) fail("latent_dim must be >= 1");
    if (depth < 1) fail("depth must be >= 1");
    if (channels < 2 || channels % 2 != 0) fail("channels must be even (two normalization groups)");
    const auto ext = encoder_extents(*this);
    for (std::size_t i = 1; i < ext.size(); ++i)
        for (int e : ext[i])
            if (e < 1)
                fail("spatial extent collapses below 1 after encoder stage " + std::to_string(i) + " (grid " +
                     shape_str(grid) + ", depth " + std::to_string(depth) + ")");
    if (static_input_dim < 0 || static_dim < 0) fail("static dimensions must be >= 0");
    switch (static_kind) {
        case StaticEncoderKind::Identity:
            if (static_dim != static_input_dim) fail("identity static encoder requires static_dim == static_input_dim");
            break;
        case StaticEncoderKind::MLP:
            if (static_depth < 1) fail("mlp static encoder requires static_depth >= 1");
            if (static_dim < 1 || static_input_dim < 1) fail("mlp static encoder requires positive dimensions");
            break;
        case StaticEncoderKind::CNN: {
            const std::size_t cells = std::accumulate(grid.begin(), grid.end(), std::size_t{1}, std::multiplies<>());
            if (static_cast<std::size_t>(static_input_dim) != cells)
                fail("cnn static encoder expects a grid-shaped mask input");
            if (static_dim < 1) fail("cnn static encoder requires static_dim >= 1");
            break;
        }
    }
}

json ModelConfig::to_json() const {
    return {{"spatial_dims", spatial_dims},
            {"grid", grid},
            {"in_channels", in_channels},
            {"bundle", bundle},
            {"latent_dim", latent_dim},
            {"channels", channels},
            {"depth", depth},
            {"static_kind", to_string(static_kind)},
            {"static_input_dim", static_input_dim},
            {"static_dim", static_dim},
            {"static_depth", static_depth}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    try {
        c.spatial_dims = j.at("spatial_dims").get<int>();
        c.grid = j.at("grid").get<Shape>();
        c.in_channels = j.at("in_channels").get<int>();
        c.bundle = j.at("bundle").get<int>();
        c.latent_dim = j.at("latent_dim").get<int>();
        c.channels = j.at("channels").get<int>();
        c.depth = j.at("depth").get<int>();
        c.static_kind = static_kind_from_string(j.at("static_kind").get<std::string>());
        c.static_input_dim = j.at("static_input_dim").get<int>();
        c.static_dim = j.at("static_dim").get<int>();
        c.static_depth = j.at("static_depth").get<int>();
    } catch (const json::exception& e) {
        throw SchemaMismatch(std::string("model config: ") + e.what());
    }
    return c;
}

std::uint64_t ModelConfig::hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::size_t state_size(const ModelConfig& cfg) {
    std::size_t n = static_cast<std::size_t>(cfg.bundle) * cfg.in_channels;
    for (int e : cfg.grid) n *= static_cast<std::size_t>(e);
    return n;
}

std::size_t evolution_param_count(int d, int dp) {
    const std::size_t dz = d;
    return (dz + dp) * dz + dz + 4 * (dz * dz + dz);
}

// ---------------------------------------------------------------------------

Model build_model(const ModelConfig& cfg, std::uint64_t seed) { return Model(cfg, seed); }

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    const int d = cfg_.latent_dim;

    q_ = build_conv_encoder("q", cfg_.bundle * cfg_.in_channels, cfg_.grid, d);

    if (cfg_.static_kind == StaticEncoderKind::MLP) {
        int in = cfg_.static_input_dim;
        for (int l = 0; l < cfg_.static_depth; ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            const std::string name = "r.mlp" + std::to_string(l);
            r_mlp_.push_back(add_param("r", name + ".weight", {cfg_.static_dim, in}, bound));
            add_param("r", name + ".bias", {cfg_.static_dim}, bound);
            record("r", "linear", in, cfg_.static_dim, {});
            in = cfg_.static_dim;
        }
    } else if (cfg_.static_kind == StaticEncoderKind::CNN) {
        r_cnn_ = build_conv_encoder("r", 1, cfg_.grid, cfg_.static_dim);
    }

    const int widths_in[5] = {d + cfg_.static_dim, d, d, d, d};
    for (int l = 0; l < 5; ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths_in[l]));
        const std::string name = "g.mlp" + std::to_string(l);
        g_.push_back(add_param("g", name + ".weight", {d, widths_in[l]}, bound));
        add_param("g", name + ".bias", {d}, bound);
        record("g", "linear", widths_in[l], d, {});
    }

    // Decoder mirrors q: linear to the deepest feature map, transposed convs
    // back through the recorded extents, then a 3-wide transposed conv.
    const int F = cfg_.depth;
    const auto& ext = q_.extents;
    const int c_deep = q_.channels.back();
    const std::size_t deep_cells =
        std::accumulate(ext.back().begin(), ext.back().end(), std::size_t{1}, std::multiplies<>());
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        h_linear_ = add_param("h", "h.linear.weight", {static_cast<int>(c_deep * deep_cells), d}, bound);
        add_param("h", "h.linear.bias", {static_cast<int>(c_deep * deep_cells)}, bound);
        record("h", "linear", d, static_cast<int>(c_deep * deep_cells), ext.back());
    }
    for (int j = F; j >= 1; --j) {
        const int cin = q_.channels[j];
        const int cout = q_.channels[j - 1];
        Shape ks = kernel(4);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cout * ks[0] * ks[1]));
        const std::string name = "h.block" + std::to_string(F - j);
        h_convt_.push_back(add_param("h", name + ".weight", {cin, cout, ks[0], ks[1]}, bound));
        add_param("h", name + ".bias", {cout}, bound);
        record("h", "conv_t", cin, cout, ext[j - 1]);
        h_norm_.push_back(add_param("h", name + ".norm.gamma", {cout}, 0.0));
        params_.back().var.mutable_value().fill(1.0);
        add_param("h", name + ".norm.beta", {cout}, 0.0);
        record("h", "group_norm", cout, cout, ext[j - 1]);
    }
    {
        const int cin = q_.channels[0];
        const int cout = cfg_.bundle * cfg_.in_channels;
        Shape ks = kernel(3);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cout * ks[0] * ks[1]));
        h_final_ = add_param("h", "h.out.weight", {cin, cout, ks[0], ks[1]}, bound);
        add_param("h", "h.out.bias", {cout}, bound);
        record("h", "conv_t", cin, cout, ext[0]);
    }

    for (const auto& prm : params_) {
        const std::size_t n = prm.var.value().numel();
        if (prm.component == "q") counts_.encoder += n;
        else if (prm.component == "r") counts_.static_encoder += n;
        else if (prm.component == "g") counts_.evolution += n;
        else counts_.decoder += n;
    }
}

int Model::add_param(const std::string& component, const std::string& name, Shape shape, double bound) {
    Tensor t(std::move(shape));
    if (bound > 0.0) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : t.vec()) v = u(rng_);
    }
    params_.push_back({name, component, Var(std::move(t), true)});
    return static_cast<int>(params_.size()) - 1;
}

void Model::record(const std::string& comp, const std::string& kind, int cin, int cout, Shape extent) {
    layers_.push_back({comp, kind, cin, cout, std::move(extent)});
}

Shape Model::kernel(int k) const { return cfg_.spatial_dims == 1 ? Shape{1, k} : Shape{k, k}; }

ag::ConvGeometry Model::geometry(int stride, int pad) const {
    if (cfg_.spatial_dims == 1) return {1, stride, 0, pad};
    return {stride, stride, pad, pad};
}

Model::ConvStack Model::build_conv_encoder(const std::string& component, int in_channels, const Shape& grid,
                                           int out_dim) {
    ConvStack s;
    ModelConfig shape_cfg = cfg_;
    shape_cfg.grid = grid;
    s.extents = encoder_extents(shape_cfg);
    const int C = cfg_.channels;
    s.channels.push_back(C);
    {
        Shape ks = kernel(3);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * ks[0] * ks[1]));
        s.conv.push_back(add_param(component, component + ".conv0.weight", {C, in_channels, ks[0], ks[1]}, bound));
        add_param(component, component + ".conv0.bias", {C}, bound);
        record(component, "conv", in_channels, C, grid);
    }
    for (int i = 1; i <= cfg_.depth; ++i) {
        const int cin = s.channels.back();
        const int cout = C << (i - 1);
        Shape ks = kernel(4);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin * ks[0] * ks[1]));
        const std::string name = component + ".block" + std::to_string(i - 1);
        s.conv.push_back(add_param(component, name + ".weight", {cout, cin, ks[0], ks[1]}, bound));
        add_param(component, name + ".bias", {cout}, bound);
        record(component, "conv", cin, cout, s.extents[i]);
        s.norm.push_back(add_param(component, name + ".norm.gamma", {cout}, 0.0));
        params_.back().var.mutable_value().fill(1.0);
        add_param(component, name + ".norm.beta", {cout}, 0.0);
        record(component, "group_norm", cout, cout, s.extents[i]);
        s.channels.push_back(cout);
    }
    const std::size_t cells =
        std::accumulate(s.extents.back().begin(), s.extents.back().end(), std::size_t{1}, std::multiplies<>());
    const int flat = static_cast<int>(s.channels.back() * cells);
    const double bound = 1.0 / std::sqrt(static_cast<double>(flat));
    s.linear = add_param(component, component + ".linear.weight", {out_dim, flat}, bound);
    add_param(component, component + ".linear.bias", {out_dim}, bound);
    record(component, "linear", flat, out_dim, {});
    return s;
}

Var Model::run_conv_encoder(const ConvStack& s, const Var& x4) const {
    Var h = ag::elu(ag::conv2d(x4, p(s.conv[0]), p(s.conv[0] + 1), geometry(1, 1)));
    for (int i = 1; i <= cfg_.depth; ++i) {
        h = ag::conv2d(h, p(s.conv[i]), p(s.conv[i] + 1), geometry(2, 1));
        h = ag::elu(ag::group_norm(h, p(s.norm[i - 1]), p(s.norm[i - 1] + 1), 2));
    }
    const int B = h.shape()[0];
    h = ag::reshape(h, {B, static_cast<int>(h.value().numel() / B)});
    return ag::linear(h, p(s.linear), p(s.linear + 1));
}

Shape Model::state_shape() const {
    Shape s{cfg_.bundle, cfg_.in_channels};
    s.insert(s.end(), cfg_.grid.begin(), cfg_.grid.end());
    return s;
}

Var Model::encode(const Var& states) const {
    const auto& sh = states.shape();
    const Shape expect = state_shape();
    if (sh.size() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), sh.begin() + 1))
        throw ShapeMismatch("encode: expected [B, " + shape_str(expect) + "], got " + shape_str(sh));
    const int B = sh[0];
    const int H = cfg_.spatial_dims == 1 ? 1 : cfg_.grid[0];
    const int W = cfg_.grid.back();
    return run_conv_encoder(q_, ag::reshape(states, {B, cfg_.bundle * cfg_.in_channels, H, W}));
}

Var Model::encode_static(const Var& statics) const {
    const auto& sh = statics.shape();
    if (sh.size() != 2 || sh[1] != cfg_.static_input_dim)
        throw ShapeMismatch("encode_static: expected [B, " + std::to_string(cfg_.static_input_dim) + "], got " +
                            shape_str(sh));
    switch (cfg_.static_kind) {
        case StaticEncoderKind::Identity: return statics;
        case StaticEncoderKind::MLP: {
            Var h = statics;
            for (std::size_t l = 0; l < r_mlp_.size(); ++l) {
                h = ag::linear(h, p(r_mlp_[l]), p(r_mlp_[l] + 1));
                if (l + 1 < r_mlp_.size()) h = ag::elu(h);
            }
            return h;
        }
        case StaticEncoderKind::CNN: {
            const int B = sh[0];
            const int H = cfg_.spatial_dims == 1 ? 1 : cfg_.grid[0];
            return run_conv_encoder(r_cnn_, ag::reshape(statics, {B, 1, H, cfg_.grid.back()}));
        }
    }
    return statics;
}

Var Model::evolve(const Var& z, const Var& z_p) const {
    const auto& zs = z.shape();
    if (zs.size() != 2 || zs[1] != cfg_.latent_dim)
        throw ShapeMismatch("evolve: z must be [B, " + std::to_string(cfg_.latent_dim) + "], got " + shape_str(zs));
    Var x = z;
    if (cfg_.static_dim > 0) {
        const auto& ps = z_p.shape();
        if (ps.size() != 2 || ps[0] != zs[0] || ps[1] != cfg_.static_dim)
            throw ShapeMismatch("evolve: z_p must be [B, " + std::to_string(cfg_.static_dim) + "], got " +
                                shape_str(ps));
        x = ag::concat_features(z, z_p);
    }
    for (int l = 0; l < 5; ++l) {
        x = ag::linear(x, p(g_[l]), p(g_[l] + 1));
        if (l < 3) x = ag::elu(x);
    }
    return ag::add(x, z);
}

Var Model::decode(const Var& z) const {
    const auto& zs = z.shape();
    if (zs.size() != 2 || zs[1] != cfg_.latent_dim)
        throw ShapeMismatch("decode: z must be [B, " + std::to_string(cfg_.latent_dim) + "], got " + shape_str(zs));
    const int B = zs[0];
    const auto& ext = q_.extents;
    auto hw = [&](const Shape& e) -> std::pair<int, int> {
        return cfg_.spatial_dims == 1 ? std::pair{1, e[0]} : std::pair{e[0], e[1]};
    };
    Var h = ag::linear(z, p(h_linear_), p(h_linear_ + 1));
    {
        const auto [hh, ww] = hw(ext.back());
        h = ag::reshape(h, {B, q_.channels.back(), hh, ww});
    }
    const int F = cfg_.depth;
    for (int k = 0; k < F; ++k) {
        const int j = F - k;
        const auto [hh, ww] = hw(ext[j - 1]);
        h = ag::conv_transpose2d(h, p(h_convt_[k]), p(h_convt_[k] + 1), geometry(2, 1), hh, ww);
        h = ag::elu(ag::group_norm(h, p(h_norm_[k]), p(h_norm_[k] + 1), 2));
    }
    const auto [hh, ww] = hw(ext[0]);
    h = ag::conv_transpose2d(h, p(h_final_), p(h_final_ + 1), geometry(1, 1), hh, ww);
    Shape out{B};
    const auto st = state_shape();
    out.insert(out.end(), st.begin(), st.end());
    return ag::reshape(h, out);
}

Model Model::clone() const {
    Model m(cfg_, 0);
    m.set_flat_parameters(flat_parameters());
    return m;
}

std::vector<Var> Model::parameters() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& prm : params_) out.push_back(prm.var);
    return out;
}

std::vector<Var> Model::component_parameters(const std::string& component) const {
    std::vector<Var> out;
    for (const auto& prm : params_)
        if (prm.component == component) out.push_back(prm.var);
    return out;
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> out;
    for (const auto& prm : params_) out.push_back(prm.name);
    return out;
}

double Model::compression_ratio() const {
    return static_cast<double>(state_size(cfg_)) / static_cast<double>(cfg_.latent_dim);
}

std::size_t Model::flattened_dim() const {
    const auto& e = q_.extents.back();
    return static_cast<std::size_t>(q_.channels.back()) *
           std::accumulate(e.begin(), e.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double> Model::flat_parameters() const {
    std::vector<double> out;
    out.reserve(counts_.total());
    for (const auto& prm : params_) out.insert(out.end(), prm.var.value().vec().begin(), prm.var.value().vec().end());
    return out;
}

void Model::set_flat_parameters(const std::vector<double>& flat) {
    if (flat.size() != counts_.total())
        throw ShapeMismatch("set_flat_parameters: got " + std::to_string(flat.size()) + " values, model has " +
                            std::to_string(counts_.total()));
    std::size_t off = 0;
    for (auto& prm : params_) {
        auto& v = prm.var.mutable_value().vec();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
        off += v.size();
    }
}

}  // namespace lepde
