#include "lepde/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "lepde/boundary.hpp"
#include "lepde/error.hpp"

namespace lepde {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

const std::vector<int>& Splits::get(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InvalidArgument("unknown split '" + name + "'");
}

Splits default_splits(int n) {
    if (n < 1) throw InvalidArgument("default_splits: need at least one trajectory");
    const int n_val = n / 10, n_test = n / 10;
    const int n_train = n - n_val - n_test;
    Splits s;
    for (int i = 0; i < n; ++i) (i < n_train ? s.train : i < n_train + n_val ? s.val : s.test).push_back(i);
    return s;
}

std::vector<std::string> params_schema_for(const std::string& family) {
    if (family == "burgers1d") return {"alpha", "beta", "gamma"};
    if (family == "ns2d") return {"nu"};
    if (family == "smoke2d") return {"inlet_y", "outlet_lo_y", "outlet_hi_y"};
    throw InvalidArgument("unknown pde family '" + family + "'");
}

DatasetMeta infer_meta(const std::vector<Trajectory>& trajs, const std::string& family) {
    if (trajs.empty()) throw InvalidArgument("infer_meta: no trajectories");
    const auto& t = trajs.front();
    DatasetMeta m;
    m.pde_family = family;
    m.grid = t.grid;
    m.dt = t.dt;
    m.channels = t.channels;
    m.params_schema = params_schema_for(family);
    m.state_shape = t.shape;
    m.splits = default_splits(static_cast<int>(trajs.size()));
    return m;
}

// ---------------------------------------------------------------------------
// JSON

json grid_to_json(const GridSpec& g) {
    return std::visit(
        [](const auto& v) -> json {
            using G = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<G, Grid1D>)
                return {{"n_x", v.n_x}, {"length", v.length}, {"periodic", v.periodic}};
            else
                return {{"n", v.n}, {"length", v.length}, {"periodic", v.periodic}};
        },
        g);
}

GridSpec grid_from_json(const json& j) {
    if (j.contains("n_x")) return Grid1D{j.at("n_x").get<int>(), j.at("length").get<double>(), j.at("periodic").get<bool>()};
    if (j.contains("n")) return Grid2D{j.at("n").get<int>(), j.at("length").get<double>(), j.at("periodic").get<bool>()};
    throw SchemaMismatch("grid: expected key n_x or n");
}

json params_to_json(const StaticParams& p) {
    return std::visit(
        [](const auto& v) -> json {
            using P = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<P, PDEParams1D>)
                return {{"alpha", v.alpha}, {"beta", v.beta}, {"gamma", v.gamma}};
            else if constexpr (std::is_same_v<P, Viscosity>)
                return {{"nu", v.nu}};
            else
                return {{"n", v.n},
                        {"wall", v.wall},
                        {"width", v.width},
                        {"inlet_y", v.inlet_y},
                        {"outlet_lo_y", v.outlet_lo_y},
                        {"outlet_hi_y", v.outlet_hi_y}};
        },
        p);
}

StaticParams params_from_json(const json& j, const std::string& family) {
    try {
        if (family == "burgers1d")
            return PDEParams1D{j.at("alpha").get<double>(), j.at("beta").get<double>(), j.at("gamma").get<double>()};
        if (family == "ns2d") return Viscosity{j.at("nu").get<double>()};
        if (family == "smoke2d") {
            BoundaryParams b;
            b.n = j.at("n").get<int>();
            b.wall = j.at("wall").get<int>();
            b.width = j.at("width").get<double>();
            b.inlet_y = j.at("inlet_y").get<double>();
            b.outlet_lo_y = j.at("outlet_lo_y").get<double>();
            b.outlet_hi_y = j.at("outlet_hi_y").get<double>();
            return b;
        }
    } catch (const json::exception& e) {
        throw SchemaMismatch(std::string("params: ") + e.what());
    }
    throw SchemaMismatch("params: unknown pde family '" + family + "'");
}

std::vector<double> params_vector(const StaticParams& p) {
    return std::visit(
        [](const auto& v) -> std::vector<double> {
            using P = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<P, PDEParams1D>)
                return {v.alpha, v.beta, v.gamma};
            else if constexpr (std::is_same_v<P, Viscosity>)
                return {v.nu};
            else
                return {v.inlet_y, v.outlet_lo_y, v.outlet_hi_y};
        },
        p);
}

json meta_to_json(const DatasetMeta& m) {
    return {{"format_version", m.format_version},
            {"pde_family", m.pde_family},
            {"grid", grid_to_json(m.grid)},
            {"dt", m.dt},
            {"channels", m.channels},
            {"params_schema", m.params_schema},
            {"state_shape", m.state_shape},
            {"splits", {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}}}};
}

DatasetMeta meta_from_json(const json& j) {
    DatasetMeta m;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kDatasetFormatVersion)
            throw VersionMismatch("dataset format_version " + std::to_string(m.format_version) + ", expected " +
                                  std::to_string(kDatasetFormatVersion));
        m.pde_family = j.at("pde_family").get<std::string>();
        m.grid = grid_from_json(j.at("grid"));
        m.dt = j.at("dt").get<double>();
        m.channels = j.at("channels").get<std::vector<std::string>>();
        m.params_schema = j.at("params_schema").get<std::vector<std::string>>();
        m.state_shape = j.at("state_shape").get<Shape>();
        const auto& s = j.at("splits");
        m.splits.train = s.at("train").get<std::vector<int>>();
        m.splits.val = s.at("val").get<std::vector<int>>();
        m.splits.test = s.at("test").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw SchemaMismatch(std::string("meta.json: ") + e.what());
    }
    if (m.params_schema != params_schema_for(m.pde_family))
        throw SchemaMismatch("meta.json: params_schema does not match pde_family " + m.pde_family);
    if (m.state_shape.size() < 3 || static_cast<int>(m.channels.size()) != m.state_shape[1])
        throw SchemaMismatch("meta.json: state_shape inconsistent with channels");
    return m;
}

// ---------------------------------------------------------------------------
// Files

std::size_t payload_bytes(const Shape& state_shape) { return shape_numel(state_shape) * sizeof(float); }

namespace {

std::string traj_stem(int i) {
    std::ostringstream os;
    os << "traj_" << std::setw(5) << std::setfill('0') << i;
    return os.str();
}

void check_splits(const Splits& s, int n) {
    std::vector<int> seen(static_cast<std::size_t>(n), 0);
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (int i : *part) {
            if (i < 0 || i >= n) throw SchemaMismatch("splits: index " + std::to_string(i) + " out of range");
            if (seen[i]++) throw SchemaMismatch("splits: index " + std::to_string(i) + " assigned twice");
        }
    for (int i = 0; i < n; ++i)
        if (!seen[i]) throw SchemaMismatch("splits: trajectory " + std::to_string(i) + " unassigned");
}

void check_conforms(const Trajectory& t, const DatasetMeta& m, int i) {
    if (t.shape != m.state_shape)
        throw SchemaMismatch("trajectory " + std::to_string(i) + " has shape " + shape_str(t.shape) + ", meta says " +
                             shape_str(m.state_shape));
    if (t.channels != m.channels) throw SchemaMismatch("trajectory " + std::to_string(i) + ": channel names differ");
    if (t.states.size() != shape_numel(t.shape))
        throw SchemaMismatch("trajectory " + std::to_string(i) + ": state count does not match shape");
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaMismatch(p.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + p.string());
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
    check_splits(ds.meta.splits, ds.size());
    for (int i = 0; i < ds.size(); ++i) check_conforms(ds.at(i), ds.meta, i);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_json_file(dir / "meta.json", meta_to_json(ds.meta));
    for (int i = 0; i < ds.size(); ++i) {
        const auto& t = ds.at(i);
        const auto stem = traj_stem(i);
        std::ofstream bin(dir / (stem + ".bin"), std::ios::binary);
        if (!bin) throw IoError("cannot write " + (dir / (stem + ".bin")).string());
        bin.write(reinterpret_cast<const char*>(t.states.data()),
                  static_cast<std::streamsize>(t.states.size() * sizeof(float)));
        if (!bin) throw IoError("write failed for trajectory " + std::to_string(i));
        json side = {{"params", params_to_json(t.params)}, {"seed", t.seed}, {"series", t.series}};
        write_json_file(dir / (stem + ".json"), side);
    }
}

Dataset read_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "meta.json")) throw IoError("no meta.json in " + dir.string());
    Dataset ds;
    ds.meta = meta_from_json(read_json_file(dir / "meta.json"));
    const int n = static_cast<int>(ds.meta.splits.train.size() + ds.meta.splits.val.size() + ds.meta.splits.test.size());
    check_splits(ds.meta.splits, n);
    const std::size_t expected = payload_bytes(ds.meta.state_shape);
    ds.trajectories.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto stem = traj_stem(i);
        const auto bin_path = dir / (stem + ".bin");
        if (!fs::exists(bin_path)) throw IoError("missing payload " + bin_path.string());
        const auto size = fs::file_size(bin_path);
        if (size < expected)
            throw TruncatedPayload(bin_path.string() + ": " + std::to_string(size) + " bytes, expected " +
                                   std::to_string(expected));
        if (size > expected)
            throw SchemaMismatch(bin_path.string() + ": " + std::to_string(size) + " bytes, expected " +
                                 std::to_string(expected));
        Trajectory t;
        t.shape = ds.meta.state_shape;
        t.states.resize(shape_numel(t.shape));
        std::ifstream bin(bin_path, std::ios::binary);
        bin.read(reinterpret_cast<char*>(t.states.data()), static_cast<std::streamsize>(expected));
        if (bin.gcount() != static_cast<std::streamsize>(expected)) throw TruncatedPayload(bin_path.string());
        const json side = read_json_file(dir / (stem + ".json"));
        try {
            t.params = params_from_json(side.at("params"), ds.meta.pde_family);
            t.seed = side.at("seed").get<std::uint64_t>();
            if (side.contains("series"))
                t.series = side.at("series").get<std::map<std::string, std::vector<double>>>();
        } catch (const json::exception& e) {
            throw SchemaMismatch(stem + ".json: " + e.what());
        }
        t.dt = ds.meta.dt;
        t.grid = ds.meta.grid;
        t.channels = ds.meta.channels;
        ds.trajectories.push_back(std::move(t));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Windows and normalization

int window_count(int n_t, int S, int M, int stride) {
    if (S < 1 || M < 1 || stride < 1) throw InvalidArgument("window_count: S, M, stride must be >= 1");
    const int span = S * (M + 1);
    if (n_t < span) return 0;
    return (n_t - span) / stride + 1;
}

std::vector<WindowIndex> make_windows(const Dataset& ds, const std::vector<int>& trajectories, int S, int M,
                                      int stride, int* skipped) {
    std::vector<WindowIndex> out;
    int short_count = 0;
    for (int ti : trajectories) {
        const int count = window_count(ds.at(ti).n_t(), S, M, stride);
        if (count == 0) {
            ++short_count;
            continue;
        }
        for (int k = 0; k < count; ++k) out.push_back({ti, k * stride});
    }
    if (short_count > 0)
        warn("make_windows: skipped " + std::to_string(short_count) + " trajectories shorter than S*(M+1)");
    if (skipped) *skipped = short_count;
    return out;
}

namespace {

template <class F>
void for_each_channel_block(Tensor& x, int channel_axis, int channels, F&& f) {
    const auto& sh = x.shape();
    if (channel_axis < 0 || channel_axis >= static_cast<int>(sh.size()) || sh[channel_axis] != channels)
        throw ShapeMismatch("normalization: channel axis of " + shape_str(sh) + " != " + std::to_string(channels));
    std::size_t inner = 1, outer = 1;
    for (std::size_t a = channel_axis + 1; a < sh.size(); ++a) inner *= sh[a];
    for (int a = 0; a < channel_axis; ++a) outer *= sh[a];
    double* p = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (int c = 0; c < channels; ++c) {
            f(c, p, inner);
            p += inner;
        }
}

}  // namespace

void NormStats::apply(Tensor& x, int channel_axis) const {
    for_each_channel_block(x, channel_axis, channels(), [&](int c, double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) p[i] = (p[i] - mean[c]) / std[c];
    });
}

void NormStats::invert(Tensor& x, int channel_axis) const {
    for_each_channel_block(x, channel_axis, channels(), [&](int c, double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) p[i] = p[i] * std[c] + mean[c];
    });
}

json NormStats::to_json() const { return {{"mean", mean}, {"std", std}}; }

NormStats NormStats::from_json(const json& j) {
    NormStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    if (s.mean.size() != s.std.size()) throw SchemaMismatch("norm stats: mean/std length differ");
    return s;
}

NormStats NormStats::identity(int channels) {
    return {std::vector<double>(static_cast<std::size_t>(channels), 0.0),
            std::vector<double>(static_cast<std::size_t>(channels), 1.0)};
}

NormStats compute_norm_stats(const Dataset& ds, const std::vector<int>& trajectories) {
    if (trajectories.empty()) throw InvalidArgument("compute_norm_stats: empty training split");
    const int C = ds.at(trajectories.front()).n_channels();
    std::vector<double> sum(C, 0.0), sumsq(C, 0.0);
    std::vector<double> count(C, 0.0);
    // Two passes for accuracy: mean first, then centered second moment.
    for (int ti : trajectories) {
        const auto& t = ds.at(ti);
        for (int k = 0; k < t.n_t(); ++k)
            for (int c = 0; c < C; ++c) {
                for (float v : t.channel(k, c)) sum[c] += v;
                count[c] += static_cast<double>(t.spatial_size());
            }
    }
    NormStats s;
    s.mean.resize(C);
    s.std.resize(C);
    for (int c = 0; c < C; ++c) s.mean[c] = sum[c] / count[c];
    for (int ti : trajectories) {
        const auto& t = ds.at(ti);
        for (int k = 0; k < t.n_t(); ++k)
            for (int c = 0; c < C; ++c)
                for (float v : t.channel(k, c)) {
                    const double d = v - s.mean[c];
                    sumsq[c] += d * d;
                }
    }
    for (int c = 0; c < C; ++c) {
        s.std[c] = std::sqrt(sumsq[c] / count[c]);
        if (s.std[c] < kStdFloor) {
            warn("compute_norm_stats: channel " + std::to_string(c) + " is constant; flooring std");
            s.std[c] = kStdFloor;
        }
    }
    return s;
}

std::vector<double> static_input(const Trajectory& traj, double mask_beta) {
    if (const auto* b = std::get_if<BoundaryParams>(&traj.params))
        return continuous_boundary_mask(smoke_box_segments(*b), mask_beta, b->n, b->n).values;
    return params_vector(traj.params);
}

Tensor frames_tensor(const Trajectory& traj, int start, int count, const NormStats* stats) {
    if (start < 0 || count < 0 || start + count > traj.n_t())
        throw InvalidArgument("frames_tensor: frames out of range");
    Shape sh = traj.shape;
    sh[0] = count;
    Tensor out(sh);
    const std::size_t fsz = traj.frame_size();
    const auto src = std::span<const float>(traj.states).subspan(static_cast<std::size_t>(start) * fsz, count * fsz);
    std::copy(src.begin(), src.end(), out.data());
    if (stats) stats->apply(out, 1);
    return out;
}

WindowBatch gather_batch(const Dataset& ds, std::span<const WindowIndex> windows, int S, int M,
                         const NormStats* stats, const std::vector<std::vector<double>>& statics) {
    if (windows.empty()) throw InvalidArgument("gather_batch: no windows");
    const auto& first = ds.at(windows.front().trajectory);
    const int B = static_cast<int>(windows.size());
    const int C = first.n_channels();
    Shape spatial(first.shape.begin() + 2, first.shape.end());
    Shape in_shape{B, S, C};
    Shape tg_shape{B, M, S, C};
    in_shape.insert(in_shape.end(), spatial.begin(), spatial.end());
    tg_shape.insert(tg_shape.end(), spatial.begin(), spatial.end());
    const std::size_t P = statics.at(static_cast<std::size_t>(windows.front().trajectory)).size();

    WindowBatch batch;
    batch.inputs = Tensor(in_shape);
    batch.targets = Tensor(tg_shape);
    batch.params = Tensor(Shape{B, static_cast<int>(P)});
    batch.indices.assign(windows.begin(), windows.end());
    const std::size_t fsz = first.frame_size();
    for (int b = 0; b < B; ++b) {
        const auto& w = windows[b];
        const auto& t = ds.at(w.trajectory);
        if (w.start + S * (M + 1) > t.n_t()) throw InvalidArgument("gather_batch: window exceeds trajectory");
        const float* src = t.states.data() + static_cast<std::size_t>(w.start) * fsz;
        std::copy(src, src + S * fsz, batch.inputs.data() + b * S * fsz);
        std::copy(src + S * fsz, src + S * (M + 1) * fsz, batch.targets.data() + b * M * S * fsz);
        const auto& st = statics.at(static_cast<std::size_t>(w.trajectory));
        if (st.size() != P) throw ShapeMismatch("gather_batch: static inputs differ in length");
        std::copy(st.begin(), st.end(), batch.params.data() + b * P);
    }
    if (stats) {
        stats->apply(batch.inputs, 2);
        stats->apply(batch.targets, 3);
    }
    return batch;
}

Dataset inject_fixed_noise(const Dataset& ds, double amplitude, std::uint64_t seed) {
    if (amplitude < 0.0) throw InvalidArgument("inject_fixed_noise: amplitude must be >= 0");
    Dataset out = ds;
    if (amplitude == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, amplitude);
    for (auto& t : out.trajectories)
        for (auto& v : t.states) v = static_cast<float>(v + normal(rng));
    return out;
}

// ---------------------------------------------------------------------------
// Generation

Trajectory generate_burgers_trajectory(const GenerateConfig& cfg, std::uint64_t seed) {
    if (cfg.fine_n_x % cfg.n_x != 0) throw InvalidArgument("generate: n_x must divide fine_n_x");
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PDEParams1D p;
    if (cfg.scenario == "E1") {
        p = {1.0, 0.0, 0.0};
    } else if (cfg.scenario == "E2") {
        p = {1.0, 0.2 * unit(rng), 0.0};
    } else if (cfg.scenario == "E3") {
        p.alpha = 3.0 * unit(rng);
        p.beta = 0.4 * unit(rng);
        p.gamma = unit(rng);
    } else {
        throw InvalidArgument("generate: unknown scenario '" + cfg.scenario + "'");
    }
    const auto forcing = sample_forcing(seed, cfg.length);
    Grid1D grid{cfg.fine_n_x, cfg.length, true};
    auto traj = simulate_burgers1d(p, forcing, grid, cfg.n_t, cfg.t_end / (cfg.n_t - 1));
    traj.seed = seed;
    if (cfg.fine_n_x != cfg.n_x) traj = downsample_trajectory(traj, 1, cfg.fine_n_x / cfg.n_x);
    return traj;
}

SmokeSample sample_smoke_setup(const GenerateConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5bd1e9955bd1e995ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SmokeSample s;
    auto& b = s.boundary;
    b.n = cfg.smoke_n;
    b.wall = 2;
    b.width = cfg.smoke_n / 8.0;
    b.inlet_y = cfg.inlet_lo + (cfg.inlet_hi - cfg.inlet_lo) * unit(rng);
    b.outlet_lo_y = cfg.outlet_lo_lo + (cfg.outlet_lo_hi - cfg.outlet_lo_lo) * unit(rng);
    b.outlet_hi_y = cfg.outlet_hi_y;
    b.validate();
    s.blob_x = b.wall + 2.0 + unit(rng);
    s.blob_y = b.inlet_y + 2.0 * unit(rng) - 1.0;
    return s;
}

Trajectory generate_smoke_trajectory(const GenerateConfig& cfg, std::uint64_t seed) {
    const auto s = sample_smoke_setup(cfg, seed);
    SmokeOptions opt;
    opt.frame_dt = cfg.smoke_frame_dt;
    const auto blob = smoke_blob(cfg.smoke_n, s.blob_x, s.blob_y, cfg.blob_radius, cfg.blob_amount);
    auto traj = simulate_smoke2d(s.boundary, blob, cfg.inflow_speed, cfg.smoke_n_t, opt);
    traj.seed = seed;
    return traj;
}

Dataset generate_dataset(const GenerateConfig& cfg) {
    const int n = cfg.n_train + cfg.n_val + cfg.n_test;
    if (cfg.n_train < 1 || cfg.n_val < 0 || cfg.n_test < 0) throw InvalidArgument("generate: bad split sizes");
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
        if (cfg.pde == "burgers1d") {
            trajs.push_back(generate_burgers_trajectory(cfg, seed));
        } else if (cfg.pde == "ns2d") {
            Grid2D grid{cfg.ns_n, 1.0, true};
            auto t = simulate_ns2d(cfg.nu, grid, random_vorticity(grid, seed), default_ns_forcing(grid), cfg.ns_n_t,
                                   cfg.ns_dt);
            t.seed = seed;
            if (cfg.ns_x_factor != 1) t = downsample_trajectory(t, 1, cfg.ns_x_factor);
            trajs.push_back(std::move(t));
        } else if (cfg.pde == "smoke2d") {
            trajs.push_back(generate_smoke_trajectory(cfg, seed));
        } else {
            throw InvalidArgument("generate: unknown pde '" + cfg.pde + "'");
        }
    }
    Dataset ds;
    ds.meta = infer_meta(trajs, cfg.pde);
    ds.meta.splits = {};
    for (int i = 0; i < n; ++i)
        (i < cfg.n_train ? ds.meta.splits.train : i < cfg.n_train + cfg.n_val ? ds.meta.splits.val : ds.meta.splits.test)
            .push_back(i);
    ds.trajectories = std::move(trajs);
    return ds;
}

}  // namespace lepde
