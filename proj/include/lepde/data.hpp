#pragma once

// Dataset persistence, temporal-bundling windows, normalization, fixed noise,
// and synthetic dataset generation for the three PDE families.
//
// On-disk layout of a dataset directory:
//   meta.json            format_version, pde_family, grid, dt, channels,
//                        params_schema, state_shape, splits {train, val, test}
//   traj_NNNNN.bin       little-endian float32, row-major [n_t, C, spatial...]
//   traj_NNNNN.json      {"params": {...}, "seed": s, "series": {...}}

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lepde/solvers.hpp"
#include "lepde/tensor.hpp"

namespace lepde {

using json = nlohmann::json;

inline constexpr int kDatasetFormatVersion = 1;

struct Splits {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;

    const std::vector<int>& get(const std::string& name) const;
};

/// Contiguous 80/10/10 split of n trajectories (train takes the remainder).
Splits default_splits(int n);

struct DatasetMeta {
    int format_version = kDatasetFormatVersion;
    std::string pde_family;  ///< "burgers1d", "ns2d" or "smoke2d"
    GridSpec grid;
    double dt = 0.0;
    std::vector<std::string> channels;
    std::vector<std::string> params_schema;
    Shape state_shape;  ///< [n_t, C, spatial...] shared by every trajectory
    Splits splits;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Trajectory> trajectories;

    const Trajectory& at(int i) const { return trajectories.at(static_cast<std::size_t>(i)); }
    int size() const { return static_cast<int>(trajectories.size()); }
};

/// Builds meta from the first trajectory; splits default to 80/10/10.
DatasetMeta infer_meta(const std::vector<Trajectory>& trajs, const std::string& pde_family);

// JSON forms of solver metadata.
json grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const json& j);
json params_to_json(const StaticParams& p);
StaticParams params_from_json(const json& j, const std::string& pde_family);
std::vector<std::string> params_schema_for(const std::string& pde_family);
/// Designable/static parameter values in schema order.
std::vector<double> params_vector(const StaticParams& p);

json meta_to_json(const DatasetMeta& m);
DatasetMeta meta_from_json(const json& j);

/// Writes meta.json plus one binary payload and sidecar per trajectory.
/// Throws SchemaMismatch if a trajectory disagrees with meta.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Throws VersionMismatch, SchemaMismatch or TruncatedPayload on bad input.
Dataset read_dataset(const std::filesystem::path& dir);

/// Raw payload size in bytes for one trajectory of the given shape.
std::size_t payload_bytes(const Shape& state_shape);

// ---------------------------------------------------------------------------
// Windows

struct WindowIndex {
    int trajectory = 0;
    int start = 0;
    bool operator==(const WindowIndex&) const = default;
};

/// Windows per trajectory = floor((n_t - S (M + 1)) / stride) + 1.
int window_count(int n_t, int S, int M, int stride);

/// All windows of the listed trajectories, trajectory-major. Trajectories
/// shorter than S (M + 1) are skipped with a warning; *skipped counts them.
std::vector<WindowIndex> make_windows(const Dataset& ds, const std::vector<int>& trajectories, int S, int M,
                                      int stride, int* skipped = nullptr);

struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;

    int channels() const { return static_cast<int>(mean.size()); }
    /// x has the channel axis at channel_axis; every later axis is spatial.
    void apply(Tensor& x, int channel_axis) const;
    void invert(Tensor& x, int channel_axis) const;
    double apply_value(int c, double v) const { return (v - mean[c]) / std[c]; }
    double invert_value(int c, double v) const { return v * std[c] + mean[c]; }

    json to_json() const;
    static NormStats from_json(const json& j);
    /// mean 0, std 1 for every channel.
    static NormStats identity(int channels);
};

inline constexpr double kStdFloor = 1e-8;

/// Per-channel mean/std over every frame of the listed trajectories.
/// A channel with std below the floor is floored, with a warning.
NormStats compute_norm_stats(const Dataset& ds, const std::vector<int>& trajectories);

/// Static model input for a trajectory: the parameter vector for the 1D and
/// NS families, the continuous boundary mask (flattened) for the smoke box.
std::vector<double> static_input(const Trajectory& traj, double mask_beta = 0.1);

struct WindowBatch {
    Tensor inputs;   ///< [B, S, C, spatial...]
    Tensor targets;  ///< [B, M, S, C, spatial...]
    Tensor params;   ///< [B, P]
    std::vector<WindowIndex> indices;

    int size() const { return inputs.empty() ? 0 : inputs.dim(0); }
    int horizon() const { return targets.dim(1); }
};

/// Assembles (normalized, if stats is given) windows into one batch.
/// statics[i] is the static input of trajectory i.
WindowBatch gather_batch(const Dataset& ds, std::span<const WindowIndex> windows, int S, int M,
                         const NormStats* stats, const std::vector<std::vector<double>>& statics);

/// Frames [start, start + count) of one trajectory as [count, C, spatial...].
Tensor frames_tensor(const Trajectory& traj, int start, int count, const NormStats* stats = nullptr);

/// Adds frozen i.i.d. N(0, amplitude^2) noise to every stored value.
Dataset inject_fixed_noise(const Dataset& ds, double amplitude, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Generation

struct GenerateConfig {
    std::string pde = "burgers1d";
    std::string scenario = "E1";  ///< burgers1d: E1, E2 or E3
    int n_train = 96;
    int n_val = 12;
    int n_test = 12;
    std::uint64_t seed = 0;

    // burgers1d: fine grid, then spatial downsampling to n_x
    int n_x = 50;
    int fine_n_x = 200;
    int n_t = 250;
    double t_end = 4.0;
    double length = 16.0;

    // ns2d
    int ns_n = 64;
    int ns_x_factor = 1;
    double nu = 1e-3;
    double ns_dt = 1.0;
    int ns_n_t = 20;

    // smoke2d
    int smoke_n = 32;
    int smoke_n_t = 40;
    double smoke_frame_dt = 2.0;
    double inflow_speed = 1.0;
    double inlet_lo = 13.0, inlet_hi = 23.0;
    double outlet_lo_lo = 8.0, outlet_lo_hi = 16.0;
    double outlet_hi_y = 24.0;
    double blob_radius = 2.5;
    double blob_amount = 1.0;
};

/// Simulates n_train + n_val + n_test trajectories (seed + index each) with
/// contiguous splits.
Dataset generate_dataset(const GenerateConfig& cfg);

/// One 1D trajectory of the given scenario at the given index seed.
Trajectory generate_burgers_trajectory(const GenerateConfig& cfg, std::uint64_t seed);
Trajectory generate_smoke_trajectory(const GenerateConfig& cfg, std::uint64_t seed);

/// Boundary and blob center drawn for a smoke trajectory with this seed.
struct SmokeSample {
    BoundaryParams boundary;
    double blob_x = 0.0, blob_y = 0.0;
};
SmokeSample sample_smoke_setup(const GenerateConfig& cfg, std::uint64_t seed);

}  // namespace lepde
