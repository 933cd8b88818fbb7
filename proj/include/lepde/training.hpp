#pragma once

// Three-term objective (multi-step, reconstruction, latent consistency),
// the optimizer and training loop, gradient verification, and checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lepde/data.hpp"
#include "lepde/model.hpp"

namespace lepde {

enum class LossKernel { MSE, RMSE, L2 };

std::string to_string(LossKernel k);
LossKernel loss_kernel_from_string(const std::string& s);

struct LossWeights {
    /// alpha_1..alpha_M; empty means (1, 0.1, ..., 0.1).
    std::vector<double> alpha;
    bool enable_multistep = true;
    bool enable_recons = true;
    bool enable_consistency = true;

    double alpha_m(int m) const;  ///< m is 1-based
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double lr = 1e-3;
    std::string schedule = "cosine";  ///< "cosine" or "constant"
    int horizon = 2;                  ///< M
    int stride = 0;                   ///< window stride; 0 means S
    LossKernel kernel = LossKernel::MSE;
    std::uint64_t seed = 0;
    LossWeights weights;
    double consistency_floor = 1e-8;
    double mask_beta = 0.1;  ///< temperature of boundary-mask static inputs
    bool verbose = false;

    void validate() const;
    json to_json() const;
    static TrainConfig from_json(const json& j);
};

struct LossBreakdown {
    double total = 0.0;
    double multi_step = 0.0;
    double recons = 0.0;
    double consistency = 0.0;
};

/// Graph form of the objective; total is differentiable.
struct ObjectiveTerms {
    ag::Var total;
    ag::Var multi_step;
    ag::Var recons;
    ag::Var consistency;
    LossBreakdown values() const;
};

/// Every term is computed; total sums the enabled ones.
ObjectiveTerms objective_graph(const LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg);
LossBreakdown compute_objective(const LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg);

/// Adam with bias correction.
class Adam {
public:
    Adam(std::vector<ag::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void zero_grad();
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<ag::Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

/// Learning rate for an epoch: cosine from lr at epoch 0 toward 0 at `epochs`.
double scheduled_lr(const TrainConfig& cfg, int epoch);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown train;
    LossBreakdown val;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    NormStats stats;
    int best_epoch = -1;  ///< -1 when no epoch ran
    double best_val = 0.0;
};

/// Trains on the train split, validates on val (train if val is empty), and
/// leaves the model holding the best-validation parameters.
TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg);

/// Adam steps on a single batch; returns the loss before each step.
std::vector<double> train_on_batch(LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg, int steps);

/// Mean objective over windows of a split, in batches.
LossBreakdown evaluate_split(const LatentDynamics& model, const Dataset& ds, const std::vector<WindowIndex>& windows,
                             const TrainConfig& cfg, const NormStats& stats,
                             const std::vector<std::vector<double>>& statics);

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

struct GradCheckReport {
    double max_rel_error = 0.0;
    int coordinates = 0;
    double analytic_norm = 0.0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Central differences of the total objective on `coordinates` parameter
/// entries drawn with `seed`. Relative error |a - n| / max(|a|, |n|, floor).
GradCheckReport gradient_check(LatentDynamics& model, const WindowBatch& batch, const TrainConfig& cfg,
                               double eps = 1e-6, int coordinates = 256, std::uint64_t seed = 0,
                               double floor = 1e-12);

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/checkpoint.json + <dir>/params.bin (little-endian f64)

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    Model model;
    NormStats stats;
    json metadata;
};

void save_checkpoint(const Model& model, const NormStats& stats, const json& metadata,
                     const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Loads parameters into an existing model; ConfigHashMismatch if configs differ.
NormStats load_checkpoint_into(Model& model, const std::filesystem::path& dir);

}  // namespace lepde
