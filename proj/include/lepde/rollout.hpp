#pragma once

// Latent-space autoregressive inference, error metrics and runtime benchmarks.

#include <vector>

#include "lepde/data.hpp"
#include "lepde/model.hpp"

namespace lepde {

struct RolloutReport {
    Tensor latents;              ///< [m + 1, d_z]; row 0 is encode(U0)
    std::vector<int> decoded_steps;  ///< latent steps i (1-based) that were decoded
    Tensor predictions;          ///< [len(decoded_steps), S, C, spatial...]
};

/// decode_every = k decodes latent steps k, 2k, ...; 0 decodes nothing.
/// u0: [S, C, spatial...]; statics: [P]. Runs without graph recording.
RolloutReport rollout(const LatentDynamics& model, const Tensor& u0, const Tensor& statics, int m,
                      int decode_every = 1);

/// Continues from a latent z0 ([d_z] or [1, d_z]) with a precomputed z_p ([d_zp]).
RolloutReport rollout_from_latent(const LatentDynamics& model, const Tensor& z0, const Tensor& z_p, int m,
                                  int decode_every = 1);

/// Sum over frames of the per-frame mean squared error. pred/gt: [T, ...].
double accumulated_error(const Tensor& pred, const Tensor& gt);
/// ||pred - gt|| / ||gt|| over the whole tensor.
double relative_l2(const Tensor& pred, const Tensor& gt);
/// Per-trajectory metric averaged over trajectories.
double mean_accumulated_error(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);
double mean_relative_l2(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);

struct RuntimeResult {
    double t_full = 0.0;  ///< seconds, median
    double t_evo = 0.0;   ///< seconds, median
    std::vector<double> full_samples;
    std::vector<double> evo_samples;
};

/// t_evo: encode + m evolutions; t_full: the same plus decoding every step.
/// Medians over `repeats` timed runs after `warmups` untimed runs.
RuntimeResult benchmark_runtime(const LatentDynamics& model, const Tensor& u0, const Tensor& statics, int m,
                                int repeats = 5, int warmups = 2);

struct TrajectoryEval {
    int trajectory = 0;
    double accumulated_error = 0.0;
    double relative_l2 = 0.0;
    double persistence_error = 0.0;
};

struct EvalReport {
    int start_frame = 0;
    int frames = 0;  ///< predicted frames per trajectory
    double accumulated_error = 0.0;
    double relative_l2 = 0.0;
    double persistence_error = 0.0;
    double persistence_relative_l2 = 0.0;
    std::vector<TrajectoryEval> per_trajectory;
    int representation_dim = 0;
    std::size_t state_dim = 0;
    double compression_ratio = 0.0;
    RuntimeResult runtime;

    json to_json() const;
};

struct EvalOptions {
    int start_frame = 50;       ///< first predicted frame; the input bundle ends here
    int frames = -1;            ///< predicted frames; -1 means to the end, whole bundles only
    double mask_beta = 0.1;
    int benchmark_repeats = 5;  ///< 0 skips timing
    int benchmark_warmups = 2;
};

/// Rolls out every trajectory of `trajectories` from the bundle ending at
/// start_frame and scores the denormalized predictions against the solver.
/// The persistence baseline repeats the last input bundle.
EvalReport evaluate_model(const LatentDynamics& model, const Dataset& ds, const std::vector<int>& trajectories,
                          const NormStats& stats, const EvalOptions& opt = {});

}  // namespace lepde
