#pragma once

// The four learned components: dynamic encoder q, static encoder r, latent
// evolution g and decoder h, built from a declarative configuration.
//
// Tensors at the model boundary:
//   states   [B, S, C_in, spatial...]   (spatial = {n_x} or {H, W})
//   statics  [B, P]                     (parameter vector or flattened mask)
//   latents  [B, d_z],  static latents [B, d_zp]

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "lepde/autograd.hpp"

namespace lepde {

using json = nlohmann::json;

enum class StaticEncoderKind {
    Identity,  ///< z_p = p
    MLP,       ///< F_r-layer perceptron, ELU hidden, linear last
    CNN,       ///< encoder-shaped conv stack + linear on a [n, n] mask
};

std::string to_string(StaticEncoderKind k);
StaticEncoderKind static_kind_from_string(const std::string& s);

struct ModelConfig {
    int spatial_dims = 1;
    Shape grid{100};        ///< spatial extents
    int in_channels = 1;    ///< C_in
    int bundle = 25;        ///< S
    int latent_dim = 128;   ///< d_z
    int channels = 32;      ///< C, channels of the first encoder layer
    int depth = 4;          ///< F_q = F_h
    StaticEncoderKind static_kind = StaticEncoderKind::Identity;
    int static_input_dim = 3;  ///< P
    int static_dim = 3;        ///< d_zp (must equal P for Identity)
    int static_depth = 0;      ///< F_r for the MLP kind

    /// Throws InvalidArgument on inconsistent settings or collapsing extents.
    void validate() const;
    json to_json() const;
    static ModelConfig from_json(const json& j);
    /// FNV-1a over the canonical JSON dump.
    std::uint64_t hash() const;
};

/// Dimensionality of one input bundle, S * C_in * prod(spatial).
std::size_t state_size(const ModelConfig& cfg);

/// Spatial extents after each encoder stage: entry 0 is the grid, entry i the
/// output of block i (floor division for stride-2 kernel-4 pad-1 convs).
std::vector<Shape> encoder_extents(const ModelConfig& cfg);

/// Evolution-only parameter count: (d_z + d_zp) d_z + d_z + 4 (d_z^2 + d_z).
std::size_t evolution_param_count(int latent_dim, int static_dim);

/// Interface used by the objective, rollout and inverse design.
class LatentDynamics {
public:
    virtual ~LatentDynamics() = default;
    virtual ag::Var encode(const ag::Var& states) const = 0;
    virtual ag::Var encode_static(const ag::Var& statics) const = 0;
    virtual ag::Var evolve(const ag::Var& z, const ag::Var& z_p) const = 0;
    virtual ag::Var decode(const ag::Var& z) const = 0;
    virtual std::vector<ag::Var> parameters() const = 0;
    virtual int latent_dim() const = 0;
    /// Shape of one decoded bundle without the batch axis.
    virtual Shape state_shape() const = 0;
};

struct ParamCounts {
    std::size_t encoder = 0;
    std::size_t static_encoder = 0;
    std::size_t evolution = 0;
    std::size_t decoder = 0;
    std::size_t total() const { return encoder + static_encoder + evolution + decoder; }
};

/// Layer record, kept for inspection and tests.
struct LayerInfo {
    std::string component;  ///< "q", "r", "g" or "h"
    std::string kind;       ///< "conv", "conv_t", "group_norm", "linear"
    int in_channels = 0;
    int out_channels = 0;
    Shape out_extent;
};

class Model final : public LatentDynamics {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    /// Deep copy with independent parameter storage.
    Model clone() const;

    ag::Var encode(const ag::Var& states) const override;
    ag::Var encode_static(const ag::Var& statics) const override;
    ag::Var evolve(const ag::Var& z, const ag::Var& z_p) const override;
    ag::Var decode(const ag::Var& z) const override;
    std::vector<ag::Var> parameters() const override;
    int latent_dim() const override { return cfg_.latent_dim; }
    Shape state_shape() const override;

    const ModelConfig& config() const { return cfg_; }
    const ParamCounts& counts() const { return counts_; }
    const std::vector<LayerInfo>& layers() const { return layers_; }
    /// state_size / d_z.
    double compression_ratio() const;
    /// Pre-latent flattened feature size of the encoder.
    std::size_t flattened_dim() const;

    /// Parameters of one component ("q", "r", "g", "h"), in construction order.
    std::vector<ag::Var> component_parameters(const std::string& component) const;
    std::vector<std::string> parameter_names() const;

    /// Copies every parameter value out / in, construction order.
    std::vector<double> flat_parameters() const;
    void set_flat_parameters(const std::vector<double>& flat);

private:
    struct Param {
        std::string name;
        std::string component;
        ag::Var var;
    };
    struct ConvStack {
        std::vector<int> conv;  // indices into params_: weight, bias per conv
        std::vector<int> norm;  // gamma, beta per block
        int linear = -1;        // weight, bias
        std::vector<Shape> extents;
        std::vector<int> channels;
    };

    int add_param(const std::string& component, const std::string& name, Shape shape, double bound);
    ConvStack build_conv_encoder(const std::string& component, int in_channels, const Shape& grid, int out_dim);
    ag::Var run_conv_encoder(const ConvStack& stack, const ag::Var& x4) const;
    const ag::Var& p(int i) const { return params_[static_cast<std::size_t>(i)].var; }
    ag::ConvGeometry geometry(int stride, int pad) const;
    Shape kernel(int k) const;
    void record(const std::string& comp, const std::string& kind, int cin, int cout, Shape extent);

    ModelConfig cfg_;
    std::vector<Param> params_;
    std::vector<LayerInfo> layers_;
    ParamCounts counts_;
    std::mt19937_64 rng_;

    ConvStack q_;
    ConvStack r_cnn_;
    std::vector<int> r_mlp_;
    std::vector<int> g_;
    int h_linear_ = -1;
    std::vector<int> h_convt_;
    std::vector<int> h_norm_;
    int h_final_ = -1;
};

/// Validates cfg and constructs a model with deterministic initialization.
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace lepde
