#pragma once

#include <map>
#include <string>
#include <vector>

#include "nanohtnet/frequency.hpp"
#include "nanohtnet/mixers.hpp"
#include "nanohtnet/skeleton.hpp"
#include "nanohtnet/tensor.hpp"

namespace nht {

// How the regression head's per-coefficient outputs become per-frame poses:
// kSubsample supervises/reports the `frames` window positions directly,
// kIdctFull treats them as retained DCT coefficients and inverts to all
// `receptive_field` frames.
enum class OutputMode { kSubsample, kIdctFull };

struct ModelConfig {
  int64_t joints = 17;
  int64_t receptive_field = 243;  // window length T fed to the model
  int64_t frames = 9;             // retained low-frequency tokens t_k
  int64_t channels = 240;         // embedding width C
  int64_t layers = 3;             // mixer depth per stream
  int64_t heads = 8;              // attention heads per split
  int64_t fcn_width = 0;          // post-mixer feature width c_l; 0 = channels
  bool ipc_enabled = true;        // ablation switch for the limb stage
  OutputMode output_mode = OutputMode::kSubsample;

  int64_t fcn() const { return fcn_width > 0 ? fcn_width : channels; }
  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// ---- parameters -------------------------------------------------------------

template <class S>
struct EmbedParams {
  Tensor<S> w, b, pos;  // linear token embedding + learned per-token offsets
};

template <class S>
struct NanoHTNetParams {
  ModelConfig config;
  EmbedParams<S> spatial_embed;   // [2T x C], [C], [J x C]
  EmbedParams<S> temporal_embed;  // [2J x C], [C], [t_k x C]
  std::vector<SpatialMixerParams<S>> smix;
  std::vector<TemporalMixerParams<S>> tmix;
  Tensor<S> s_fcn_w, s_fcn_b;     // [C x c_l], [c_l]
  Tensor<S> t_fcn_w, t_fcn_b;
  Tensor<S> head_wt, head_ws, head_b;  // [c_l x 3] each + [3]
};

// Allocates and initializes a model: Xavier-uniform weights keyed by
// (seed, tensor name), zero biases and positional offsets, unit LN gains.
template <class S>
NanoHTNetParams<S> make_model(const ModelConfig& cfg, uint64_t seed);

// Fixed-order traversal of every trainable tensor with hierarchical names.
template <class P, class F>
void visit_model(P& p, F&& f) {
  f("embed.spatial.w", p.spatial_embed.w);
  f("embed.spatial.b", p.spatial_embed.b);
  f("embed.spatial.pos", p.spatial_embed.pos);
  f("embed.temporal.w", p.temporal_embed.w);
  f("embed.temporal.b", p.temporal_embed.b);
  f("embed.temporal.pos", p.temporal_embed.pos);
  for (size_t l = 0; l < p.smix.size(); ++l)
    visit_spatial_mixer(p.smix[l], "smix." + std::to_string(l), f, p.config.ipc_enabled);
  for (size_t l = 0; l < p.tmix.size(); ++l)
    visit_temporal_mixer(p.tmix[l], "tmix." + std::to_string(l), f);
  f("s_fcn.w", p.s_fcn_w);
  f("s_fcn.b", p.s_fcn_b);
  f("t_fcn.w", p.t_fcn_w);
  f("t_fcn.b", p.t_fcn_b);
  f("head.wt", p.head_wt);
  f("head.ws", p.head_ws);
  f("head.b", p.head_b);
}

// ---- forward ------------------------------------------------------------------

template <class S>
struct BackboneOut {
  Tensor<S> f_s;  // [J x c_l] per-joint features
  Tensor<S> f_t;  // [t_k x c_l] per-coefficient features
};

template <class S>
struct AttnMaps {
  std::vector<Tensor<S>> spatial;   // per layer [heads x J x J]
  std::vector<Tensor<S>> temporal;  // per layer [heads x t_k x t_k]
};

// Both token streams through embedding, mixers, and the post-mixer linear
// maps. `x2d` is one window [T x J x 2] of normalized image coordinates.
template <class S>
BackboneOut<S> backbone_forward(const NanoHTNetParams<S>& p, const Tensor<S>& x2d,
                                Tape<S>* tape = nullptr, AttnMaps<S>* attn = nullptr);

// Full lift: [T x J x 2] -> [frames x J x 3] (kSubsample) or [T x J x 3]
// (kIdctFull), millimeters, root-relative once trained on such targets.
template <class S>
Tensor<S> model_forward(const NanoHTNetParams<S>& p, const Tensor<S>& x2d,
                        Tape<S>* tape = nullptr, AttnMaps<S>* attn = nullptr);

// Window positions supervised in kSubsample mode: `frames` indices spread
// uniformly over [0, T), center-inclusive when the spacing is symmetric
// (i_m = floor((2m+1)*T / (2*frames))).
std::vector<int64_t> supervision_frames(int64_t T, int64_t frames);

// ---- accounting -----------------------------------------------------------------

int64_t param_count(const ModelConfig& cfg);
// Scalar counts per top-level component; values sum exactly to param_count.
std::map<std::string, int64_t> param_breakdown(const ModelConfig& cfg);

// Flop convention: one multiply-accumulate = 2 flops; exp = 4, div = 1,
// sqrt = 2; GELU = 8/element, layer norm ~= 7/element, softmax = 8/element.
struct FlopsBreakdown {
  int64_t dct = 0;              // truncated input transform
  int64_t embedding = 0;        // token embedding matmuls
  int64_t gcn_projection = 0;   // X*W matmuls in the graph blocks
  int64_t gcn_adjacency = 0;    // A*X matmuls in the graph blocks
  int64_t ipc_conv = 0;         // limb pooling convolutions
  int64_t ipc_mlp = 0;          // limb feature MLPs
  int64_t attention_projection = 0;  // Q/K/V/out matmuls
  int64_t attention_token = 0;       // QK^T and attn*V token interactions
  int64_t aggregate_mlp = 0;
  int64_t fcn = 0;
  int64_t head = 0;
  int64_t output_idct = 0;      // only in kIdctFull mode
  int64_t elementwise = 0;      // bias/residual adds, GELU, LN, softmax
  // Leading-term token-interaction cost of the frequency tokenization,
  // identical by construction to attention_complexity(kFrequency, ...).
  int64_t attention_token_closed_form = 0;

  int64_t total() const {
    return dct + embedding + gcn_projection + gcn_adjacency + ipc_conv + ipc_mlp +
           attention_projection + attention_token + aggregate_mlp + fcn + head + output_idct +
           elementwise;
  }
};
FlopsBreakdown flops_count(const ModelConfig& cfg);

// Leading-term attention interaction costs of the two tokenizations.
// kDense runs attention over all T frame tokens (temporal) and per-frame
// joint tokens (spatial): J*T^2*C + T*J^2*C. kFrequency runs over T_k
// retained coefficient tokens and one set of joint tokens: T_k^2*C + J^2*C.
enum class Tokenization { kDense, kFrequency };
int64_t attention_complexity(Tokenization mode, int64_t joints, int64_t T, int64_t t_k,
                             int64_t channels);

// ---- checkpoints -----------------------------------------------------------------
// Layout: 8-byte magic "NHTCKPT1", little-endian u64 manifest length, UTF-8
// JSON manifest {format_version, kind, config, tensors:[{name, shape,
// offset}]}, then the raw little-endian float32 blob. Offsets are byte
// positions into the blob; the file length must match exactly.

struct CheckpointData {
  std::string kind;  // "model" or "encoder"
  ModelConfig config;
  std::map<std::string, Tensor<float>> tensors;
};

void write_checkpoint(const std::string& path, const std::string& kind, const ModelConfig& cfg,
                      const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);
CheckpointData read_checkpoint(const std::string& path);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // wanted by the model, absent in file
  std::vector<std::string> unexpected;  // present in file, unused by the model
};

// Copies matching tensors into `params`. In strict mode any missing or
// unexpected name raises CorruptFileError; shape disagreement always does.
LoadReport load_model(NanoHTNetParams<float>& params, const CheckpointData& ck, bool strict);

// Convenience: full-model save.
void save_model(const std::string& path, const NanoHTNetParams<float>& params);

}  // namespace nht
