#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nanohtnet/datagen.hpp"
#include "nanohtnet/model.hpp"
#include "nanohtnet/trainer.hpp"

namespace nht {

// Multi-view contrastive pre-training: a query encoder is trained to pull
// together unit embeddings of synchronized 2D views of the same pose
// instant, against a FIFO bank of past embeddings produced by momentum
// copies of the encoder.

struct PretrainConfig {
  ModelConfig model;
  std::string dataset;      // PSEQ1 path; must carry >= `views` cameras
  std::string out_dir = ".";
  int64_t views = 4;        // synchronized views used per instant
  int64_t bank_capacity = 1024;  // multiple of `views`
  int64_t slice = 3;        // sample every slice-th frame as an instant
  double decay = 0.999;     // momentum-encoder update rate
  double temperature = 0.07;
  int64_t embed_dim = 32;
  int64_t epochs = 5;
  double lr = 1e-3;
  uint64_t seed = 1;
  void validate() const;  // throws ConfigError
};
std::string pretrain_config_to_json(const PretrainConfig& cfg);
PretrainConfig pretrain_config_from_json(const std::string& text);

// Two-layer projection from the backbone width c_l to the embedding space.
template <class S>
struct ProjectionParams {
  Tensor<S> w1, b1;  // [c_l x c_l], [c_l]
  Tensor<S> w2, b2;  // [c_l x embed_dim], [embed_dim]
};

template <class P, class F>
void visit_projection(P& p, F&& f) {
  f("proj.w1", p.w1);
  f("proj.b1", p.b1);
  f("proj.w2", p.w2);
  f("proj.b2", p.b2);
}

template <class S>
ProjectionParams<S> make_projection(int64_t width, int64_t embed_dim, uint64_t seed);

template <class S>
struct Encoder {
  NanoHTNetParams<S> backbone;
  ProjectionParams<S> proj;
};

template <class P, class F>
void visit_encoder(P& e, F&& f) {
  visit_model(e.backbone, f);
  visit_projection(e.proj, f);
}

template <class S>
struct EncoderPair {
  Encoder<S> query;                  // receives gradient
  std::vector<Encoder<S>> momentum;  // one per view, never tracked on a tape
};

template <class S>
Encoder<S> make_encoder(const ModelConfig& cfg, int64_t embed_dim, uint64_t seed);
template <class S>
EncoderPair<S> make_encoder_pair(const PretrainConfig& cfg);

// Backbone forward (pre-head), mean-pool over the concatenated spatial and
// temporal token rows, two-layer projection with GELU, L2 normalization.
// Returns a unit row [1 x embed_dim].
template <class S>
Tensor<S> encode_embedding(const Encoder<S>& enc, const Tensor<S>& x2d, Tape<S>* tape = nullptr);

// Ring buffer of unit embeddings with strict first-in-first-out eviction.
template <class S>
class MemoryBank {
 public:
  MemoryBank(int64_t capacity, int64_t dim);
  // Accepts a [1 x dim] (or flat [dim]) unit vector; norm checked to 1e-4.
  void enqueue(const Tensor<S>& v);
  int64_t capacity() const { return capacity_; }
  int64_t dim() const { return dim_; }
  int64_t fill() const { return fill_; }
  // Current contents, oldest first: [fill x dim].
  Tensor<S> snapshot() const;

 private:
  int64_t capacity_, dim_, cursor_ = 0, fill_ = 0;
  Tensor<S> ring_;
};

// Contrastive loss: similarities are dot products (cosine on unit vectors);
// each positive contributes logsumexp([s_p, s_neg...] / t) - s_p / t and the
// contributions are averaged. `negatives` is a [K x dim] snapshot (K may be
// 0). Throws ContractError when `positives` is empty.
template <class S>
Tensor<S> info_nce(const Tensor<S>& q, const std::vector<Tensor<S>>& positives,
                   const Tensor<S>& negatives, S temperature, Tape<S>* tape = nullptr);

// theta_hat <- m * theta_hat + (1 - m) * theta for every tensor, in place.
// The momentum encoder must be untracked; shapes must match.
template <class S>
void momentum_update(Encoder<S>& target, const Encoder<S>& source, S m);

// A pre-training sample: one pose instant with all synchronized views.
struct SliceInstant {
  int64_t sequence = 0;
  int64_t frame = 0;  // window centre
};

// Every slice-th frame of each sequence whose centred window of length
// `window` stays in bounds; out-of-bounds instants are counted in *skipped.
// Sequence visit order is shuffled by `seed`; instants within a sequence
// stay sorted.
std::vector<SliceInstant> sample_slices(const Dataset& ds, int64_t window, int64_t slice,
                                        uint64_t seed, int64_t* skipped = nullptr);

struct EpochStats {
  int64_t steps = 0;
  double mean_loss = 0;
  double mean_pos_sim = 0;
  double mean_neg_sim = 0;  // vs the bank snapshot; 0 while the bank is empty
};

// One pass over the sampled instants. Per step: pick a random query view,
// encode it through the query encoder (tracked), encode every view through
// its momentum encoder (untracked), take the bank snapshot, apply the
// contrastive loss, step Adam on the query encoder, momentum-update all
// momentum encoders, then enqueue the view keys.
EpochStats pretrain_epoch(const Dataset& ds, EncoderPair<float>& pair, MemoryBank<float>& bank,
                          const PretrainConfig& cfg, AdamOpt<float>& opt, int64_t epoch);

struct PretrainReport {
  std::vector<EpochStats> epochs;
  std::string encoder_path;  // exported backbone checkpoint
  std::string log_path;      // JSON-lines epoch stats
};

// Full driver: build the pair, run the configured epochs, write the stats
// log and the exported encoder under out_dir.
PretrainReport pretrain(const PretrainConfig& cfg);

// Backbone tensors only (regression head and projection excluded), in the
// model module's checkpoint format with kind "encoder".
void export_encoder(const std::string& path, const Encoder<float>& enc);

}  // namespace nht
