#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nanohtnet/datagen.hpp"
#include "nanohtnet/model.hpp"

namespace nht {

// ---- metrics ---------------------------------------------------------------

// Mean per-joint position error: the average Euclidean distance between
// paired joints over everything but the last axis (which must be 3). Units
// follow the inputs (mm throughout this project).
template <class S>
double mpjpe(const Tensor<S>& pred, const Tensor<S>& gt);

// Differentiable scalar [1] with the same value as mpjpe().
template <class S>
Tensor<S> mpjpe_loss(const Tensor<S>& pred, const Tensor<S>& gt, Tape<S>* tape = nullptr);

// Procrustes-aligned error ([T x J x 3]): each frame of `pred` is aligned to
// `gt` by the least-squares similarity transform (translation, rotation and
// scale; reflections disallowed by sign-correcting the smallest singular
// direction) before measuring mpjpe. Frames whose centered point cloud has
// rank < 2 cannot be aligned; they are excluded and counted in *skipped,
// with a warning on stderr.
double p_mpjpe(const Tensor<double>& pred, const Tensor<double>& gt, int64_t* skipped = nullptr);

// ---- optimizer ---------------------------------------------------------------

// Bias-corrected Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
template <class S>
struct AdamState {
  Tensor<S> m, v;  // first/second moment accumulators, shaped like the parameter
  int64_t step = 0;
};

template <class S>
void adam_step(Tensor<S>& param, const Tensor<S>& grad, AdamState<S>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Name-keyed slots so a whole parameter struct can be stepped via a visitor.
template <class S>
struct AdamOpt {
  double lr = 1e-3;
  std::map<std::string, AdamState<S>> slots;
  void step(const std::string& name, Tensor<S>& param, const Tensor<S>& grad) {
    adam_step(param, grad, slots[name], lr);
  }
};

// ---- fine-tuning -----------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  std::string dataset;      // PSEQ1 path
  std::string out_dir = ".";
  std::string pretrained;   // encoder checkpoint to warm-start from ("" = scratch)
  int64_t epochs = 10;
  int64_t batch = 4;
  int64_t steps_per_epoch = 64;  // sampled windows per epoch = steps * batch
  double lr = 1e-3;
  double lr_decay = 0.95;   // multiplicative, per epoch
  uint64_t seed = 1;
  bool flip_augment = true;
  void validate() const;  // throws ConfigError
};
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct EpochLog {
  int64_t epoch = 0;
  double train_loss = 0;  // mean batch loss, mm
  double val_mpjpe = 0;   // held-out windows, all supervised frames, mm
  double lr = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  double best_val_mpjpe = 0;
  std::string checkpoint_path;  // best-by-validation model
  std::string log_path;         // JSON-lines epoch log
};

// Seeded fine-tuning: 80/20 sequence split, per-window root-centred mm
// supervision on the configured output frames, optional horizontal-flip
// augmentation, Adam with per-epoch learning-rate decay. Aborts with
// ContractError if the loss turns non-finite.
TrainReport train(const TrainConfig& cfg);

// ---- evaluation --------------------------------------------------------------

struct ActionMetrics {
  int64_t frames = 0;       // supervised output frames measured
  double mpjpe_all = 0;     // mean over all supervised frames, mm
  double mpjpe_center = 0;  // mean over each window's centre frame only, mm
  double p_mpjpe = 0;       // Procrustes-aligned, all supervised frames, mm
};

struct EvalReport {
  std::map<int32_t, ActionMetrics> per_action;
  ActionMetrics overall;  // frame-count-weighted across actions
  int64_t windows = 0;
  int64_t skipped_frames = 0;  // degenerate Procrustes frames
};

// Deterministic sliding-window evaluation (stride = receptive field, view 0),
// ground truth root-centred per frame. Repeat calls are byte-identical.
EvalReport evaluate(const NanoHTNetParams<float>& params, const Dataset& ds);
EvalReport evaluate_checkpoint(const std::string& checkpoint, const std::string& dataset);
std::string eval_report_json(const EvalReport& report);

// Reference predictor for the same windows: emit, for every supervised
// frame, the mean root-centred pose over all receptive_field frames of the
// window. Returns its MPJPE over the supervised frames.
double temporal_mean_baseline(const Dataset& ds, const ModelConfig& cfg);

// ---- benchmarking -------------------------------------------------------------

struct BenchReport {
  int64_t batch = 0, iterations = 0;
  double p50_ms = 0, p95_ms = 0;   // per batch
  double windows_per_s = 0;
  int64_t analytic_flops = 0;      // == flops_count(config).total()
  double achieved_gflops = 0;      // analytic flops * throughput
};
BenchReport bench_model(const ModelConfig& cfg, int64_t batch, int64_t iterations,
                        int64_t warmup, uint64_t seed);

// Paired timing of one layer's attention under the two tokenizations, same
// kernel and channel width: frequency tokens run one [J x c] and one
// [t_k x c] pass; dense tokens run T passes over [J x c] plus J passes over
// [T x c].
struct PairedTiming {
  double frequency_ms = 0;  // median per iteration
  double dense_ms = 0;
};
PairedTiming bench_attention_tokenizations(int64_t joints, int64_t T, int64_t t_k,
                                           int64_t channels, int64_t heads, int64_t iterations,
                                           uint64_t seed);

}  // namespace nht
