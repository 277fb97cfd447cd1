#include "nanohtnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "nanohtnet/errors.hpp"
#include "nanohtnet/mixers.hpp"
#include "nanohtnet/rng.hpp"

namespace nht {

// ---- metrics ---------------------------------------------------------------

template <class S>
double mpjpe(const Tensor<S>& pred, const Tensor<S>& gt) {
  if (!pred.same_shape(gt) || pred.last_extent() != 3)
    throw DimError("mpjpe expects equal [.. x 3] shapes, got " + shape_str(pred.shape()) +
                   " vs " + shape_str(gt.shape()));
  const int64_t n = pred.numel() / 3;
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d2 = 0;
    for (int64_t k = 0; k < 3; ++k) {
      const double d = static_cast<double>(pred[i * 3 + k]) - static_cast<double>(gt[i * 3 + k]);
      d2 += d * d;
    }
    acc += std::sqrt(d2);
  }
  return acc / static_cast<double>(n);
}

template <class S>
Tensor<S> mpjpe_loss(const Tensor<S>& pred, const Tensor<S>& gt, Tape<S>* tape) {
  if (!pred.same_shape(gt) || pred.last_extent() != 3)
    throw DimError("mpjpe_loss expects equal [.. x 3] shapes, got " + shape_str(pred.shape()) +
                   " vs " + shape_str(gt.shape()));
  const int64_t n = pred.numel() / 3;
  Tensor<S> diff = sub(pred, gt, tape);
  Tensor<S> sq = mul(diff, diff, tape);
  Tensor<S> rows = reshape(sq, {n, 3}, tape);
  Tensor<S> sums = matmul(rows, Tensor<S>::full({3, 1}, S(1)), tape);
  Tensor<S> dist = sqrt_elem(sums, tape);
  return mean_all(dist, tape);
}

double p_mpjpe(const Tensor<double>& pred, const Tensor<double>& gt, int64_t* skipped) {
  if (!pred.same_shape(gt) || pred.last_extent() != 3 || pred.rank() < 2)
    throw DimError("p_mpjpe expects equal [frames x J x 3] shapes, got " +
                   shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  const int64_t J = pred.extent(pred.rank() - 2);
  const int64_t frames = pred.numel() / (J * 3);
  int64_t skip = 0;
  double acc = 0;
  int64_t measured = 0;
  for (int64_t f = 0; f < frames; ++f) {
    Eigen::MatrixXd x(J, 3), y(J, 3);
    for (int64_t j = 0; j < J; ++j)
      for (int64_t k = 0; k < 3; ++k) {
        x(j, k) = pred[(f * J + j) * 3 + k];
        y(j, k) = gt[(f * J + j) * 3 + k];
      }
    const Eigen::RowVector3d mx = x.colwise().mean(), my = y.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - mx, yc = y.rowwise() - my;
    const Eigen::Matrix3d c = xc.transpose() * yc;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    const double xnorm2 = xc.squaredNorm();
    if (sv(1) <= 1e-9 * std::max(1.0, sv(0)) || xnorm2 <= 0) {
      ++skip;
      continue;
    }
    const double d =
        (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    Eigen::Matrix3d dd = Eigen::Matrix3d::Identity();
    dd(2, 2) = d;
    const Eigen::Matrix3d r = svd.matrixV() * dd * svd.matrixU().transpose();
    const double s = (sv(0) + sv(1) + d * sv(2)) / xnorm2;
    const Eigen::MatrixXd aligned = s * xc * r.transpose();
    for (int64_t j = 0; j < J; ++j) acc += (aligned.row(j) - yc.row(j)).norm();
    ++measured;
  }
  if (skip > 0)
    std::cerr << "p_mpjpe: skipped " << skip << " degenerate frame(s) (rank < 2)\n";
  if (skipped) *skipped = skip;
  if (measured == 0) return 0;
  return acc / static_cast<double>(measured * J);
}

// ---- optimizer ---------------------------------------------------------------

template <class S>
void adam_step(Tensor<S>& param, const Tensor<S>& grad, AdamState<S>& state, double lr,
               double beta1, double beta2, double eps) {
  if (!param.same_shape(grad))
    throw DimError("adam_step: gradient shape " + shape_str(grad.shape()) +
                   " does not match parameter shape " + shape_str(param.shape()));
  if (state.step == 0) {
    state.m = Tensor<S>(param.shape());
    state.v = Tensor<S>(param.shape());
  } else if (!state.m.same_shape(param)) {
    throw DimError("adam_step: optimizer state shape does not match the parameter");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double m = beta1 * static_cast<double>(state.m[i]) + (1.0 - beta1) * g;
    const double v = beta2 * static_cast<double>(state.v[i]) + (1.0 - beta2) * g * g;
    state.m[i] = static_cast<S>(m);
    state.v[i] = static_cast<S>(v);
    param[i] = static_cast<S>(static_cast<double>(param[i]) -
                              lr * (m / c1) / (std::sqrt(v / c2) + eps));
  }
}

// ---- config ---------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (dataset.empty()) throw ConfigError("training needs a dataset path");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be positive");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(lr_decay > 0) || lr_decay > 1) throw ConfigError("lr_decay must lie in (0, 1]");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j{{"model", nlohmann::json::parse(model_config_to_json(cfg.model))},
                   {"dataset", cfg.dataset},
                   {"out_dir", cfg.out_dir},
                   {"pretrained", cfg.pretrained},
                   {"epochs", cfg.epochs},
                   {"batch", cfg.batch},
                   {"steps_per_epoch", cfg.steps_per_epoch},
                   {"lr", cfg.lr},
                   {"lr_decay", cfg.lr_decay},
                   {"seed", cfg.seed},
                   {"flip_augment", cfg.flip_augment}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") cfg.model = model_config_from_json(value.dump());
      else if (key == "dataset") cfg.dataset = value.get<std::string>();
      else if (key == "out_dir") cfg.out_dir = value.get<std::string>();
      else if (key == "pretrained") cfg.pretrained = value.get<std::string>();
      else if (key == "epochs") cfg.epochs = value.get<int64_t>();
      else if (key == "batch") cfg.batch = value.get<int64_t>();
      else if (key == "steps_per_epoch") cfg.steps_per_epoch = value.get<int64_t>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "lr_decay") cfg.lr_decay = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<uint64_t>();
      else if (key == "flip_augment") cfg.flip_augment = value.get<bool>();
      else throw ConfigError("unknown train config key: \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config field has the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---- window plumbing -------------------------------------------------------

namespace {

std::vector<int64_t> output_frames(const ModelConfig& cfg) {
  if (cfg.output_mode == OutputMode::kIdctFull) {
    std::vector<int64_t> all(static_cast<size_t>(cfg.receptive_field));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  return supervision_frames(cfg.receptive_field, cfg.frames);
}

// 2D input window [T x J x 2] for one view.
Tensor<float> window_input(const Sequence& seq, int64_t view, int64_t t0, int64_t T) {
  const int64_t J = seq.pose3d.extent(1);
  Tensor<float> x({T, J, 2});
  std::copy(seq.pose2d[static_cast<size_t>(view)].data() + t0 * J * 2,
            seq.pose2d[static_cast<size_t>(view)].data() + (t0 + T) * J * 2, x.data());
  return x;
}

// Root-centred mm targets [f x J x 3] at the supervised frames, expressed in
// `view`'s camera basis so the regression target shares the input view's
// geometry: the task stays well-posed across views and a horizontal flip of
// the 2D input corresponds exactly to a horizontal flip of the target.
Tensor<float> window_target(const Sequence& seq, int64_t view, int64_t t0,
                            const std::vector<int64_t>& sup) {
  const int64_t J = seq.pose3d.extent(1);
  const std::array<double, 9>& r = seq.cameras[static_cast<size_t>(view)].r;
  Tensor<float> y({static_cast<int64_t>(sup.size()), J, 3});
  for (size_t i = 0; i < sup.size(); ++i) {
    const int64_t t = t0 + sup[i];
    for (int64_t j = 0; j < J; ++j) {
      double d[3];
      for (int64_t k = 0; k < 3; ++k)
        d[k] = static_cast<double>(seq.pose3d[(t * J + j) * 3 + k]) -
               static_cast<double>(seq.pose3d[(t * J + 0) * 3 + k]);
      for (int64_t k = 0; k < 3; ++k)
        y[(static_cast<int64_t>(i) * J + j) * 3 + k] =
            static_cast<float>(r[k * 3] * d[0] + r[k * 3 + 1] * d[1] + r[k * 3 + 2] * d[2]);
    }
  }
  return y;
}

struct EvalAccum {
  int64_t frames = 0, center_frames = 0, pframes = 0;
  double sum_all = 0, sum_center = 0, sum_p = 0;
};

void finish(ActionMetrics& out, const EvalAccum& a) {
  out.frames = a.frames;
  out.mpjpe_all = a.frames ? a.sum_all / static_cast<double>(a.frames) : 0;
  out.mpjpe_center = a.center_frames ? a.sum_center / static_cast<double>(a.center_frames) : 0;
  out.p_mpjpe = a.pframes ? a.sum_p / static_cast<double>(a.pframes) : 0;
}

// Per-frame mean joint error of one window, accumulated into `a`.
void accumulate_window(EvalAccum& a, const Tensor<float>& pred, const Tensor<float>& gt,
                       int64_t* skipped) {
  const int64_t f = pred.extent(0), J = pred.extent(1);
  for (int64_t i = 0; i < f; ++i) {
    double frame_err = 0;
    for (int64_t j = 0; j < J; ++j) {
      double d2 = 0;
      for (int64_t k = 0; k < 3; ++k) {
        const double d = static_cast<double>(pred[(i * J + j) * 3 + k]) -
                         static_cast<double>(gt[(i * J + j) * 3 + k]);
        d2 += d * d;
      }
      frame_err += std::sqrt(d2);
    }
    frame_err /= static_cast<double>(J);
    a.sum_all += frame_err;
    ++a.frames;
    if (i == f / 2) {
      a.sum_center += frame_err;
      ++a.center_frames;
    }
  }
  int64_t skip = 0;
  const double p = p_mpjpe(cast_tensor<double>(pred), cast_tensor<double>(gt), &skip);
  a.sum_p += p * static_cast<double>(f - skip);
  a.pframes += f - skip;
  if (skipped) *skipped += skip;
}

}  // namespace

// ---- evaluation --------------------------------------------------------------

EvalReport evaluate(const NanoHTNetParams<float>& params, const Dataset& ds) {
  const ModelConfig& cfg = params.config;
  const std::vector<int64_t> sup = output_frames(cfg);
  std::map<int32_t, EvalAccum> by_action;
  EvalAccum total;
  EvalReport report;
  for (const Sequence& seq : ds.sequences) {
    const int64_t T = cfg.receptive_field;
    for (int64_t t0 = 0; t0 + T <= seq.pose3d.extent(0); t0 += T) {
      Tensor<float> x = window_input(seq, 0, t0, T);
      Tensor<float> pred = model_forward(params, x);
      Tensor<float> gt = window_target(seq, 0, t0, sup);
      accumulate_window(by_action[seq.action], pred, gt, nullptr);
      accumulate_window(total, pred, gt, &report.skipped_frames);
      ++report.windows;
    }
  }
  if (report.windows == 0)
    throw ContractError("no evaluable windows: every sequence is shorter than the receptive field");
  for (const auto& [action, accum] : by_action) finish(report.per_action[action], accum);
  finish(report.overall, total);
  return report;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint, const std::string& dataset) {
  const CheckpointData ck = read_checkpoint(checkpoint);
  NanoHTNetParams<float> params = make_model<float>(ck.config, 0);
  load_model(params, ck, /*strict=*/true);
  return evaluate(params, read_dataset(dataset));
}

std::string eval_report_json(const EvalReport& report) {
  const auto metrics = [](const ActionMetrics& m) {
    return nlohmann::json{{"frames", m.frames},
                          {"mpjpe_all_mm", m.mpjpe_all},
                          {"mpjpe_center_mm", m.mpjpe_center},
                          {"p_mpjpe_mm", m.p_mpjpe}};
  };
  nlohmann::json per;
  for (const auto& [action, m] : report.per_action) per[std::to_string(action)] = metrics(m);
  nlohmann::json j{{"overall", metrics(report.overall)},
                   {"per_action", per},
                   {"windows", report.windows},
                   {"skipped_frames", report.skipped_frames}};
  return j.dump(2);
}

double temporal_mean_baseline(const Dataset& ds, const ModelConfig& cfg) {
  const std::vector<int64_t> sup = output_frames(cfg);
  const int64_t f = static_cast<int64_t>(sup.size());
  EvalAccum total;
  int64_t windows = 0;
  for (const Sequence& seq : ds.sequences) {
    const int64_t T = cfg.receptive_field;
    const int64_t J = seq.pose3d.extent(1);
    std::vector<int64_t> all(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) all[static_cast<size_t>(i)] = i;
    for (int64_t t0 = 0; t0 + T <= seq.pose3d.extent(0); t0 += T) {
      const Tensor<float> gt = window_target(seq, 0, t0, sup);
      const Tensor<float> whole = window_target(seq, 0, t0, all);
      Tensor<float> pred({f, J, 3});
      for (int64_t j = 0; j < J * 3; ++j) {
        double mean = 0;
        for (int64_t i = 0; i < T; ++i) mean += static_cast<double>(whole[i * J * 3 + j]);
        mean /= static_cast<double>(T);
        for (int64_t i = 0; i < f; ++i) pred[i * J * 3 + j] = static_cast<float>(mean);
      }
      accumulate_window(total, pred, gt, nullptr);
      ++windows;
    }
  }
  if (windows == 0)
    throw ContractError("no evaluable windows: every sequence is shorter than the receptive field");
  return total.sum_all / static_cast<double>(total.frames);
}

// ---- training ----------------------------------------------------------------

namespace {

// Validation MPJPE (all supervised frames) over a subset of sequences.
double validation_mpjpe(const NanoHTNetParams<float>& params, const Dataset& ds,
                        const std::vector<int64_t>& seq_idx) {
  const ModelConfig& cfg = params.config;
  const std::vector<int64_t> sup = output_frames(cfg);
  double acc = 0;
  int64_t frames = 0;
  for (int64_t si : seq_idx) {
    const Sequence& seq = ds.sequences[static_cast<size_t>(si)];
    for (int64_t t0 = 0; t0 + cfg.receptive_field <= seq.pose3d.extent(0);
         t0 += cfg.receptive_field) {
      Tensor<float> pred = model_forward(params, window_input(seq, 0, t0, cfg.receptive_field));
      Tensor<float> gt = window_target(seq, 0, t0, sup);
      acc += mpjpe(pred, gt) * static_cast<double>(gt.extent(0));
      frames += gt.extent(0);
    }
  }
  if (frames == 0) throw ContractError("validation split has no window of receptive-field length");
  return acc / static_cast<double>(frames);
}

}  // namespace

TrainReport train(const TrainConfig& cfg) {
  cfg.validate();
  const Dataset ds = read_dataset(cfg.dataset);
  const SkeletonTopology& topo = h36m17();
  const int64_t T = cfg.model.receptive_field;

  std::vector<int64_t> train_seqs, val_seqs;
  for (int64_t s = 0; s < static_cast<int64_t>(ds.sequences.size()); ++s) {
    if (ds.sequences[static_cast<size_t>(s)].pose3d.extent(0) < T) continue;
    train_seqs.push_back(s);
  }
  if (train_seqs.empty())
    throw ContractError("no sequence is as long as the receptive field; nothing to train on");
  if (train_seqs.size() >= 2) {
    const size_t n_val = std::max<size_t>(1, train_seqs.size() / 5);
    val_seqs.assign(train_seqs.end() - static_cast<std::ptrdiff_t>(n_val), train_seqs.end());
    train_seqs.resize(train_seqs.size() - n_val);
  } else {
    val_seqs = train_seqs;  // single usable sequence: validate in-sample
  }

  NanoHTNetParams<float> params = make_model<float>(cfg.model, cfg.seed);
  if (!cfg.pretrained.empty()) {
    const CheckpointData ck = read_checkpoint(cfg.pretrained);
    load_model(params, ck, /*strict=*/false);
  }

  std::filesystem::create_directories(cfg.out_dir);
  const std::string ckpt_path =
      (std::filesystem::path(cfg.out_dir) / "model_best.nhtckpt").string();
  const std::string log_path = (std::filesystem::path(cfg.out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open training log for writing: " + log_path);

  const std::vector<int64_t> sup = output_frames(cfg.model);
  AdamOpt<float> opt;
  RngStream rng(cfg.seed, "train.windows");
  TrainReport report;
  report.best_val_mpjpe = std::numeric_limits<double>::infinity();

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    opt.lr = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    double epoch_loss = 0;
    for (int64_t step = 0; step < cfg.steps_per_epoch; ++step) {
      std::map<std::string, Tensor<float>> grads;
      double batch_loss = 0;
      for (int64_t b = 0; b < cfg.batch; ++b) {
        const int64_t si = train_seqs[static_cast<size_t>(
            rng.next_below(static_cast<uint64_t>(train_seqs.size())))];
        const Sequence& seq = ds.sequences[static_cast<size_t>(si)];
        const int64_t t0 =
            static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(seq.pose3d.extent(0) - T + 1)));
        const int64_t view =
            static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(seq.pose2d.size())));
        Tensor<float> x = window_input(seq, view, t0, T);
        Tensor<float> y = window_target(seq, view, t0, sup);
        if (cfg.flip_augment && rng.next_unit() < 0.5) {
          x = horizontal_flip(x, topo);
          y = horizontal_flip(y, topo);
        }
        Tape<float> tape;
        visit_model(params, [&](const std::string&, Tensor<float>& t) { tape.track(t); });
        Tensor<float> pred = model_forward(params, x, &tape);
        Tensor<float> loss = mpjpe_loss(pred, y, &tape);
        if (!std::isfinite(static_cast<double>(loss[0])))
          throw ContractError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step));
        batch_loss += static_cast<double>(loss[0]);
        tape.backward(loss.node);
        visit_model(params, [&](const std::string& name, Tensor<float>& t) {
          Tensor<float> g = tape.grad(t.node);
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, std::move(g));
          } else {
            for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
          }
          t.node = -1;
        });
      }
      const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
      visit_model(params, [&](const std::string& name, Tensor<float>& t) {
        Tensor<float>& g = grads.at(name);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] *= inv_batch;
        opt.step(name, t, g);
      });
      epoch_loss += batch_loss / static_cast<double>(cfg.batch);
    }
    epoch_loss /= static_cast<double>(cfg.steps_per_epoch);

    const double val = validation_mpjpe(params, ds, val_seqs);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    if (val < report.best_val_mpjpe) {
      report.best_val_mpjpe = val;
      save_model(ckpt_path, params);
    }
    EpochLog entry{epoch, epoch_loss, val, opt.lr, seconds};
    report.epochs.push_back(entry);
    log << nlohmann::json{{"epoch", epoch},
                          {"train_loss_mm", epoch_loss},
                          {"val_mpjpe_mm", val},
                          {"lr", opt.lr},
                          {"seconds", seconds}}
               .dump()
        << "\n";
    log.flush();
  }
  report.checkpoint_path = ckpt_path;
  report.log_path = log_path;
  return report;
}

// ---- benchmarking --------------------------------------------------------------

BenchReport bench_model(const ModelConfig& cfg, int64_t batch, int64_t iterations,
                        int64_t warmup, uint64_t seed) {
  if (batch < 1 || iterations < 1 || warmup < 0)
    throw ConfigError("bench needs batch >= 1, iterations >= 1, warmup >= 0");
  NanoHTNetParams<float> params = make_model<float>(cfg, seed);
  std::vector<Tensor<float>> inputs;
  for (int64_t b = 0; b < batch; ++b) {
    Tensor<float> x({cfg.receptive_field, cfg.joints, 2});
    fill_uniform(x, -1.0f, 1.0f, seed, static_cast<uint64_t>(b) + 1);
    inputs.push_back(std::move(x));
  }
  volatile float sink = 0;
  std::vector<double> per_iter;
  for (int64_t it = 0; it < warmup + iterations; ++it) {
    const auto tic = std::chrono::steady_clock::now();
    for (const Tensor<float>& x : inputs) {
      Tensor<float> y = model_forward(params, x);
      sink = sink + y[0];
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();
    if (it >= warmup) per_iter.push_back(ms);
  }
  std::sort(per_iter.begin(), per_iter.end());
  const double total_ms = std::accumulate(per_iter.begin(), per_iter.end(), 0.0);
  BenchReport r;
  r.batch = batch;
  r.iterations = iterations;
  r.p50_ms = per_iter[per_iter.size() / 2];
  r.p95_ms = per_iter[std::min(per_iter.size() - 1, per_iter.size() * 95 / 100)];
  r.windows_per_s = static_cast<double>(batch * iterations) / (total_ms / 1000.0);
  r.analytic_flops = flops_count(cfg).total();
  r.achieved_gflops = static_cast<double>(r.analytic_flops) * r.windows_per_s / 1e9;
  return r;
}

PairedTiming bench_attention_tokenizations(int64_t joints, int64_t T, int64_t t_k,
                                           int64_t channels, int64_t heads, int64_t iterations,
                                           uint64_t seed) {
  if (t_k > T) throw ConfigError("t_k must not exceed T");
  AttnParams<float> p;
  p.wq = Tensor<float>({channels, channels});
  p.wk = Tensor<float>({channels, channels});
  p.wv = Tensor<float>({channels, channels});
  p.wo = Tensor<float>({channels, channels});
  fill_xavier(p.wq, channels, channels, seed, 1);
  fill_xavier(p.wk, channels, channels, seed, 2);
  fill_xavier(p.wv, channels, channels, seed, 3);
  fill_xavier(p.wo, channels, channels, seed, 4);
  p.ln.gamma = Tensor<float>::full({channels}, 1.0f);
  p.ln.beta = Tensor<float>({channels});

  Tensor<float> xs({joints, channels}), xt({t_k, channels}), xdense({T, channels});
  fill_uniform(xs, -1.0f, 1.0f, seed, 11);
  fill_uniform(xt, -1.0f, 1.0f, seed, 12);
  fill_uniform(xdense, -1.0f, 1.0f, seed, 13);

  volatile float sink = 0;
  std::vector<double> freq_ms, dense_ms;
  for (int64_t it = 0; it < iterations + 1; ++it) {  // first lap warms up
    auto tic = std::chrono::steady_clock::now();
    sink = sink + attention_forward(xs, heads, p)[0];
    sink = sink + attention_forward(xt, heads, p)[0];
    const double f_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();
    tic = std::chrono::steady_clock::now();
    for (int64_t i = 0; i < T; ++i) sink = sink + attention_forward(xs, heads, p)[0];
    for (int64_t i = 0; i < joints; ++i) sink = sink + attention_forward(xdense, heads, p)[0];
    const double d_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();
    if (it > 0) {
      freq_ms.push_back(f_ms);
      dense_ms.push_back(d_ms);
    }
  }
  std::sort(freq_ms.begin(), freq_ms.end());
  std::sort(dense_ms.begin(), dense_ms.end());
  return {freq_ms[freq_ms.size() / 2], dense_ms[dense_ms.size() / 2]};
}

// ---- instantiations ------------------------------------------------------------

template double mpjpe(const Tensor<float>&, const Tensor<float>&);
template double mpjpe(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> mpjpe_loss(const Tensor<float>&, const Tensor<float>&, Tape<float>*);
template Tensor<double> mpjpe_loss(const Tensor<double>&, const Tensor<double>&, Tape<double>*);
template void adam_step(Tensor<float>&, const Tensor<float>&, AdamState<float>&, double, double,
                        double, double);
template void adam_step(Tensor<double>&, const Tensor<double>&, AdamState<double>&, double, double,
                        double, double);

}  // namespace nht
