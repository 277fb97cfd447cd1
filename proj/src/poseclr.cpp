#include "nanohtnet/poseclr.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "nanohtnet/errors.hpp"
#include "nanohtnet/rng.hpp"

namespace nht {

// ---- config ---------------------------------------------------------------

void PretrainConfig::validate() const {
  model.validate();
  if (views < 2) throw ConfigError("contrastive pre-training needs at least 2 views");
  if (bank_capacity < 1 || bank_capacity % views != 0)
    throw ConfigError("bank_capacity must be a positive multiple of views");
  if (slice < 1) throw ConfigError("slice must be >= 1");
  if (decay < 0 || decay > 1) throw ConfigError("decay must lie in [0, 1]");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
}

std::string pretrain_config_to_json(const PretrainConfig& cfg) {
  nlohmann::json j{{"model", nlohmann::json::parse(model_config_to_json(cfg.model))},
                   {"dataset", cfg.dataset},
                   {"out_dir", cfg.out_dir},
                   {"views", cfg.views},
                   {"bank_capacity", cfg.bank_capacity},
                   {"slice", cfg.slice},
                   {"decay", cfg.decay},
                   {"temperature", cfg.temperature},
                   {"embed_dim", cfg.embed_dim},
                   {"epochs", cfg.epochs},
                   {"lr", cfg.lr},
                   {"seed", cfg.seed}};
  return j.dump(2);
}

PretrainConfig pretrain_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pretrain config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("pretrain config must be a JSON object");
  PretrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") cfg.model = model_config_from_json(value.dump());
      else if (key == "dataset") cfg.dataset = value.get<std::string>();
      else if (key == "out_dir") cfg.out_dir = value.get<std::string>();
      else if (key == "views") cfg.views = value.get<int64_t>();
      else if (key == "bank_capacity") cfg.bank_capacity = value.get<int64_t>();
      else if (key == "slice") cfg.slice = value.get<int64_t>();
      else if (key == "decay") cfg.decay = value.get<double>();
      else if (key == "temperature") cfg.temperature = value.get<double>();
      else if (key == "embed_dim") cfg.embed_dim = value.get<int64_t>();
      else if (key == "epochs") cfg.epochs = value.get<int64_t>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<uint64_t>();
      else throw ConfigError("unknown pretrain config key: \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pretrain config field has the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---- encoder ---------------------------------------------------------------

template <class S>
ProjectionParams<S> make_projection(int64_t width, int64_t embed_dim, uint64_t seed) {
  if (width < 1 || embed_dim < 1) throw ConfigError("projection sizes must be positive");
  ProjectionParams<S> p;
  p.w1 = Tensor<S>({width, width});
  p.b1 = Tensor<S>({width});
  p.w2 = Tensor<S>({width, embed_dim});
  p.b2 = Tensor<S>({embed_dim});
  fill_xavier(p.w1, width, width, seed, hash_name("proj.w1"));
  fill_xavier(p.w2, width, embed_dim, seed, hash_name("proj.w2"));
  return p;
}

template <class S>
Encoder<S> make_encoder(const ModelConfig& cfg, int64_t embed_dim, uint64_t seed) {
  Encoder<S> e;
  e.backbone = make_model<S>(cfg, seed);
  e.proj = make_projection<S>(cfg.fcn(), embed_dim, seed);
  return e;
}

template <class S>
EncoderPair<S> make_encoder_pair(const PretrainConfig& cfg) {
  EncoderPair<S> pair;
  pair.query = make_encoder<S>(cfg.model, cfg.embed_dim, cfg.seed);
  pair.momentum.assign(static_cast<size_t>(cfg.views), pair.query);
  return pair;
}

template <class S>
Tensor<S> encode_embedding(const Encoder<S>& enc, const Tensor<S>& x2d, Tape<S>* tape) {
  BackboneOut<S> out = backbone_forward(enc.backbone, x2d, tape);
  Tensor<S> tokens = concat_rows(out.f_s, out.f_t, tape);
  Tensor<S> pooled = mean_rows(tokens, tape);
  Tensor<S> hidden = gelu(add_row(matmul(pooled, enc.proj.w1, tape), enc.proj.b1, tape), tape);
  Tensor<S> embed = add_row(matmul(hidden, enc.proj.w2, tape), enc.proj.b2, tape);
  return l2_normalize_lastdim(embed, tape);
}

// ---- memory bank -------------------------------------------------------------

template <class S>
MemoryBank<S>::MemoryBank(int64_t capacity, int64_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity < 1 || dim < 1) throw ContractError("memory bank needs positive capacity and dim");
  ring_ = Tensor<S>({capacity, dim});
}

template <class S>
void MemoryBank<S>::enqueue(const Tensor<S>& v) {
  if (v.numel() != dim_)
    throw DimError("bank entry has " + std::to_string(v.numel()) + " values, expected " +
                   std::to_string(dim_));
  double n2 = 0;
  for (int64_t i = 0; i < dim_; ++i) n2 += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  if (std::abs(std::sqrt(n2) - 1.0) > 1e-4)
    throw ContractError("memory bank only stores unit vectors");
  for (int64_t i = 0; i < dim_; ++i) ring_[cursor_ * dim_ + i] = v[i];
  cursor_ = (cursor_ + 1) % capacity_;
  fill_ = std::min(fill_ + 1, capacity_);
}

template <class S>
Tensor<S> MemoryBank<S>::snapshot() const {
  if (fill_ == 0) return Tensor<S>();
  Tensor<S> out({fill_, dim_});
  const int64_t oldest = fill_ < capacity_ ? 0 : cursor_;
  for (int64_t k = 0; k < fill_; ++k) {
    const int64_t src = (oldest + k) % capacity_;
    for (int64_t i = 0; i < dim_; ++i) out[k * dim_ + i] = ring_[src * dim_ + i];
  }
  return out;
}

// ---- loss ---------------------------------------------------------------------

template <class S>
Tensor<S> info_nce(const Tensor<S>& q, const std::vector<Tensor<S>>& positives,
                   const Tensor<S>& negatives, S temperature, Tape<S>* tape) {
  if (positives.empty()) throw ContractError("contrastive loss needs at least one positive");
  if (!(temperature > 0)) throw ContractError("temperature must be positive");
  const S inv_t = S(1) / temperature;
  Tensor<S> neg_sims;
  if (!negatives.empty()) neg_sims = matmul(q, transpose(negatives, tape), tape);
  Tensor<S> acc;
  for (const Tensor<S>& k : positives) {
    Tensor<S> s_p = matmul(q, transpose(k, tape), tape);  // [1 x 1]
    Tensor<S> row = negatives.empty()
                        ? s_p
                        : concat_cols(std::vector<Tensor<S>>{s_p, neg_sims}, tape);
    Tensor<S> lse = logsumexp_lastdim(scale(row, inv_t, tape), tape);
    Tensor<S> term = sub(lse, scale(s_p, inv_t, tape), tape);
    acc = acc.empty() ? term : add(acc, term, tape);
  }
  Tensor<S> mean = scale(acc, S(1) / static_cast<S>(positives.size()), tape);
  return reshape(mean, {1}, tape);
}

// ---- momentum update -------------------------------------------------------------

template <class S>
void momentum_update(Encoder<S>& target, const Encoder<S>& source, S m) {
  std::vector<std::pair<std::string, Tensor<S>*>> dst;
  visit_encoder(target, [&](const std::string& name, Tensor<S>& t) { dst.push_back({name, &t}); });
  std::vector<std::pair<std::string, const Tensor<S>*>> src;
  visit_encoder(source,
                [&](const std::string& name, const Tensor<S>& t) { src.push_back({name, &t}); });
  if (dst.size() != src.size()) throw ContractError("momentum encoders must mirror the query");
  for (size_t i = 0; i < dst.size(); ++i) {
    Tensor<S>& t = *dst[i].second;
    const Tensor<S>& s = *src[i].second;
    if (dst[i].first != src[i].first || !t.same_shape(s))
      throw DimError("momentum update: mismatched tensor " + dst[i].first);
    if (t.node != -1)
      throw ContractError("momentum encoders must never be tracked on a tape");
    for (int64_t k = 0; k < t.numel(); ++k) t[k] = m * t[k] + (S(1) - m) * s[k];
  }
}

// ---- slice sampling ---------------------------------------------------------------

std::vector<SliceInstant> sample_slices(const Dataset& ds, int64_t window, int64_t slice,
                                        uint64_t seed, int64_t* skipped) {
  if (slice < 1) throw ConfigError("slice must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (skipped) *skipped = 0;
  std::vector<size_t> order(ds.sequences.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng(seed, "slices");
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.next_below(i))]);

  std::vector<SliceInstant> out;
  for (size_t oi : order) {
    const int64_t frames = ds.sequences[oi].pose3d.extent(0);
    for (int64_t f = 0; f < frames; f += slice) {
      const int64_t t0 = f - window / 2;
      if (t0 < 0 || t0 + window > frames) {
        if (skipped) ++*skipped;
        continue;
      }
      out.push_back({static_cast<int64_t>(oi), f});
    }
  }
  return out;
}

// ---- pre-training ------------------------------------------------------------------

namespace {

Tensor<float> view_window(const Sequence& seq, int64_t view, int64_t t0, int64_t T) {
  const int64_t J = seq.pose3d.extent(1);
  Tensor<float> x({T, J, 2});
  std::copy(seq.pose2d[static_cast<size_t>(view)].data() + t0 * J * 2,
            seq.pose2d[static_cast<size_t>(view)].data() + (t0 + T) * J * 2, x.data());
  return x;
}

double dot(const Tensor<float>& a, const float* b, int64_t n) {
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace

EpochStats pretrain_epoch(const Dataset& ds, EncoderPair<float>& pair, MemoryBank<float>& bank,
                          const PretrainConfig& cfg, AdamOpt<float>& opt, int64_t epoch) {
  if (static_cast<int64_t>(pair.momentum.size()) != cfg.views)
    throw ContractError("encoder pair does not carry one momentum encoder per view");
  for (const Sequence& seq : ds.sequences)
    if (static_cast<int64_t>(seq.pose2d.size()) < cfg.views)
      throw ContractError("dataset carries fewer views than the pre-training config needs");

  const int64_t T = cfg.model.receptive_field;
  const std::vector<SliceInstant> instants =
      sample_slices(ds, T, cfg.slice, rng_u64(cfg.seed, hash_name("epoch.order"),
                                              static_cast<uint64_t>(epoch)));
  RngStream pick(rng_u64(cfg.seed, hash_name("epoch.view"), static_cast<uint64_t>(epoch)), 0);

  EpochStats stats;
  double pos_sum = 0, neg_sum = 0;
  int64_t pos_count = 0, neg_count = 0;
  for (const SliceInstant& inst : instants) {
    const Sequence& seq = ds.sequences[static_cast<size_t>(inst.sequence)];
    const int64_t t0 = inst.frame - T / 2;
    const int64_t qv = static_cast<int64_t>(pick.next_below(static_cast<uint64_t>(cfg.views)));

    Tape<float> tape;
    visit_encoder(pair.query, [&](const std::string&, Tensor<float>& t) { tape.track(t); });
    Tensor<float> q = encode_embedding(pair.query, view_window(seq, qv, t0, T), &tape);

    std::vector<Tensor<float>> keys;
    for (int64_t v = 0; v < cfg.views; ++v)
      keys.push_back(encode_embedding(pair.momentum[static_cast<size_t>(v)],
                                      view_window(seq, v, t0, T)));

    const Tensor<float> snapshot = bank.snapshot();
    Tensor<float> loss =
        info_nce(q, keys, snapshot, static_cast<float>(cfg.temperature), &tape);
    if (!std::isfinite(static_cast<double>(loss[0])))
      throw ContractError("pre-training diverged: non-finite loss at epoch " +
                          std::to_string(epoch) + ", step " + std::to_string(stats.steps));
    stats.mean_loss += static_cast<double>(loss[0]);

    tape.backward(loss.node);
    visit_encoder(pair.query, [&](const std::string& name, Tensor<float>& t) {
      opt.step(name, t, tape.grad(t.node));
      t.node = -1;
    });

    for (Encoder<float>& mom : pair.momentum)
      momentum_update(mom, pair.query, static_cast<float>(cfg.decay));
    for (const Tensor<float>& k : keys) {
      pos_sum += dot(q, k.data(), k.numel());
      ++pos_count;
      bank.enqueue(k);
    }
    for (int64_t r = 0; !snapshot.empty() && r < snapshot.rows(); ++r) {
      neg_sum += dot(q, snapshot.data() + r * snapshot.cols(), snapshot.cols());
      ++neg_count;
    }
    ++stats.steps;
  }
  if (stats.steps == 0)
    throw ContractError("no usable pose instants: sequences are shorter than the window");
  stats.mean_loss /= static_cast<double>(stats.steps);
  stats.mean_pos_sim = pos_count ? pos_sum / static_cast<double>(pos_count) : 0;
  stats.mean_neg_sim = neg_count ? neg_sum / static_cast<double>(neg_count) : 0;
  return stats;
}

PretrainReport pretrain(const PretrainConfig& cfg) {
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("pre-training needs a dataset path");
  const Dataset ds = read_dataset(cfg.dataset);

  EncoderPair<float> pair = make_encoder_pair<float>(cfg);
  MemoryBank<float> bank(cfg.bank_capacity, cfg.embed_dim);
  AdamOpt<float> opt;
  opt.lr = cfg.lr;

  std::filesystem::create_directories(cfg.out_dir);
  const std::string log_path =
      (std::filesystem::path(cfg.out_dir) / "pretrain_log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open pre-training log for writing: " + log_path);

  PretrainReport report;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const EpochStats stats = pretrain_epoch(ds, pair, bank, cfg, opt, epoch);
    report.epochs.push_back(stats);
    log << nlohmann::json{{"epoch", epoch},
                          {"steps", stats.steps},
                          {"mean_loss", stats.mean_loss},
                          {"mean_pos_sim", stats.mean_pos_sim},
                          {"mean_neg_sim", stats.mean_neg_sim},
                          {"bank_fill", bank.fill()}}
               .dump()
        << "\n";
    log.flush();
  }
  report.encoder_path = (std::filesystem::path(cfg.out_dir) / "encoder.nhtckpt").string();
  export_encoder(report.encoder_path, pair.query);
  report.log_path = log_path;
  return report;
}

void export_encoder(const std::string& path, const Encoder<float>& enc) {
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  visit_model(enc.backbone, [&](const std::string& name, const Tensor<float>& t) {
    if (name.rfind("head.", 0) != 0) tensors.push_back({name, &t});
  });
  write_checkpoint(path, "encoder", enc.backbone.config, tensors);
}

// ---- instantiations -----------------------------------------------------------

#define NHT_POSECLR_INSTANTIATE(S)                                                            \
  template ProjectionParams<S> make_projection<S>(int64_t, int64_t, uint64_t);                \
  template Encoder<S> make_encoder<S>(const ModelConfig&, int64_t, uint64_t);                 \
  template EncoderPair<S> make_encoder_pair<S>(const PretrainConfig&);                        \
  template Tensor<S> encode_embedding<S>(const Encoder<S>&, const Tensor<S>&, Tape<S>*);      \
  template class MemoryBank<S>;                                                               \
  template Tensor<S> info_nce<S>(const Tensor<S>&, const std::vector<Tensor<S>>&,             \
                                 const Tensor<S>&, S, Tape<S>*);                              \
  template void momentum_update<S>(Encoder<S>&, const Encoder<S>&, S);

NHT_POSECLR_INSTANTIATE(float)
NHT_POSECLR_INSTANTIATE(double)

}  // namespace nht
