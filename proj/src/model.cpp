#include "nanohtnet/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <type_traits>

#include <json.hpp>

#include "nanohtnet/errors.hpp"
#include "nanohtnet/rng.hpp"

namespace nht {

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  if (joints != 17) throw ConfigError("joints must be 17 (fixed human topology)");
  if (receptive_field < 1) throw ConfigError("receptive_field must be positive");
  if (frames < 1 || frames > receptive_field)
    throw ConfigError("frames must lie in [1, receptive_field]");
  if (channels < 6 || channels % 6 != 0)
    throw ConfigError("channels must be a positive multiple of 6 (split into thirds and halves)");
  if (layers < 1) throw ConfigError("layers must be positive");
  if (heads < 1) throw ConfigError("heads must be positive");
  if ((channels / 3) % heads != 0 || (channels / 2) % heads != 0)
    throw ConfigError("channels/3 and channels/2 must both be divisible by heads");
  if (fcn_width < 0) throw ConfigError("fcn_width must be non-negative (0 = channels)");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j{
      {"joints", cfg.joints},
      {"receptive_field", cfg.receptive_field},
      {"frames", cfg.frames},
      {"channels", cfg.channels},
      {"layers", cfg.layers},
      {"heads", cfg.heads},
      {"fcn_width", cfg.fcn_width},
      {"ipc_enabled", cfg.ipc_enabled},
      {"output_mode", cfg.output_mode == OutputMode::kSubsample ? "subsample" : "idct_full"},
  };
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "joints") cfg.joints = value.get<int64_t>();
      else if (key == "receptive_field") cfg.receptive_field = value.get<int64_t>();
      else if (key == "frames") cfg.frames = value.get<int64_t>();
      else if (key == "channels") cfg.channels = value.get<int64_t>();
      else if (key == "layers") cfg.layers = value.get<int64_t>();
      else if (key == "heads") cfg.heads = value.get<int64_t>();
      else if (key == "fcn_width") cfg.fcn_width = value.get<int64_t>();
      else if (key == "ipc_enabled") cfg.ipc_enabled = value.get<bool>();
      else if (key == "output_mode") {
        const std::string mode = value.get<std::string>();
        if (mode == "subsample") cfg.output_mode = OutputMode::kSubsample;
        else if (mode == "idct_full") cfg.output_mode = OutputMode::kIdctFull;
        else throw ConfigError("output_mode must be \"subsample\" or \"idct_full\", got \"" + mode + "\"");
      } else {
        throw ConfigError("unknown model config key: \"" + key + "\"");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config field has the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---- construction -----------------------------------------------------------

template <class S>
NanoHTNetParams<S> make_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int64_t T = cfg.receptive_field, J = cfg.joints, tk = cfg.frames;
  const int64_t C = cfg.channels, cl = cfg.fcn();

  NanoHTNetParams<S> p;
  p.config = cfg;
  p.spatial_embed.w = Tensor<S>({2 * T, C});
  p.spatial_embed.b = Tensor<S>({C});
  p.spatial_embed.pos = Tensor<S>({J, C});
  p.temporal_embed.w = Tensor<S>({2 * J, C});
  p.temporal_embed.b = Tensor<S>({C});
  p.temporal_embed.pos = Tensor<S>({tk, C});
  fill_xavier(p.spatial_embed.w, 2 * T, C, seed, hash_name("embed.spatial.w"));
  fill_xavier(p.temporal_embed.w, 2 * J, C, seed, hash_name("embed.temporal.w"));
  for (int64_t l = 0; l < cfg.layers; ++l) {
    p.smix.push_back(make_spatial_mixer<S>(C, cfg.heads, seed, "smix." + std::to_string(l)));
    p.tmix.push_back(make_temporal_mixer<S>(C, cfg.heads, seed, "tmix." + std::to_string(l)));
  }
  p.s_fcn_w = Tensor<S>({C, cl});
  p.s_fcn_b = Tensor<S>({cl});
  p.t_fcn_w = Tensor<S>({C, cl});
  p.t_fcn_b = Tensor<S>({cl});
  fill_xavier(p.s_fcn_w, C, cl, seed, hash_name("s_fcn.w"));
  fill_xavier(p.t_fcn_w, C, cl, seed, hash_name("t_fcn.w"));
  p.head_wt = Tensor<S>({cl, 3});
  p.head_ws = Tensor<S>({cl, 3});
  p.head_b = Tensor<S>({3});
  // Both head blocks are fan-in-matched to the concatenated feature pair.
  fill_xavier(p.head_wt, 2 * cl, 3, seed, hash_name("head.wt"));
  fill_xavier(p.head_ws, 2 * cl, 3, seed, hash_name("head.ws"));
  return p;
}

// ---- forward -----------------------------------------------------------------

namespace {

template <class S>
Tensor<S> to_scalar(const Tensor<double>& t) {
  if constexpr (std::is_same_v<S, double>) return t;
  else return cast_tensor<S>(t);
}

}  // namespace

template <class S>
BackboneOut<S> backbone_forward(const NanoHTNetParams<S>& p, const Tensor<S>& x2d, Tape<S>* tape,
                                AttnMaps<S>* attn) {
  const ModelConfig& cfg = p.config;
  const int64_t T = cfg.receptive_field, J = cfg.joints, tk = cfg.frames;
  if (x2d.shape() != Shape{T, J, 2})
    throw DimError("input window must be [" + std::to_string(T) + " x " + std::to_string(J) +
                   " x 2], got " + shape_str(x2d.shape()));
  if (x2d.node >= 0)
    throw ContractError("input windows must be constants; gradients flow to parameters only");

  // Spatial tokens: one row per joint holding its full interleaved (x, y)
  // trajectory, so the token count stays J regardless of T.
  Tensor<S> xs({J, 2 * T});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t j = 0; j < J; ++j) {
      xs.data()[j * 2 * T + 2 * t + 0] = x2d[(t * J + j) * 2 + 0];
      xs.data()[j * 2 * T + 2 * t + 1] = x2d[(t * J + j) * 2 + 1];
    }
  // Temporal tokens: per-frame coordinate rows compressed to the lowest
  // `frames` frequency components.
  Tensor<S> xt(Shape{T, 2 * J}, std::vector<S>(x2d.data(), x2d.data() + x2d.numel()));
  Tensor<S> ct = dct_lowpass(xt, tk);  // [tk x 2J]

  Tensor<S> zs = add(add_row(matmul(xs, p.spatial_embed.w, tape), p.spatial_embed.b, tape),
                     p.spatial_embed.pos, tape);
  Tensor<S> zt = add(add_row(matmul(ct, p.temporal_embed.w, tape), p.temporal_embed.b, tape),
                     p.temporal_embed.pos, tape);

  const SkeletonTopology& topo = h36m17();
  const Tensor<S> adj_s = to_scalar<S>(normalized_adjacency(topo.joints, topo.edges));
  const Tensor<S> adj_t = to_scalar<S>(path_adjacency(tk));

  for (int64_t l = 0; l < cfg.layers; ++l) {
    Tensor<S>* amap_s = nullptr;
    Tensor<S>* amap_t = nullptr;
    if (attn) {
      attn->spatial.emplace_back();
      attn->temporal.emplace_back();
      amap_s = &attn->spatial.back();
      amap_t = &attn->temporal.back();
    }
    zs = spatial_mixer_forward(zs, adj_s, topo, cfg.heads, p.smix[static_cast<size_t>(l)],
                               cfg.ipc_enabled, tape, amap_s);
    zt = temporal_mixer_forward(zt, adj_t, cfg.heads, p.tmix[static_cast<size_t>(l)], tape,
                                amap_t);
  }

  BackboneOut<S> out;
  out.f_s = add_row(matmul(zs, p.s_fcn_w, tape), p.s_fcn_b, tape);
  out.f_t = add_row(matmul(zt, p.t_fcn_w, tape), p.t_fcn_b, tape);
  return out;
}

template <class S>
Tensor<S> model_forward(const NanoHTNetParams<S>& p, const Tensor<S>& x2d, Tape<S>* tape,
                        AttnMaps<S>* attn) {
  const ModelConfig& cfg = p.config;
  const int64_t T = cfg.receptive_field, J = cfg.joints, tk = cfg.frames;
  BackboneOut<S> bo = backbone_forward(p, x2d, tape, attn);
  Tensor<S> at = matmul(bo.f_t, p.head_wt, tape);  // [tk x 3]
  Tensor<S> as = matmul(bo.f_s, p.head_ws, tape);  // [J x 3]
  Tensor<S> o = reshape(outer_sum(at, as, tape), {tk * J, 3}, tape);
  o = add_row(o, p.head_b, tape);
  if (cfg.output_mode == OutputMode::kSubsample) return reshape(o, {tk, J, 3}, tape);
  Tensor<S> full = idct_padded(reshape(o, {tk, J * 3}, tape), T, tape);
  return reshape(full, {T, J, 3}, tape);
}

std::vector<int64_t> supervision_frames(int64_t T, int64_t frames) {
  if (frames < 1 || frames > T)
    throw ContractError("supervision frame count must lie in [1, T]");
  std::vector<int64_t> idx(static_cast<size_t>(frames));
  for (int64_t m = 0; m < frames; ++m)
    idx[static_cast<size_t>(m)] = (2 * m + 1) * T / (2 * frames);
  return idx;
}

// ---- accounting -----------------------------------------------------------------

std::map<std::string, int64_t> param_breakdown(const ModelConfig& cfg) {
  NanoHTNetParams<float> p = make_model<float>(cfg, 0);
  std::map<std::string, int64_t> out;
  visit_model(p, [&out](const std::string& name, const Tensor<float>& t) {
    out[name.substr(0, name.find('.'))] += t.numel();
  });
  return out;
}

int64_t param_count(const ModelConfig& cfg) {
  int64_t total = 0;
  for (const auto& [group, n] : param_breakdown(cfg)) total += n;
  return total;
}

int64_t attention_complexity(Tokenization mode, int64_t joints, int64_t T, int64_t t_k,
                             int64_t channels) {
  if (mode == Tokenization::kDense) return joints * T * T * channels + T * joints * joints * channels;
  return t_k * t_k * channels + joints * joints * channels;
}

namespace {

int64_t macs(int64_t m, int64_t k, int64_t n) { return 2 * m * k * n; }

constexpr int64_t kGeluCost = 8;     // erf approximated at exp-class cost
constexpr int64_t kSoftmaxCost = 8;  // max, subtract, exp(4), sum, divide
constexpr int64_t kLnElemCost = 7;   // centre, square, normalize, affine
constexpr int64_t kLnRowCost = 3;    // mean/var divides + sqrt

struct LayerCost {
  int64_t gcn_projection = 0, gcn_adjacency = 0, ipc_conv = 0, ipc_mlp = 0;
  int64_t attention_projection = 0, attention_token = 0, aggregate_mlp = 0, elementwise = 0;
};

// One mixer layer over n tokens of total width 3c (spatial, with the limb
// stage) or 2c (temporal, ipc=false); c is the per-split width.
LayerCost mixer_layer_cost(int64_t n, int64_t c, int64_t heads, int64_t full, bool ipc) {
  LayerCost lc;
  // Residual graph block: A*X, (AX)*W1, gelu, A*h, h*W2, residual add.
  lc.gcn_projection += 2 * macs(n, c, c);
  lc.gcn_adjacency += 2 * macs(n, n, c);
  lc.elementwise += kGeluCost * n * c + n * c;
  if (ipc) {
    lc.elementwise += n * c;  // progressive input add
    for (int64_t k : {int64_t{2}, int64_t{3}}) {
      lc.ipc_conv += macs(4, k * c, c);
      lc.ipc_mlp += macs(4, c, 2 * c) + macs(4, 2 * c, c);
      // conv bias+gelu, LN, MLP biases + hidden gelu, residual add
      lc.elementwise += 4 * c + kGeluCost * 4 * c;
      lc.elementwise += kLnElemCost * 4 * c + kLnRowCost * 4;
      lc.elementwise += 4 * 2 * c + kGeluCost * 4 * 2 * c + 4 * c + 4 * c;
    }
    lc.elementwise += 4 * c + 8 * c;  // distal + whole-limb placement adds
  }
  // Attention: progressive add, 4 projections, QK^T, scale, softmax, AV,
  // LN + residual.
  lc.elementwise += n * c;
  lc.attention_projection += 4 * macs(n, c, c);
  lc.attention_token += macs(n, c, n) + macs(n, n, c);
  lc.elementwise += heads * n * n + kSoftmaxCost * heads * n * n;
  lc.elementwise += kLnElemCost * n * c + kLnRowCost * n + n * c;
  // Aggregate over the full width.
  lc.aggregate_mlp += 2 * macs(n, full, full);
  lc.elementwise += kLnElemCost * n * full + kLnRowCost * n;
  lc.elementwise += 2 * n * full + kGeluCost * n * full + n * full;
  return lc;
}

}  // namespace

FlopsBreakdown flops_count(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t T = cfg.receptive_field, J = cfg.joints, tk = cfg.frames;
  const int64_t C = cfg.channels, cl = cfg.fcn(), L = cfg.layers, h = cfg.heads;

  FlopsBreakdown fb;
  fb.dct = macs(tk, T, 2 * J);
  fb.embedding = macs(J, 2 * T, C) + macs(tk, 2 * J, C);
  fb.elementwise += 2 * J * C + 2 * tk * C;  // bias + positional adds

  for (int64_t l = 0; l < L; ++l) {
    LayerCost sc = mixer_layer_cost(J, C / 3, h, C, cfg.ipc_enabled);
    LayerCost tc = mixer_layer_cost(tk, C / 2, h, C, false);
    for (const LayerCost* part : {&sc, &tc}) {
      fb.gcn_projection += part->gcn_projection;
      fb.gcn_adjacency += part->gcn_adjacency;
      fb.ipc_conv += part->ipc_conv;
      fb.ipc_mlp += part->ipc_mlp;
      fb.attention_projection += part->attention_projection;
      fb.attention_token += part->attention_token;
      fb.aggregate_mlp += part->aggregate_mlp;
      fb.elementwise += part->elementwise;
    }
  }

  fb.fcn = macs(J, C, cl) + macs(tk, C, cl);
  fb.elementwise += J * cl + tk * cl;
  fb.head = macs(tk, cl, 3) + macs(J, cl, 3);
  fb.elementwise += 2 * tk * J * 3;  // fused outer add + bias
  if (cfg.output_mode == OutputMode::kIdctFull) fb.output_idct = macs(T, tk, J * 3);
  fb.attention_token_closed_form = attention_complexity(Tokenization::kFrequency, J, T, tk, C);
  return fb;
}

// ---- checkpoints -----------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace {

constexpr char kMagic[8] = {'N', 'H', 'T', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void write_checkpoint(const std::string& path, const std::string& kind, const ModelConfig& cfg,
                      const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = kind;
  manifest["config"] = nlohmann::json::parse(model_config_to_json(cfg));
  nlohmann::json table = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->numel() * 4;
  }
  manifest["tensors"] = std::move(table);
  const std::string mjson = manifest.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 8);
  const uint64_t len = mjson.size();
  char lenb[8];
  for (int i = 0; i < 8; ++i) lenb[i] = static_cast<char>((len >> (8 * i)) & 0xff);
  f.write(lenb, 8);
  f.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->data()),
            static_cast<std::streamsize>(t->numel()) * 4);
  f.flush();
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  const int64_t fsize = static_cast<int64_t>(f.tellg());
  f.seekg(0);

  char magic[8];
  if (fsize < 16 || !f.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw CorruptFileError("bad checkpoint magic in " + path);
  char lenb[8];
  f.read(lenb, 8);
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(static_cast<unsigned char>(lenb[i])) << (8 * i);
  if (len == 0 || static_cast<int64_t>(len) > fsize - 16)
    throw CorruptFileError("checkpoint manifest length out of range in " + path);

  std::string mjson(len, '\0');
  f.read(mjson.data(), static_cast<std::streamsize>(len));
  if (!f) throw CorruptFileError("truncated checkpoint manifest in " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mjson);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  CheckpointData ck;
  try {
    if (manifest.at("format_version").get<int64_t>() != 1)
      throw CorruptFileError("unsupported checkpoint format_version in " + path);
    ck.kind = manifest.at("kind").get<std::string>();
    ck.config = model_config_from_json(manifest.at("config").dump());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint manifest is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("checkpoint carries an invalid config: ") + e.what());
  }

  const int64_t blob_size = fsize - 16 - static_cast<int64_t>(len);
  int64_t expected_offset = 0;
  try {
    for (const auto& item : manifest.at("tensors")) {
      const std::string name = item.at("name").get<std::string>();
      const Shape shape = item.at("shape").get<Shape>();
      const int64_t offset = item.at("offset").get<int64_t>();
      if (ck.tensors.count(name))
        throw CorruptFileError("duplicate tensor name '" + name + "' in " + path);
      int64_t numel = 1;
      for (int64_t d : shape) {
        if (d <= 0) throw CorruptFileError("non-positive tensor extent in " + path);
        numel *= d;
      }
      if (offset != expected_offset)
        throw CorruptFileError("tensor table offsets must be sequential and non-overlapping in " +
                               path);
      if (offset + numel * 4 > blob_size)
        throw CorruptFileError("tensor '" + name + "' extends past the payload in " + path);
      expected_offset += numel * 4;
      Tensor<float> t(shape);
      f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(numel) * 4);
      if (!f) throw CorruptFileError("truncated checkpoint payload in " + path);
      ck.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint tensor table is malformed: ") + e.what());
  }
  if (expected_offset != blob_size)
    throw CorruptFileError("checkpoint payload size mismatch in " + path);
  return ck;
}

LoadReport load_model(NanoHTNetParams<float>& params, const CheckpointData& ck, bool strict) {
  LoadReport rep;
  std::set<std::string> used;
  visit_model(params, [&](const std::string& name, Tensor<float>& t) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      rep.missing.push_back(name);
      return;
    }
    used.insert(name);
    if (it->second.shape() != t.shape())
      throw CorruptFileError("shape mismatch for tensor '" + name + "': model wants " +
                             shape_str(t.shape()) + ", file has " + shape_str(it->second.shape()));
    t = it->second;
    t.node = -1;
    rep.loaded.push_back(name);
  });
  for (const auto& [name, t] : ck.tensors)
    if (!used.count(name)) rep.unexpected.push_back(name);
  if (strict && (!rep.missing.empty() || !rep.unexpected.empty())) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& n : rep.missing) msg += " missing:" + n;
    for (const auto& n : rep.unexpected) msg += " unexpected:" + n;
    throw CorruptFileError(msg);
  }
  return rep;
}

void save_model(const std::string& path, const NanoHTNetParams<float>& params) {
  std::vector<std::pair<std::string, const Tensor<float>*>> items;
  visit_model(params, [&items](const std::string& name, const Tensor<float>& t) {
    items.emplace_back(name, &t);
  });
  write_checkpoint(path, "model", params.config, items);
}

#define NHT_MODEL_INSTANTIATE(S)                                                            \
  template NanoHTNetParams<S> make_model<S>(const ModelConfig&, uint64_t);                  \
  template BackboneOut<S> backbone_forward<S>(const NanoHTNetParams<S>&, const Tensor<S>&,  \
                                              Tape<S>*, AttnMaps<S>*);                      \
  template Tensor<S> model_forward<S>(const NanoHTNetParams<S>&, const Tensor<S>&,          \
                                      Tape<S>*, AttnMaps<S>*);

NHT_MODEL_INSTANTIATE(float)
NHT_MODEL_INSTANTIATE(double)

}  // namespace nht
