// Command-line surface for the pose-lifting stack: data generation,
// contrastive pre-training, fine-tuning, evaluation, accounting and
// benchmarks. Exit codes: 0 success, 2 configuration problem, 3 corrupt or
// unreadable data/checkpoint.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nanohtnet/datagen.hpp"
#include "nanohtnet/errors.hpp"
#include "nanohtnet/model.hpp"
#include "nanohtnet/poseclr.hpp"
#include "nanohtnet/trainer.hpp"

namespace {

using nlohmann::json;

// --config accepts either a path to a JSON file or inline JSON.
std::string load_config_text(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') return arg;
  std::ifstream f(arg);
  if (!f) throw nht::ConfigError("cannot read config file: " + arg);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void emit(const json& j, const std::string& out_path) {
  const std::string text = j.dump(2);
  if (out_path.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw nht::IoError("cannot write output file: " + out_path);
  f << text << "\n";
}

json attn_layer_json(const nht::Tensor<float>& maps) {
  // [heads x n x n] -> nested arrays.
  const int64_t h = maps.extent(0), n = maps.extent(1);
  json layers = json::array();
  for (int64_t a = 0; a < h; ++a) {
    json rows = json::array();
    for (int64_t r = 0; r < n; ++r) {
      json row = json::array();
      for (int64_t c = 0; c < n; ++c) row.push_back(maps[(a * n + r) * n + c]);
      rows.push_back(row);
    }
    layers.push_back(rows);
  }
  return layers;
}

int run(int argc, char** argv) {
  CLI::App app{"NanoHTNet 2D-to-3D pose lifting toolkit"};
  app.require_subcommand(1);

  // gen-data ------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-view dataset");
  std::string gen_config, gen_out;
  std::optional<uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "generator config (JSON file or inline)");
  gen->add_option("--seed", gen_seed, "override the config seed");
  gen->add_option("--out", gen_out, "output dataset path (.pseq)")->required();

  // pretrain -------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "multi-view contrastive pre-training");
  std::string pre_config, pre_out;
  std::optional<uint64_t> pre_seed;
  pre->add_option("--config", pre_config, "pretrain config (JSON file or inline)")->required();
  pre->add_option("--seed", pre_seed, "override the config seed");
  pre->add_option("--out", pre_out, "override the output directory");

  // train ----------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "fine-tune the lifting model");
  std::string tr_config, tr_out;
  std::optional<uint64_t> tr_seed;
  tr->add_option("--config", tr_config, "train config (JSON file or inline)")->required();
  tr->add_option("--seed", tr_seed, "override the config seed");
  tr->add_option("--out", tr_out, "override the output directory");

  // eval -----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint (.nhtckpt)")->required();
  ev->add_option("--data", ev_data, "dataset path (.pseq)")->required();
  ev->add_option("--out", ev_out, "write the metrics report here instead of stdout");

  // flops ----------------------------------------------------------------
  auto* fl = app.add_subcommand("flops", "parameter and FLOP accounting");
  std::string fl_config, fl_out;
  fl->add_option("--config", fl_config, "model config (JSON file or inline); default flagship");
  fl->add_option("--out", fl_out, "write the accounting report here instead of stdout");

  // bench ----------------------------------------------------------------
  auto* be = app.add_subcommand("bench", "forward-pass latency and throughput");
  std::string be_config, be_out;
  int64_t be_batch = 1, be_iters = 30, be_warmup = 5;
  uint64_t be_seed = 1;
  bool be_compare = false;
  be->add_option("--config", be_config, "model config (JSON file or inline); default flagship");
  be->add_option("--batch", be_batch, "windows per timed iteration");
  be->add_option("--iterations", be_iters, "timed iterations");
  be->add_option("--warmup", be_warmup, "untimed warmup iterations");
  be->add_option("--seed", be_seed, "weight/input seed");
  be->add_flag("--compare-tokenizations", be_compare,
               "also time one layer's attention under frequency vs dense tokens");
  be->add_option("--out", be_out, "write the benchmark report here instead of stdout");

  // dump-attn ------------------------------------------------------------
  auto* da = app.add_subcommand("dump-attn", "dump attention maps for one window");
  std::string da_ckpt, da_data, da_out;
  uint64_t da_seed = 1;
  da->add_option("--checkpoint", da_ckpt, "model or encoder checkpoint")->required();
  da->add_option("--data", da_data, "dataset; uses window 0 of view 0 (default: seeded noise)");
  da->add_option("--seed", da_seed, "noise seed when no dataset is given");
  da->add_option("--out", da_out, "write the maps here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help text or the parse error
    return code == 0 ? 0 : 2;
  }

  if (*gen) {
    nht::DatagenConfig cfg;
    if (!gen_config.empty()) cfg = nht::datagen_config_from_json(load_config_text(gen_config));
    if (gen_seed) cfg.seed = *gen_seed;
    nht::write_dataset(gen_out, nht::generate_dataset(cfg));
    emit(json{{"dataset", gen_out},
              {"sequences", cfg.sequences},
              {"frames", cfg.frames},
              {"views", cfg.views},
              {"actions", cfg.actions},
              {"seed", cfg.seed}},
         "");
  } else if (*pre) {
    nht::PretrainConfig cfg = nht::pretrain_config_from_json(load_config_text(pre_config));
    if (pre_seed) cfg.seed = *pre_seed;
    if (!pre_out.empty()) cfg.out_dir = pre_out;
    const nht::PretrainReport report = nht::pretrain(cfg);
    json epochs = json::array();
    for (const nht::EpochStats& e : report.epochs)
      epochs.push_back(json{{"steps", e.steps},
                            {"mean_loss", e.mean_loss},
                            {"mean_pos_sim", e.mean_pos_sim},
                            {"mean_neg_sim", e.mean_neg_sim}});
    emit(json{{"encoder", report.encoder_path}, {"log", report.log_path}, {"epochs", epochs}}, "");
  } else if (*tr) {
    nht::TrainConfig cfg = nht::train_config_from_json(load_config_text(tr_config));
    if (tr_seed) cfg.seed = *tr_seed;
    if (!tr_out.empty()) cfg.out_dir = tr_out;
    const nht::TrainReport report = nht::train(cfg);
    json epochs = json::array();
    for (const nht::EpochLog& e : report.epochs)
      epochs.push_back(json{{"epoch", e.epoch},
                            {"train_loss_mm", e.train_loss},
                            {"val_mpjpe_mm", e.val_mpjpe},
                            {"lr", e.lr},
                            {"seconds", e.seconds}});
    emit(json{{"checkpoint", report.checkpoint_path},
              {"log", report.log_path},
              {"best_val_mpjpe_mm", report.best_val_mpjpe},
              {"epochs", epochs}},
         "");
  } else if (*ev) {
    const nht::EvalReport report = nht::evaluate_checkpoint(ev_ckpt, ev_data);
    emit(json::parse(nht::eval_report_json(report)), ev_out);
  } else if (*fl) {
    nht::ModelConfig cfg;
    if (!fl_config.empty()) cfg = nht::model_config_from_json(load_config_text(fl_config));
    cfg.validate();
    const nht::FlopsBreakdown f = nht::flops_count(cfg);
    json params;
    for (const auto& [name, count] : nht::param_breakdown(cfg)) params[name] = count;
    emit(json{{"config", json::parse(nht::model_config_to_json(cfg))},
              {"param_total", nht::param_count(cfg)},
              {"param_breakdown", params},
              {"flops",
               {{"dct", f.dct},
                {"embedding", f.embedding},
                {"gcn_projection", f.gcn_projection},
                {"gcn_adjacency", f.gcn_adjacency},
                {"ipc_conv", f.ipc_conv},
                {"ipc_mlp", f.ipc_mlp},
                {"attention_projection", f.attention_projection},
                {"attention_token", f.attention_token},
                {"aggregate_mlp", f.aggregate_mlp},
                {"fcn", f.fcn},
                {"head", f.head},
                {"output_idct", f.output_idct},
                {"elementwise", f.elementwise},
                {"total", f.total()}}},
              {"attention_token_closed_form", f.attention_token_closed_form},
              {"attention_complexity",
               {{"frequency", nht::attention_complexity(nht::Tokenization::kFrequency, cfg.joints,
                                                        cfg.receptive_field, cfg.frames,
                                                        cfg.channels)},
                {"dense", nht::attention_complexity(nht::Tokenization::kDense, cfg.joints,
                                                    cfg.receptive_field, cfg.frames,
                                                    cfg.channels)}}}},
         fl_out);
  } else if (*be) {
    nht::ModelConfig cfg;
    if (!be_config.empty()) cfg = nht::model_config_from_json(load_config_text(be_config));
    cfg.validate();
    const nht::BenchReport r = nht::bench_model(cfg, be_batch, be_iters, be_warmup, be_seed);
    json out{{"batch", r.batch},
             {"iterations", r.iterations},
             {"p50_ms", r.p50_ms},
             {"p95_ms", r.p95_ms},
             {"windows_per_s", r.windows_per_s},
             {"analytic_flops", r.analytic_flops},
             {"achieved_gflops", r.achieved_gflops}};
    if (be_compare) {
      const nht::PairedTiming t = nht::bench_attention_tokenizations(
          cfg.joints, cfg.receptive_field, cfg.frames, cfg.channels, cfg.heads, be_iters,
          be_seed);
      out["tokenization_ms"] = json{{"frequency", t.frequency_ms}, {"dense", t.dense_ms}};
    }
    emit(out, be_out);
  } else if (*da) {
    const nht::CheckpointData ck = nht::read_checkpoint(da_ckpt);
    nht::NanoHTNetParams<float> params = nht::make_model<float>(ck.config, 0);
    nht::load_model(params, ck, /*strict=*/false);
    nht::Tensor<float> x({ck.config.receptive_field, ck.config.joints, 2});
    if (da_data.empty()) {
      nht::fill_uniform(x, -1.0f, 1.0f, da_seed, 1);
    } else {
      const nht::Dataset ds = nht::read_dataset(da_data);
      const nht::Sequence& seq = ds.sequences.front();
      if (seq.pose3d.extent(0) < ck.config.receptive_field)
        throw nht::ContractError("first sequence is shorter than the receptive field");
      std::copy(seq.pose2d[0].data(),
                seq.pose2d[0].data() + x.numel(), x.data());
    }
    nht::AttnMaps<float> maps;
    nht::model_forward<float>(params, x, nullptr, &maps);
    json spatial = json::array(), temporal = json::array();
    for (const auto& layer : maps.spatial) spatial.push_back(attn_layer_json(layer));
    for (const auto& layer : maps.temporal) temporal.push_back(attn_layer_json(layer));
    emit(json{{"spatial", spatial}, {"temporal", temporal}}, da_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const nht::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nht::DimError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nht::ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nht::CorruptFileError& e) {
    std::cerr << "corrupt data: " << e.what() << "\n";
    return 3;
  } catch (const nht::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
