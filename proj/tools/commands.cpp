#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "tased/archive.hpp"
#include "tased/error.hpp"
#include "tased/infer.hpp"
#include "tased/model.hpp"
#include "tased/parallel.hpp"
#include "tased/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tased::cli {

namespace {

fs::path require_path(const std::optional<fs::path>& flag, const std::string& configured, const char* what) {
  if (flag && !flag->empty()) return *flag;
  if (!configured.empty()) return configured;
  throw ConfigError(fmt::format("no {} given (set it in the config or on the command line)", what));
}

bool is_video_dir(const fs::path& p) { return fs::is_directory(p / "frames"); }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Keeps the header and rows for steps before `step` so a resumed log stays
// monotone.
std::string truncate_log(const std::string& text, std::size_t step) {
  std::istringstream in(text);
  std::string line;
  std::string out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      out += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const std::size_t row_step = std::stoul(line.substr(0, line.find(',')));
    if (row_step < step) out += line + "\n";
  }
  return out;
}

std::string format_double(double v) { return fmt::format("{:.9g}", v); }

json means_json(const MetricMeans& m) {
  auto v = [](double x) { return std::isnan(x) ? json(nullptr) : json(x); };
  return {{"nss", v(m.nss)}, {"cc", v(m.cc)}, {"sim", v(m.sim)}, {"aucj", v(m.aucj)}, {"sauc", v(m.sauc)}};
}

std::size_t count_maps(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(fmt::format("prediction directory '{}' does not exist", dir.string()));
  std::size_t n = 0;
  while (fs::exists(dir / fmt::format("{:05d}.png", n + 1))) ++n;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".png" ? 1 : 0;
  if (files != n) {
    throw IoError(fmt::format("'{}' holds {} PNG files but only {} contiguous %05d.png maps", dir.string(), files, n));
  }
  return n;
}

}  // namespace

TrainResult cmd_train(const TrainCommandOptions& options, std::ostream& out) {
  const RunConfig cfg = load_run_config(options.config);
  const fs::path data_root = require_path(options.data_root, cfg.paths.data_root, "data root");
  const fs::path out_dir = require_path(options.output_dir, cfg.paths.output_dir, "output directory");
  std::optional<fs::path> resume = options.resume;
  if (!resume && !cfg.paths.checkpoint.empty()) resume = fs::path(cfg.paths.checkpoint);

  const Dataset train = load_dataset(data_root, cfg.model.height, cfg.model.width);
  std::optional<Dataset> val;
  if (!cfg.paths.val_root.empty()) val = load_dataset(cfg.paths.val_root, cfg.model.height, cfg.model.width);

  Network net = build(cfg.model);
  Trainer trainer(net, train, val ? &*val : nullptr, cfg.train);
  fs::create_directories(out_dir);
  write_file(out_dir / "config.json", to_json(cfg) + "\n");

  TrainResult result;
  result.log = out_dir / "train_log.csv";
  std::string log_prefix = "step,loss,decoder_lr,val_loss\n";
  if (resume) {
    trainer.load_checkpoint(*resume);
    if (fs::exists(result.log)) log_prefix = truncate_log(read_file(result.log), trainer.current_step());
    out << fmt::format("resumed from {} at step {}\n", resume->string(), trainer.current_step());
  }
  std::ofstream log(result.log, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError(fmt::format("cannot open '{}' for writing", result.log.string()));
  log << log_prefix << std::flush;

  while (!trainer.done()) {
    const StepRecord rec = trainer.step();
    log << fmt::format("{},{},{},{}\n", rec.step, format_double(rec.loss), format_double(rec.decoder_lr),
                       rec.val_loss ? format_double(*rec.val_loss) : "")
        << std::flush;
    result.final_loss = rec.loss;
    if (options.print_every > 0 && (rec.step % options.print_every == 0 || trainer.done())) {
      out << fmt::format("step {:>6}  loss {:.5f}  decoder_lr {:g}{}\n", rec.step, rec.loss, rec.decoder_lr,
                         rec.val_loss ? fmt::format("  val {:.5f}", *rec.val_loss) : "");
    }
    if (rec.decayed || trainer.done()) {
      const fs::path ckpt = out_dir / fmt::format("checkpoint_{:06d}.tasd", trainer.current_step());
      trainer.save_checkpoint(ckpt);
      result.checkpoints.push_back(ckpt);
      out << fmt::format("checkpoint {}\n", ckpt.string());
    }
  }
  result.steps = trainer.current_step();
  return result;
}

std::size_t cmd_predict(const PredictCommandOptions& options, std::ostream& out) {
  const RunConfig cfg = load_run_config(options.config);
  Network net = build(cfg.model);
  load_network_state(net, read_archive(options.checkpoint));

  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (is_video_dir(options.input)) {
    jobs.emplace_back(options.input, options.output);
  } else {
    for (const std::string& id : list_videos(options.input)) jobs.emplace_back(options.input / id, options.output / id);
    if (jobs.empty()) throw IoError(fmt::format("no videos found under '{}'", options.input.string()));
  }
  std::size_t written = 0;
  for (const auto& [video_dir, out_dir] : jobs) {
    const VideoSequence video = load_video(video_dir);
    std::vector<Tensor> frames;
    frames.reserve(video.size());
    for (const Image& f : video.frames) frames.push_back(preprocess(f, cfg.model.height, cfg.model.width));
    tased::PredictOptions popts;
    popts.batch = options.batch;
    const std::vector<Tensor> maps = predict_video(net, frames, popts);
    fs::create_directories(out_dir);
    for (std::size_t t = 0; t < maps.size(); ++t) {
      export_saliency(maps[t], out_dir / fmt::format("{:05d}.png", t + 1), video.height, video.width);
    }
    written += maps.size();
    out << fmt::format("{}: {} maps -> {}\n", video.id, maps.size(), out_dir.string());
  }
  return written;
}

EvalResult cmd_eval(const EvalCommandOptions& options, std::ostream& out) {
  struct Entry {
    std::string id;
    fs::path gt_dir;
    fs::path pred_dir;
    VideoInfo info;
    std::vector<FixationRecord> records;
  };
  std::vector<Entry> entries;
  if (is_video_dir(options.ground_truth)) {
    entries.push_back({options.ground_truth.filename().string(), options.ground_truth, options.predictions, {}, {}});
  } else {
    for (const std::string& id : list_videos(options.ground_truth)) {
      entries.push_back({id, options.ground_truth / id, options.predictions / id, {}, {}});
    }
    if (entries.empty()) throw IoError(fmt::format("no videos under '{}'", options.ground_truth.string()));
  }
  for (Entry& e : entries) {
    e.info = probe_video(e.gt_dir);
    e.records = load_annotations(e.gt_dir, e.info.frame_count, e.info.height, e.info.width);
  }

  EvalResult result;
  for (std::size_t v = 0; v < entries.size(); ++v) {
    const Entry& e = entries[v];
    const std::size_t n = count_maps(e.pred_dir);
    if (n != e.info.frame_count) {
      throw IoError(fmt::format("video '{}': {} prediction maps for {} frames", e.id, n, e.info.frame_count));
    }
    std::vector<Tensor> preds;
    for (std::size_t t = 0; t < n; ++t) preds.push_back(load_map(e.pred_dir / fmt::format("{:05d}.png", t + 1)));

    EvalOptions eo;
    eo.sauc_splits = options.splits;
    eo.seed = options.seed;
    eo.video_index = v;
    for (std::size_t u = 0; u < entries.size(); ++u) {
      const bool use = options.pool == PoolMode::global ? u != v : u == v;
      if (!use) continue;
      for (const FixationRecord& r : entries[u].records) {
        for (const Fixation& f : r.points) {
          eo.sauc_pool.push_back(rescale_fixation(f, entries[u].info.height, entries[u].info.width, e.info.height,
                                                  e.info.width));
        }
      }
    }
    if (eo.sauc_pool.empty()) {
      eo.metrics.sauc = false;
      out << fmt::format("note: no s-AUC negative pool for '{}' (single video with global pool); s-AUC skipped\n",
                         e.id);
    }
    result.videos.push_back(evaluate_video(e.id, preds, e.records, eo));
  }
  result.aggregate = dataset_mean(result.videos);

  const fs::path out_dir = options.output.value_or(options.predictions);
  fs::create_directories(out_dir);
  result.csv = out_dir / "metrics.csv";
  result.json = out_dir / "metrics.json";
  write_file(result.csv, format_metrics_csv(result.videos));

  json j;
  j["aggregate"] = means_json(result.aggregate);
  j["videos"] = json::array();
  json degenerate = json::array();
  for (const VideoReport& r : result.videos) {
    j["videos"].push_back({{"video", r.video}, {"frames", r.frames.size()}, {"mean", means_json(r.mean)}});
    for (const FrameScores& f : r.frames) {
      if (f.nss_degenerate) degenerate.push_back({{"video", r.video}, {"frame", f.frame}, {"metric", "nss"}});
      if (f.cc_degenerate) degenerate.push_back({{"video", r.video}, {"frame", f.frame}, {"metric", "cc"}});
    }
  }
  j["degenerate"] = degenerate;
  j["settings"] = {{"sauc_pool", options.pool == PoolMode::global ? "global" : "per_video"},
                   {"sauc_splits", options.splits},
                   {"seed", options.seed}};
  write_file(result.json, j.dump(2) + "\n");

  const MetricMeans& m = result.aggregate;
  out << fmt::format("NSS {:.4f}  CC {:.4f}  SIM {:.4f}  AUC-J {:.4f}  s-AUC {:.4f}  ({} videos)\n", m.nss, m.cc, m.sim,
                     m.aucj, m.sauc, result.videos.size());
  if (!degenerate.empty()) out << fmt::format("{} degenerate frame scores (see metrics.json)\n", degenerate.size());
  return result;
}

std::string summary_json(const ModelSummary& s, const ModelConfig& config) {
  json j;
  j["input_shape"] = s.input_shape;
  j["aggregation"] = to_string(config.aggregation);
  j["upsampling"] = to_string(config.upsampling);
  j["layers"] = json::array();
  for (const LayerSummary& row : s.layers) {
    j["layers"].push_back({{"name", row.name},
                           {"kind", row.kind},
                           {"group", row.group == ParamGroup::encoder ? "encoder" : "decoder"},
                           {"output_shape", row.output_shape},
                           {"params", row.params},
                           {"enumerated", row.enumerated},
                           {"macs", row.macs}});
  }
  j["total_params"] = s.total_params;
  j["total_enumerated"] = s.total_enumerated;
  j["total_macs"] = s.total_macs;
  return j.dump(2);
}

void cmd_summary(const SummaryOptions& options, std::ostream& out) {
  ModelConfig mc;
  if (options.config) mc = load_run_config(*options.config).model;
  if (options.preset) {
    if (*options.preset == "tiny") {
      mc = ModelConfig::tiny();
    } else if (*options.preset == "paperlike") {
      mc = ModelConfig::paperlike();
    } else if (*options.preset == "toy") {
      mc = ModelConfig();
    } else {
      throw ConfigError(fmt::format("unknown preset '{}'", *options.preset));
    }
  }
  if (options.aggregation) mc.aggregation = parse_aggregation(*options.aggregation);
  if (options.upsampling) mc.upsampling = parse_upsampling(*options.upsampling);
  if (options.clip_length) mc.clip_length = *options.clip_length;
  Network net = build(mc);
  const ModelSummary s = net.summary(1);
  if (options.json) {
    out << summary_json(s, mc) << "\n";
  } else {
    out << format_summary(s);
  }
}

void cmd_synth(const fs::path& root, const SynthParams& params, std::ostream& out) {
  const std::vector<SynthVideo> videos = synth_dataset(root, params);
  out << fmt::format("wrote {} videos of {} frames ({}x{}) to {}\n", videos.size(), params.frames, params.height,
                     params.width, root.string());
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tased: video saliency with temporally-aggregating 3-D encoder-decoder networks"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Worker threads (default: all cores; TASED_THREADS overrides)")
      ->check(CLI::PositiveNumber);

  TrainCommandOptions train;
  std::string train_resume, train_out, train_data;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a run config");
  train_cmd->add_option("config", train.config, "Run config JSON")->required();
  train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
  train_cmd->add_option("--out", train_out, "Output directory (overrides paths.output_dir)");
  train_cmd->add_option("--data", train_data, "Dataset root (overrides paths.data_root)");
  train_cmd->add_option("--print-every", train.print_every, "Progress line interval in steps (0 = quiet)");

  PredictCommandOptions predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predict saliency maps for a video or dataset");
  predict_cmd->add_option("config", predict.config, "Run config JSON")->required();
  predict_cmd->add_option("checkpoint", predict.checkpoint, "Weight archive")->required();
  predict_cmd->add_option("input", predict.input, "Video directory or dataset root")->required();
  predict_cmd->add_option("output", predict.output, "Output directory")->required();
  predict_cmd->add_option("--batch", predict.batch, "Windows per forward pass")->check(CLI::PositiveNumber);

  EvalCommandOptions eval;
  std::string eval_out, pool = "global";
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted maps against ground truth");
  eval_cmd->add_option("predictions", eval.predictions, "Prediction directory")->required();
  eval_cmd->add_option("ground_truth", eval.ground_truth, "Ground-truth video directory or dataset root")->required();
  eval_cmd->add_option("--out", eval_out, "Directory for metrics.csv/metrics.json");
  eval_cmd->add_option("--sauc-pool", pool, "s-AUC negatives: global (other videos) or per_video")
      ->check(CLI::IsMember({"global", "per_video"}));
  eval_cmd->add_option("--splits", eval.splits, "s-AUC resampling splits")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval.seed, "s-AUC seed");

  SummaryOptions summary;
  std::string summary_config;
  auto* summary_cmd = app.add_subcommand("summary", "Print the layer table of a configured network");
  summary_cmd->add_option("config", summary_config, "Run config JSON");
  summary_cmd->add_option("--preset", summary.preset, "toy, tiny or paperlike");
  summary_cmd->add_option("--aggregation", summary.aggregation, "late, early_two_step or late_two_step");
  summary_cmd->add_option("--upsampling", summary.upsampling, "unpool, trilinear or transposed");
  summary_cmd->add_option("--clip-length", summary.clip_length, "Clip length T");
  summary_cmd->add_flag("--json", summary.json, "Machine-readable output");

  SynthParams synth;
  std::string synth_root;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic moving-blob dataset");
  synth_cmd->add_option("output", synth_root, "Dataset root to create")->required();
  synth_cmd->add_option("--videos", synth.videos, "Number of videos");
  synth_cmd->add_option("--frames", synth.frames, "Frames per video");
  synth_cmd->add_option("--height", synth.height, "Frame height");
  synth_cmd->add_option("--width", synth.width, "Frame width");
  synth_cmd->add_option("--blobs", synth.blobs, "Blobs per video (the first is salient)");
  synth_cmd->add_option("--fixations", synth.fixations_per_frame, "Fixations per frame");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    set_thread_count(resolve_thread_count(threads));
    if (*train_cmd) {
      if (!train_resume.empty()) train.resume = fs::path(train_resume);
      if (!train_out.empty()) train.output_dir = fs::path(train_out);
      if (!train_data.empty()) train.data_root = fs::path(train_data);
      cmd_train(train, out);
    } else if (*predict_cmd) {
      cmd_predict(predict, out);
    } else if (*eval_cmd) {
      if (!eval_out.empty()) eval.output = fs::path(eval_out);
      eval.pool = pool == "global" ? PoolMode::global : PoolMode::per_video;
      cmd_eval(eval, out);
    } else if (*summary_cmd) {
      if (!summary_config.empty()) summary.config = fs::path(summary_config);
      cmd_summary(summary, out);
    } else if (*synth_cmd) {
      cmd_synth(synth_root, synth, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tased::cli
