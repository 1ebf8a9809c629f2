#include "handlift/cli.hpp"

#include "handlift/data.hpp"
#include "handlift/metrics.hpp"
#include "handlift/model.hpp"
#include "handlift/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace handlift::cli {

namespace fs = std::filesystem;
using metrics::format_double;

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::string format_mean_std(const MeanStd& v, int decimals, double factor) {
  char buf[96];
  if (v.std) {
    std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, v.mean * factor, decimals, *v.std * factor);
  } else {
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v.mean * factor);
  }
  return buf;
}

void aggregate(VariantResult& v) {
  std::vector<double> e, a;
  for (const auto& r : v.runs) {
    e.push_back(r.mpjpe_mm);
    a.push_back(r.auc);
  }
  v.mpjpe = mean_std(e);
  v.auc = mean_std(a);
}

std::string summary_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,params,seeds,mpjpe_mean,mpjpe_std,auc_mean,auc_std\n";
  for (const auto& v : r.variants) {
    os << v.variant << ',' << v.params << ',' << v.runs.size() << ',' << format_double(v.mpjpe.mean) << ','
       << (v.mpjpe.std ? format_double(*v.mpjpe.std) : "") << ',' << format_double(v.auc.mean) << ','
       << (v.auc.std ? format_double(*v.auc.std) : "") << '\n';
  }
  return os.str();
}

std::string runs_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,seed,params,mpjpe_mm,auc\n";
  for (const auto& v : r.variants)
    for (const auto& s : v.runs)
      os << v.variant << ',' << s.seed << ',' << v.params << ',' << format_double(s.mpjpe_mm) << ','
         << format_double(s.auc) << '\n';
  return os.str();
}

std::string format_table(const AblationResult& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %-16s %-14s %s\n", "variant", "MPJPE (mm)", "AUC (%)", "params");
  os << line;
  for (const auto& v : r.variants) {
    char params[32];
    std::snprintf(params, sizeof params, "%.2fM", static_cast<double>(v.params) / 1e6);
    std::snprintf(line, sizeof line, "%-12s %-16s %-14s %s\n", v.variant.c_str(), format_mean_std(v.mpjpe, 2).c_str(),
                  format_mean_std(v.auc, 1, 100.0).c_str(), params);
    os << line;
  }
  return os.str();
}

namespace {

double parse_number(std::string_view s, std::string_view what) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument("bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::vector<double> parse_sigma_range(std::string_view text) {
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string_view::npos ? c1 : text.find(':', c1 + 1);
  if (c2 == std::string_view::npos) throw std::invalid_argument("noise sweep must look like lo:hi:step");
  const double lo = parse_number(text.substr(0, c1), "sweep start");
  const double hi = parse_number(text.substr(c1 + 1, c2 - c1 - 1), "sweep end");
  const double step = parse_number(text.substr(c2 + 1), "sweep step");
  if (!(step > 0.0) || hi < lo || lo < 0.0) throw std::invalid_argument("noise sweep needs 0 <= lo <= hi and step > 0");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  std::vector<double> out;
  for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

std::vector<std::string> suite_variants(std::string_view suite) {
  if (suite == "table1") return {"table1_a", "table1_b", "table1_c", "table1_d", "table1_e"};
  if (suite == "table2") return {"table2_a", "table2_b", "table2_c"};
  throw std::invalid_argument("unknown suite '" + std::string(suite) + "' (expected table1 or table2)");
}

namespace {

// ---------------------------------------------------------------- options

struct DataOptions {
  std::string train_data, test_data, fpha;
  std::size_t train_count = 10000;
  std::size_t test_count = 2000;
  std::uint64_t data_seed = 0;
  CameraIntrinsics camera;
};

void add_camera_options(CLI::App* cmd, CameraIntrinsics& cam) {
  cmd->add_option("--fx", cam.fx, "focal length x (px)")->capture_default_str();
  cmd->add_option("--fy", cam.fy, "focal length y (px)")->capture_default_str();
  cmd->add_option("--cx", cam.cx, "principal point x (px)")->capture_default_str();
  cmd->add_option("--cy", cam.cy, "principal point y (px)")->capture_default_str();
  cmd->add_option("--image-width", cam.width, "image width (px)")->capture_default_str();
  cmd->add_option("--image-height", cam.height, "image height (px)")->capture_default_str();
}

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--train-data", d.train_data, "binary dataset for training");
  cmd->add_option("--test-data", d.test_data, "binary dataset for evaluation");
  cmd->add_option("--fpha", d.fpha, "FPHA root directory (Subject_N/...)");
  cmd->add_option("--train-count", d.train_count, "synthetic training samples")->capture_default_str();
  cmd->add_option("--test-count", d.test_count, "synthetic test samples")->capture_default_str();
  cmd->add_option("--data-seed", d.data_seed, "synthetic data seed")->capture_default_str();
  add_camera_options(cmd, d.camera);
}

struct LoadedData {
  CameraIntrinsics camera;
  std::vector<PoseSample> train, test;
};

// Synthetic sets take indices [0, train) for training and
// [train, train + test) for evaluation from one generator, so the two never
// overlap and share the same definition.
std::vector<PoseSample> synthetic_range(const DataOptions& d, std::size_t begin, std::size_t end) {
  SyntheticHandConfig cfg = default_synthetic_config();
  cfg.camera = d.camera;
  cfg.seed = d.data_seed;
  cfg.count = end;
  cfg.validate();
  std::vector<PoseSample> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(synthetic_sample(cfg, i));
  return out;
}

LoadedData load_data(const DataOptions& d, bool need_train) {
  d.camera.validate();
  LoadedData out;
  out.camera = d.camera;
  if (!d.fpha.empty()) {
    if (need_train) out.train = load_fpha_skeleton(d.fpha, d.camera, Split::train);
    out.test = load_fpha_skeleton(d.fpha, d.camera, Split::test);
  } else if (!d.train_data.empty() || !d.test_data.empty()) {
    if (need_train) {
      if (d.train_data.empty()) throw std::invalid_argument("--train-data is required with --test-data");
      auto ds = load_dataset(d.train_data);
      out.camera = ds.camera;
      out.train = std::move(ds.samples);
    }
    if (!d.test_data.empty()) {
      auto ds = load_dataset(d.test_data);
      if (need_train && !(ds.camera == out.camera)) {
        throw DataError("train and test datasets were generated with different cameras");
      }
      out.camera = ds.camera;
      out.test = std::move(ds.samples);
    }
  } else {
    if (need_train) {
      if (d.train_count == 0) throw std::invalid_argument("--train-count must be positive");
      out.train = synthetic_range(d, 0, d.train_count);
    }
    out.test = synthetic_range(d, d.train_count, d.train_count + d.test_count);
  }
  if (need_train && out.train.empty()) throw DataError("training set is empty");
  return out;
}

struct ModelOptions {
  std::string preset = "table1_e";
  std::size_t width = 0, depth = 0, heads = 0;
  double dropout = -1.0;
  std::string spatial, pe;
};

void add_model_overrides(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--width", m.width, "override model width D");
  cmd->add_option("--depth", m.depth, "override number of layers L");
  cmd->add_option("--heads", m.heads, "override attention heads");
  cmd->add_option("--dropout", m.dropout, "override dropout rate");
}

ModelConfig resolve_model(const std::string& preset, const ModelOptions& m) {
  ModelConfig c = model_preset(preset);
  if (!m.spatial.empty()) c.spatial = parse_spatial_kind(m.spatial);
  if (!m.pe.empty()) c.pe = parse_positional_encoding(m.pe);
  if (m.width) c.width = m.width;
  if (m.depth) c.depth = m.depth;
  if (m.heads) c.heads = m.heads;
  if (m.dropout >= 0.0) c.dropout = m.dropout;
  c.validate();
  return c;
}

struct RunOptions {
  TrainConfig train;
  std::string out = "runs";
  std::size_t workers = 1;
  std::size_t checkpoint_every = 10;
  bool resume = false;
  bool exclude_wrist = false;
  bool verbose = false;
};

void add_train_options(CLI::App* cmd, RunOptions& r) {
  auto& t = r.train;
  cmd->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--lr", t.lr, "peak learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", t.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size, "minibatch size")->capture_default_str();
  cmd->add_option("--clip-norm", t.clip_norm, "global gradient norm limit")->capture_default_str();
  cmd->add_option("--flip-prob", t.flip_prob, "horizontal flip probability")->capture_default_str();
  cmd->add_option("--scale-low", t.scale_lo, "lower scale jitter")->capture_default_str();
  cmd->add_option("--scale-high", t.scale_hi, "upper scale jitter")->capture_default_str();
  cmd->add_flag("!--no-augment", t.augment, "disable flip/scale augmentation");
  cmd->add_option("--eval-every", t.eval_every, "evaluate every N epochs (0: only at the end)")->capture_default_str();
  cmd->add_option("--seeds", t.seeds, "run seeds")->delimiter(',')->capture_default_str();
  cmd->add_option("--out", r.out, "output directory")->capture_default_str();
  cmd->add_option("--workers", r.workers, "parallel runs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--checkpoint-every", r.checkpoint_every, "save a resumable checkpoint every N epochs")
      ->capture_default_str();
  cmd->add_flag("--resume", r.resume, "continue from existing checkpoints in the output directory");
  cmd->add_flag("--exclude-wrist", r.exclude_wrist, "drop the wrist from PCK/AUC");
  cmd->add_flag("-v,--verbose", r.verbose, "print every epoch");
}

// ---------------------------------------------------------------- helpers

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << text;
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string log_row(const EpochLog& e) {
  const std::string all = log_csv(std::span<const EpochLog>(&e, 1));
  return all.substr(all.find('\n') + 1);
}

// Keeps log rows for epochs below `next_epoch`.
std::string truncate_log(const std::string& log, std::size_t next_epoch) {
  std::istringstream is(log);
  std::string line, out;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t epoch = 0;
    std::from_chars(line.data(), line.data() + line.size(), epoch);
    if (epoch < next_epoch) out += line + '\n';
  }
  return out;
}

std::string eval_json(const metrics::EvalReport& report, const std::string& variant, std::uint64_t seed,
                      std::size_t params, const ModelConfig& cfg, const char* split) {
  auto j = nlohmann::ordered_json::parse(metrics::report_to_json(report));
  nlohmann::ordered_json out;
  out["variant"] = variant;
  out["seed"] = seed;
  out["params"] = params;
  out["split"] = split;
  nlohmann::ordered_json model;
  for (const auto& [k, v] : cfg.to_key_values()) model[k] = v;
  out["model"] = model;
  for (auto& [k, v] : j.items()) out[k] = v;
  return out.dump(2) + "\n";
}

struct Job {
  std::string variant;
  ModelConfig config;
  std::uint64_t seed;
};

struct JobOutcome {
  SeedResult result;
  std::size_t params = 0;
  std::exception_ptr error;
};

std::mutex g_print_mutex;

void say(const std::string& line) {
  std::lock_guard lock(g_print_mutex);
  std::cerr << line << '\n';
}

JobOutcome run_job(const Job& job, const LoadedData& data, const RunOptions& opt, const SkeletonGraph& skeleton) {
  const fs::path dir = fs::path(opt.out) / job.variant / std::to_string(job.seed);
  const fs::path ckpt = dir / "checkpoint.hlpf";
  const fs::path log_path = dir / "log.csv";
  fs::create_directories(dir);

  std::optional<TrainState> resume;
  std::string rows;
  std::optional<LiftingModel> model;
  if (opt.resume && fs::exists(ckpt)) {
    auto loaded = load_checkpoint(ckpt, skeleton);
    if (!(loaded.info.config == job.config) || loaded.info.seed != job.seed) {
      throw std::invalid_argument("checkpoint " + ckpt.string() + " was written for a different model or seed");
    }
    resume = loaded.info.state;
    rows = truncate_log(read_text(log_path), resume->next_epoch);
    model.emplace(std::move(loaded.model));
    say(job.variant + "/" + std::to_string(job.seed) + ": resuming at epoch " + std::to_string(resume->next_epoch));
  } else {
    model.emplace(LiftingModel::build(job.config, skeleton, job.seed));
  }

  const bool held_out = !data.test.empty();
  const std::span<const PoseSample> eval_set = held_out ? data.test : data.train;
  const std::string header = "epoch,lr,train_loss,eval_mpjpe,eval_auc\n";

  auto on_epoch = [&](const EpochLog& e, const TrainState& state) {
    rows += log_row(e);
    const bool last = e.epoch + 1 == opt.train.epochs;
    if (last || (opt.checkpoint_every > 0 && (e.epoch + 1) % opt.checkpoint_every == 0)) {
      save_checkpoint(ckpt, *model, state, job.seed);
      write_text(log_path, header + rows);
    }
    if (opt.verbose) {
      say(job.variant + "/" + std::to_string(job.seed) + " epoch " + std::to_string(e.epoch) +
          " loss " + format_double(e.train_loss) +
          (e.eval_mpjpe ? " eval " + format_double(*e.eval_mpjpe) : std::string()));
    }
  };

  TrainConfig cfg = opt.train;
  train(*model, data.train, eval_set, cfg, job.seed, resume, on_epoch);
  write_text(log_path, header + rows);

  const auto report = metrics::evaluate(*model, eval_set, !opt.exclude_wrist);
  JobOutcome out;
  out.params = count_parameters(*model);
  out.result = {job.seed, report.mpjpe_mm, report.auc};
  write_text(dir / "eval.json", eval_json(report, job.variant, job.seed, out.params, job.config,
                                          held_out ? "test" : "train"));
  say(job.variant + "/" + std::to_string(job.seed) + ": MPJPE " + format_double(report.mpjpe_mm) + " mm");
  return out;
}

// Runs every job on a bounded pool; results keep job order.
int run_jobs(const std::vector<Job>& jobs, const LoadedData& data, const RunOptions& opt) {
  const SkeletonGraph skeleton = build_hand_skeleton();
  std::vector<JobOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        outcomes[i] = run_job(jobs[i], data, opt, skeleton);
      } catch (...) {
        outcomes[i].error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(opt.workers, jobs.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  AblationResult result;
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (outcomes[i].error) {
      if (!first_error) first_error = outcomes[i].error;
      continue;
    }
    if (result.variants.empty() || result.variants.back().variant != jobs[i].variant) {
      result.variants.push_back({jobs[i].variant, outcomes[i].params, {}, {}, {}});
    }
    result.variants.back().runs.push_back(outcomes[i].result);
  }
  for (auto& v : result.variants) aggregate(v);
  if (!result.variants.empty()) {
    write_text(fs::path(opt.out) / "summary.csv", summary_csv(result));
    write_text(fs::path(opt.out) / "runs.csv", runs_csv(result));
    std::cout << format_table(result);
  }
  if (first_error) std::rethrow_exception(first_error);
  return kOk;
}

// ---------------------------------------------------------------- commands

struct GenDataOptions {
  std::string out;
  std::string fpha;
  std::string split = "train";
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  std::size_t first_index = 0;
  double noise_px = 0.0;
  CameraIntrinsics camera;
};

int cmd_gen_data(const GenDataOptions& g) {
  g.camera.validate();
  Dataset ds;
  ds.camera = g.camera;
  if (!g.fpha.empty()) {
    if (g.split != "train" && g.split != "test") throw std::invalid_argument("--split must be train or test");
    ds.samples = load_fpha_skeleton(g.fpha, g.camera, g.split == "train" ? Split::train : Split::test);
  } else {
    if (g.count == 0) throw std::invalid_argument("--count must be positive");
    DataOptions d;
    d.camera = g.camera;
    d.data_seed = g.seed;
    ds.samples = synthetic_range(d, g.first_index, g.first_index + g.count);
  }
  if (g.noise_px > 0.0) ds.samples = add_2d_noise(ds.samples, g.noise_px, g.camera, g.seed);
  save_dataset(g.out, ds);
  std::cout << "wrote " << ds.samples.size() << " samples to " << g.out << '\n';
  return kOk;
}

struct EvalOptions {
  std::string checkpoint, baseline, data, out, per_joint, noise_sweep, sweep_out = "noise_sweep.csv";
  DataOptions source;
  std::uint64_t noise_seed = 0;
  bool attention_stats = false;
  bool exclude_wrist = false;
};

int cmd_eval(const EvalOptions& e) {
  const SkeletonGraph skeleton = build_hand_skeleton();
  auto loaded = load_checkpoint(e.checkpoint, skeleton);
  const LiftingModel& model = loaded.model;

  LoadedData data;
  if (!e.data.empty()) {
    auto ds = load_dataset(e.data);
    data.camera = ds.camera;
    data.test = std::move(ds.samples);
  } else {
    data = load_data(e.source, false);
  }
  if (data.test.empty()) throw DataError("evaluation set is empty");
  if (model.joint_count() != kJointCount) throw DataError("checkpoint joint count does not match the dataset");

  const auto report = metrics::evaluate(model, data.test, !e.exclude_wrist);
  std::optional<metrics::AttentionStats> stats;
  if (e.attention_stats) stats = metrics::evaluate_attention(model, data.test, skeleton);

  std::optional<LoadedCheckpoint> baseline;
  if (!e.baseline.empty()) baseline.emplace(load_checkpoint(e.baseline, skeleton));

  const std::string json = metrics::report_to_json(report, stats ? &*stats : nullptr, &skeleton);
  if (e.out.empty()) {
    std::cout << json;
  } else {
    write_text(e.out, json);
  }
  if (!e.per_joint.empty()) {
    std::vector<double> per_joint_b;
    if (baseline) per_joint_b = metrics::evaluate(baseline->model, data.test, !e.exclude_wrist).per_joint_mm;
    write_text(e.per_joint, metrics::per_joint_csv(skeleton, report.per_joint_mm, per_joint_b));
  }
  if (!e.noise_sweep.empty()) {
    const auto sigmas = parse_sigma_range(e.noise_sweep);
    const auto rows = metrics::noise_sweep(model, baseline ? &baseline->model : nullptr, data.test, sigmas,
                                           data.camera, e.noise_seed);
    write_text(e.sweep_out, metrics::noise_sweep_csv(rows));
  }
  return kOk;
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"2D-to-3D hand pose lifting: data generation, training, ablations and evaluation"};
  app.set_config("--config", "", "TOML/INI file with option values; flags given on the command line win");
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a binary dataset (synthetic or converted from FPHA)");
  gen_cmd->add_option("--out", gen.out, "output dataset file")->required();
  gen_cmd->add_option("--count", gen.count, "synthetic sample count")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "synthetic data seed")->capture_default_str();
  gen_cmd->add_option("--first-index", gen.first_index, "index of the first synthetic sample")->capture_default_str();
  gen_cmd->add_option("--noise-px", gen.noise_px, "2D pixel noise sigma added to the inputs")->capture_default_str();
  gen_cmd->add_option("--fpha", gen.fpha, "convert an FPHA skeleton tree instead of generating");
  gen_cmd->add_option("--split", gen.split, "FPHA split (train|test)")->capture_default_str();
  add_camera_options(gen_cmd, gen.camera);

  DataOptions train_data;
  ModelOptions train_model;
  RunOptions train_run;
  std::string run_name;
  auto* train_cmd = app.add_subcommand("train", "train one model variant for every seed");
  train_cmd->add_option("--preset", train_model.preset, "model preset")->capture_default_str();
  train_cmd->add_option("--name", run_name, "variant directory name (default: preset)");
  train_cmd->add_option("--spatial", train_model.spatial, "override spatial block (gcn_1hop|gcn_multihop|gat_skeleton|attention)");
  train_cmd->add_option("--pe", train_model.pe, "override positional encoding (graph_distance|none|learnable)");
  add_model_overrides(train_cmd, train_model);
  add_train_options(train_cmd, train_run);
  add_data_options(train_cmd, train_data);

  DataOptions ablate_data;
  ModelOptions ablate_model;
  RunOptions ablate_run;
  std::string suite = "table1";
  auto* ablate_cmd = app.add_subcommand("ablate", "train every variant of an ablation suite across seeds");
  ablate_cmd->add_option("--suite", suite, "table1 (spatial block) or table2 (positional encoding)")
      ->capture_default_str();
  add_model_overrides(ablate_cmd, ablate_model);
  add_train_options(ablate_cmd, ablate_run);
  add_data_options(ablate_cmd, ablate_data);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--data", ev.data, "binary dataset to evaluate on");
  eval_cmd->add_option("--out", ev.out, "report JSON file (default: stdout)");
  eval_cmd->add_option("--per-joint", ev.per_joint, "write per-joint MPJPE CSV");
  eval_cmd->add_flag("--attention-stats", ev.attention_stats, "add attention mass on skeleton edges");
  eval_cmd->add_option("--noise-sweep", ev.noise_sweep, "sigma range lo:hi:step in pixels");
  eval_cmd->add_option("--sweep-out", ev.sweep_out, "noise sweep CSV file")->capture_default_str();
  eval_cmd->add_option("--noise-seed", ev.noise_seed, "noise seed")->capture_default_str();
  eval_cmd->add_option("--baseline", ev.baseline, "second checkpoint for paired comparisons");
  eval_cmd->add_flag("--exclude-wrist", ev.exclude_wrist, "drop the wrist from PCK/AUC");
  add_data_options(eval_cmd, ev.source);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (*gen_cmd) return cmd_gen_data(gen);
  if (*eval_cmd) return cmd_eval(ev);

  if (*train_cmd) {
    train_run.train.validate();
    const ModelConfig cfg = resolve_model(train_model.preset, train_model);
    const LoadedData data = load_data(train_data, true);
    std::vector<Job> jobs;
    for (auto seed : train_run.train.seeds) jobs.push_back({run_name.empty() ? train_model.preset : run_name, cfg, seed});
    return run_jobs(jobs, data, train_run);
  }

  ablate_run.train.validate();
  std::vector<Job> jobs;
  for (const auto& variant : suite_variants(suite)) {
    const ModelConfig cfg = resolve_model(variant, ablate_model);
    for (auto seed : ablate_run.train.seeds) jobs.push_back({variant, cfg, seed});
  }
  const LoadedData data = load_data(ablate_data, true);
  return run_jobs(jobs, data, ablate_run);
}

}  // namespace

int run(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("handlift");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace handlift::cli
