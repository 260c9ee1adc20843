// haru: command-line front end for the nucleus segmentation pipeline.
//
//   synth → train → predict → postprocess → eval, plus viz for label maps.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "haru/data.hpp"
#include "haru/inference.hpp"
#include "haru/metrics.hpp"
#include "haru/png_io.hpp"
#include "haru/postprocess.hpp"
#include "haru/trainer.hpp"
#include "haru/viz.hpp"

namespace fs = std::filesystem;
using namespace haru;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr const char* kManifestName = "manifest.txt";

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

std::string quote_arg(const std::string& a) {
  if (!a.empty() && a.find_first_of(" \t\"'\\") == std::string::npos) return a;
  std::string q = "'";
  for (char c : a) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

struct Manifest {
  std::string command;
  std::string argv;
  std::uint64_t seed = 0;
  KeyValues paths;   // input.* / output.*
  KeyValues config;  // full snapshot of every setting that affects the outputs

  std::string text() const {
    KeyValues kv = config;
    kv["command"] = command;
    kv["argv"] = argv;
    kv["seed"] = std::to_string(seed);
    kv["tool_version"] = kToolVersion;
    kv["cwd"] = fs::current_path().string();
    for (const auto& [k, v] : paths) kv[k] = v;
    return format_key_values(kv);
  }
};

// Directories owned by one command get a fresh manifest; single-file commands append a record,
// separated by a "---" line, to the manifest of the directory they write into.
void write_manifest(const fs::path& dir, const Manifest& m, bool append) {
  fs::create_directories(dir);
  const fs::path path = dir / kManifestName;
  const bool had = append && fs::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  if (had) os << "---\n";
  os << "# haru run manifest\n" << m.text();
  if (!os) throw IoError("failed writing " + path.string());
}

fs::path dir_of(const fs::path& file) {
  const fs::path parent = file.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; the first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

fs::path images_dir(const fs::path& dir) { return fs::is_directory(dir / "images") ? dir / "images" : dir; }
fs::path labels_dir(const fs::path& dir) { return fs::is_directory(dir / "labels") ? dir / "labels" : dir; }

std::vector<fs::path> list_pngs(const fs::path& dir, const std::string& suffix = ".png") {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix)) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  SynthOptions options;
  bool no_prune = false;
};

int cmd_synth(SynthArgs& a, const std::string& argv) {
  a.options.prune_overlaps = !a.no_prune;
  Manifest m{"synth", argv, a.options.seed, {{"output.dir", a.out.string()}}, a.options.to_key_values()};
  write_manifest(a.out, m, false);
  const SynthDataset ds = synth_generate(a.options);
  save_dataset(a.out, ds.samples);
  std::size_t total = 0;
  for (const auto& s : ds.samples) total += static_cast<std::size_t>(max_label(s.instances));
  std::cout << "wrote " << ds.samples.size() << " samples (" << total << " nuclei) to " << a.out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path out;
  fs::path config_file;
  fs::path resume;
  std::vector<std::string> sets;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::size_t tile = 0;
  std::size_t tile_stride = 0;
};

KeyValues parse_sets(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string x) {
      const auto b = x.find_first_not_of(" \t");
      const auto e = x.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
    };
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  return kv;
}

void reject_unknown_keys(const KeyValues& kv, const std::string& origin) {
  const KeyValues known_net = NetworkConfig{}.to_key_values();
  const KeyValues known_train = TrainConfig{}.to_key_values();
  for (const auto& [k, v] : kv) {
    if (!known_net.count(k) && !known_train.count(k) && k != "train.checkpoint_dir") {
      throw UsageError(origin + ": unknown setting '" + k + "'");
    }
  }
}

int cmd_train(TrainArgs& a, const std::string& argv) {
  // Precedence, lowest first: built-in defaults (or the resumed checkpoint), --config file, --set, named flags.
  KeyValues overrides;
  if (!a.config_file.empty()) {
    overrides = read_key_values(a.config_file);
    reject_unknown_keys(overrides, a.config_file.string());
  }
  const KeyValues sets = parse_sets(a.sets);
  reject_unknown_keys(sets, "--set");
  for (const auto& [k, v] : sets) overrides[k] = v;
  if (a.lr) overrides["train.lr"] = format_double(*a.lr);
  if (a.epochs) overrides["train.epochs"] = std::to_string(*a.epochs);
  if (a.batch_size) overrides["train.batch_size"] = std::to_string(*a.batch_size);
  if (a.seed) overrides["train.seed"] = std::to_string(*a.seed);

  std::optional<TrainingCheckpoint> resumed;
  if (!a.resume.empty()) resumed = load_checkpoint(a.resume);

  KeyValues net_kv = resumed ? resumed->net.config().to_key_values() : NetworkConfig{}.to_key_values();
  for (const auto& [k, v] : overrides) {
    if (!k.starts_with("network.")) continue;
    if (resumed && net_kv.at(k) != v) throw UsageError("cannot change " + k + " when resuming");
    net_kv[k] = v;
  }
  NetworkConfig net_config = NetworkConfig::from_key_values(net_kv);
  if (!overrides.count("network.seed") && a.seed && !resumed) net_config.seed = *a.seed;

  TrainConfig config = TrainConfig::from_key_values(overrides, resumed ? resumed->config : TrainConfig{});
  config.checkpoint_dir = a.out;
  config.validate();

  KeyValues snapshot = net_config.to_key_values();
  for (const auto& [k, v] : config.to_key_values()) snapshot[k] = v;
  if (a.tile) {
    snapshot["cli.tile"] = std::to_string(a.tile);
    snapshot["cli.tile_stride"] = std::to_string(a.tile_stride ? a.tile_stride : a.tile);
  }

  std::vector<Sample> data = load_dataset(a.data);
  if (a.tile) {
    std::vector<Sample> tiles;
    for (const auto& s : data) {
      for (auto& t : haru::tile(s, a.tile, a.tile_stride ? a.tile_stride : a.tile)) tiles.push_back(std::move(t));
    }
    data = std::move(tiles);
  }

  Manifest m{"train", argv, config.seed, {{"input.data", a.data.string()}, {"output.dir", a.out.string()}}, snapshot};
  if (!a.resume.empty()) m.paths["input.resume"] = a.resume.string();
  write_manifest(a.out, m, false);

  Network net = resumed ? resumed->net : Network(net_config);
  TrainState state = resumed ? resumed->state : TrainState::fresh(config);
  if (resumed && overrides.count("train.lr")) state.lr = config.lr;

  std::ofstream log(a.out / "train.log", resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + (a.out / "train.log").string());
  if (!resumed) write_log_header(log);
  state = train(net, data, config, std::move(state), &log);
  std::cout << "trained " << state.epoch << " epochs, " << state.step << " steps; final epoch loss "
            << format_double(state.epoch_losses.empty() ? 0.0 : state.epoch_losses.back()) << ", lr "
            << format_double(state.lr) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  fs::path ckpt;
  fs::path images;
  fs::path out;
  bool sides = false;
  std::size_t jobs = 1;
};

int cmd_predict(PredictArgs& a, const std::string& argv) {
  Network net = load_network(a.ckpt);
  net.set_training(false);
  const auto files = list_pngs(images_dir(a.images));
  KeyValues snapshot = net.config().to_key_values();
  snapshot["predict.sides"] = a.sides ? "true" : "false";
  Manifest m{"predict", argv, net.config().seed,
             {{"input.checkpoint", a.ckpt.string()}, {"input.images", a.images.string()}, {"output.dir", a.out.string()}},
             snapshot};
  write_manifest(a.out, m, false);
  parallel_for(files.size(), a.jobs, [&](std::size_t i) {
    const std::string id = files[i].stem().string();
    const Prediction p = predict_image(net, read_png_rgb(files[i]), a.sides);
    write_probability_png(a.out / (id + "_mask.png"), p.mask);
    write_probability_png(a.out / (id + "_edge.png"), p.edge);
    for (std::size_t k = 0; k < p.mask_sides.size(); ++k) {
      write_probability_png(a.out / (id + "_mask_side" + std::to_string(k + 1) + ".png"), p.mask_sides[k]);
      write_probability_png(a.out / (id + "_edge_side" + std::to_string(k + 1) + ".png"), p.edge_sides[k]);
    }
  });
  std::cout << "predicted " << files.size() << " images into " << a.out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct PostprocessArgs {
  fs::path mask, edge, out;
  fs::path pred_dir, out_dir;
  double threshold = 0.5;
  int erosion_iters = 0;
  bool plain_cc = false;
  std::size_t jobs = 1;
};

InstanceMap postprocess_one(const fs::path& mask_png, const fs::path& edge_png, const PostprocessArgs& a) {
  const BinaryMap mask = binarize(read_probability_png(mask_png), a.threshold);
  if (a.plain_cc) return connected_components(mask).labels;
  const BinaryMap edge = binarize(read_probability_png(edge_png), a.threshold);
  return instance_segment(mask, edge, a.erosion_iters);
}

int cmd_postprocess(PostprocessArgs& a, const std::string& argv) {
  if (a.threshold <= 0.0 || a.threshold > 1.0) throw UsageError("--threshold must be in (0, 1]");
  if (a.erosion_iters < 0) throw UsageError("--erosion-iters must be >= 0");
  const bool batch = !a.pred_dir.empty();
  if (batch == !a.mask.empty()) throw UsageError("give either --mask/--edge/--out or --pred-dir/--out-dir");
  KeyValues snapshot{{"postprocess.threshold", format_double(a.threshold)},
                     {"postprocess.erosion_iters", std::to_string(a.erosion_iters)},
                     {"postprocess.plain_cc", a.plain_cc ? "true" : "false"}};
  if (!batch) {
    if (a.out.empty() || (a.edge.empty() && !a.plain_cc)) throw UsageError("--mask needs --edge and --out");
    Manifest m{"postprocess", argv, 0,
               {{"input.mask", a.mask.string()}, {"input.edge", a.edge.string()}, {"output.file", a.out.string()}},
               snapshot};
    write_manifest(dir_of(a.out), m, true);
    write_label_png(a.out, postprocess_one(a.mask, a.edge, a));
    return kOk;
  }
  if (a.out_dir.empty()) throw UsageError("--pred-dir needs --out-dir");
  const auto masks = list_pngs(a.pred_dir, "_mask.png");
  Manifest m{"postprocess", argv, 0, {{"input.pred_dir", a.pred_dir.string()}, {"output.dir", a.out_dir.string()}},
             snapshot};
  write_manifest(a.out_dir, m, false);
  parallel_for(masks.size(), a.jobs, [&](std::size_t i) {
    const std::string name = masks[i].filename().string();
    const std::string id = name.substr(0, name.size() - std::string("_mask.png").size());
    const fs::path edge = a.pred_dir / (id + "_edge.png");
    if (!a.plain_cc && !fs::exists(edge)) throw IoError("missing edge map " + edge.string());
    write_label_png(a.out_dir / (id + ".png"), postprocess_one(masks[i], edge, a));
  });
  std::cout << "post-processed " << masks.size() << " images into " << a.out_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path pred, gt, report;
  std::size_t jobs = 1;
};

int cmd_eval(EvalArgs& a, const std::string& argv) {
  const auto gt_files = list_pngs(labels_dir(a.gt));
  if (gt_files.empty()) throw IoError("no ground-truth label PNGs in " + labels_dir(a.gt).string());
  Manifest m{"eval", argv, 0,
             {{"input.pred", a.pred.string()},
              {"input.gt", a.gt.string()},
              {"output.report", a.report.string()},
              {"output.report_kv", a.report.string() + ".kv"}},
             {}};
  write_manifest(dir_of(a.report), m, true);

  std::vector<ImageMetrics> per(gt_files.size());
  parallel_for(gt_files.size(), a.jobs, [&](std::size_t i) {
    const std::string id = gt_files[i].stem().string();
    const fs::path pred = a.pred / (id + ".png");
    if (!fs::exists(pred)) throw IoError("no prediction for " + id + " (expected " + pred.string() + ")");
    per[i] = evaluate_image(read_label_png(pred), read_label_png(gt_files[i]), id);
  });
  MetricReport report;
  report.images = std::move(per);
  const double n = static_cast<double>(report.images.size());
  for (const auto& im : report.images) {
    report.mean_dice += im.dice;
    report.mean_aji += im.aji;
    report.mean_pq += im.pq;
  }
  report.mean_dice /= n;
  report.mean_aji /= n;
  report.mean_pq /= n;

  const std::string table = format_report_table(report);
  std::ofstream(a.report) << table;
  std::ofstream(a.report.string() + ".kv") << format_report_kv(report);
  if (!fs::exists(a.report)) throw IoError("cannot write " + a.report.string());
  std::cout << table;
  return kOk;
}

// ---------------------------------------------------------------------------

struct VizArgs {
  fs::path labels, out;
  bool boundary = false;
};

int cmd_viz(VizArgs& a, const std::string& argv) {
  Manifest m{"viz", argv, 0, {{"input.labels", a.labels.string()}, {"output.file", a.out.string()}},
             {{"viz.boundary", a.boundary ? "true" : "false"}}};
  write_manifest(dir_of(a.out), m, true);
  write_png_rgb8(a.out, render_labels(read_label_png(a.labels), a.boundary));
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kUsage;
  return kData;  // IoError, DimensionError and anything raised while reading inputs
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"haru: dual-branch nucleus instance segmentation (synth, train, predict, postprocess, eval, viz)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.footer(
      "Exit codes: 0 success, 2 usage or configuration error, 3 data error (missing/corrupt files, bad shapes),\n"
      "4 numeric failure (non-finite loss). File formats are described in FORMATS.md.");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic nuclei dataset (images/ + labels/ + manifest.txt)");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("-n,--n-images", synth.options.n_images, "Number of images")->capture_default_str();
  s->add_option("--size", synth.options.size, "Image side length in pixels")->capture_default_str();
  s->add_option("--density", synth.options.density, "Target fraction of pixels covered by nuclei")->capture_default_str();
  s->add_option("--overlap", synth.options.overlap, "Packing tightness in [0,1); 0 keeps nuclei apart")
      ->capture_default_str();
  s->add_option("--seed", synth.options.seed, "Random seed")->capture_default_str();
  s->add_option("--min-radius", synth.options.min_radius, "Smallest semi-major axis")->capture_default_str();
  s->add_option("--max-radius", synth.options.max_radius, "Largest semi-major axis")->capture_default_str();
  s->add_option("--noise", synth.options.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  s->add_flag("--no-prune", synth.no_prune, "Place every requested nucleus, relaxing the spacing rule if needed");

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Train a network; writes last.ckpt, train.log and manifest.txt into --out");
  t->add_option("--data", train_args.data, "Dataset directory (images/ + labels/)")->required();
  t->add_option("--out", train_args.out, "Output directory for checkpoints and the log")->required();
  t->add_option("--config", train_args.config_file, "Key-value config file (network.* and train.* keys)");
  t->add_option("--set", train_args.sets, "Override one setting, key=value (repeatable)");
  t->add_option("--lr", train_args.lr, "Learning rate (train.lr)");
  t->add_option("--epochs", train_args.epochs, "Epochs to reach (train.epochs)");
  t->add_option("--batch-size", train_args.batch_size, "Batch size (train.batch_size)");
  t->add_option("--seed", train_args.seed, "Seed for shuffling and, on fresh runs, weight init");
  t->add_option("--resume", train_args.resume, "Continue from a checkpoint written by train");
  t->add_option("--tile", train_args.tile, "Train on size x size tiles instead of whole images");
  t->add_option("--tile-stride", train_args.tile_stride, "Tile stride (default: tile size)");
  t->footer("Setting precedence, lowest first: defaults (or the --resume checkpoint), --config, --set, named flags.");

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "Write <id>_mask.png and <id>_edge.png (16-bit, p*65535) per image");
  p->add_option("--ckpt", predict.ckpt, "Checkpoint file")->required();
  p->add_option("--images", predict.images, "Image directory, or a dataset directory with images/")->required();
  p->add_option("--out", predict.out, "Output directory")->required();
  p->add_flag("--sides", predict.sides, "Also write the 12 side maps as <id>_{mask,edge}_side<k>.png");
  p->add_option("-j,--jobs", predict.jobs, "Images processed in parallel")->capture_default_str();

  PostprocessArgs post;
  auto* pp = app.add_subcommand("postprocess", "Turn mask/edge probability maps into a 16-bit instance label map");
  pp->add_option("--mask", post.mask, "Mask probability PNG");
  pp->add_option("--edge", post.edge, "Edge probability PNG");
  pp->add_option("--out", post.out, "Output label PNG");
  pp->add_option("--pred-dir", post.pred_dir, "Batch mode: directory of <id>_mask.png / <id>_edge.png");
  pp->add_option("--out-dir", post.out_dir, "Batch mode: output directory for <id>.png");
  pp->add_option("--threshold", post.threshold, "Binarisation threshold (p >= t is foreground)")->capture_default_str();
  pp->add_option("--erosion-iters", post.erosion_iters, "Erode seeds this many times first")->capture_default_str();
  pp->add_flag("--plain-cc", post.plain_cc, "Ablation: connected components of the mask, ignoring the edge map");
  pp->add_option("-j,--jobs", post.jobs, "Images processed in parallel (batch mode)")->capture_default_str();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Per-image and mean Dice, AJI and PQ; table at --report, key-values at <report>.kv");
  e->add_option("--pred", eval.pred, "Directory of predicted <id>.png label maps")->required();
  e->add_option("--gt", eval.gt, "Ground-truth label directory, or a dataset directory with labels/")->required();
  e->add_option("--report", eval.report, "Report path")->required();
  e->add_option("-j,--jobs", eval.jobs, "Images evaluated in parallel")->capture_default_str();

  VizArgs viz;
  auto* v = app.add_subcommand("viz", "Render a label map with one colour per instance");
  v->add_option("--labels", viz.labels, "Instance label PNG")->required();
  v->add_option("--out", viz.out, "Output RGB PNG")->required();
  v->add_flag("--boundary", viz.boundary, "Draw instance contours in white");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + quote_arg(argv[i]);

  try {
    if (s->parsed()) return cmd_synth(synth, command_line);
    if (t->parsed()) return cmd_train(train_args, command_line);
    if (p->parsed()) return cmd_predict(predict, command_line);
    if (pp->parsed()) return cmd_postprocess(post, command_line);
    if (e->parsed()) return cmd_eval(eval, command_line);
    if (v->parsed()) return cmd_viz(viz, command_line);
  } catch (const std::exception& ex) {
    std::cerr << "haru " << app.get_subcommands().front()->get_name() << ": " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return kUsage;
}
