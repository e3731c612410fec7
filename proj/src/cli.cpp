#include "startopo/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "startopo/checkpoint.hpp"
#include "startopo/dataset.hpp"
#include "startopo/error.hpp"
#include "startopo/evaluate.hpp"
#include "startopo/gradcheck.hpp"
#include "startopo/metrics.hpp"
#include "startopo/png_io.hpp"
#include "startopo/stream.hpp"
#include "startopo/train.hpp"

namespace startopo {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Command-line values collected for one invocation. Each entry writes its
// value into the resolved config only if the flag was actually given, so
// flags override the config file and the file overrides the defaults.
struct Overrides {
  std::vector<std::function<void(json&)>> apply;

  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    apply.push_back([opt, value, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    apply.push_back([opt, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = true;
    });
    return opt;
  }
};

json defaults_for(const std::string& command) {
  if (command == "synth") {
    return {{"command", "synth"},
            {"seed", 0},
            {"out", "dataset"},
            {"count", 250},
            {"frames", false},
            {"test_fraction", 0.2},
            {"validation_fraction", 0.2},
            {"phantom", PhantomConfig{}},
            {"degradation", DegradationConfig{}}};
  }
  if (command == "train") {
    return {{"command", "train"},
            {"seed", 0},
            {"out", "run"},
            {"data", "dataset"},
            {"network", NetworkConfig{}},
            {"training", TrainingConfig{}}};
  }
  if (command == "eval") {
    return {{"command", "eval"},   {"seed", 0},        {"out", "eval"},         {"checkpoint", "run/checkpoint.bin"},
            {"data", "dataset"},   {"split", "test"},  {"source", "degraded"}};
  }
  if (command == "gradcheck") {
    const GradCheckConfig d;
    return {{"command", "gradcheck"},
            {"seed", 0},
            {"out", "gradcheck"},
            {"instances", d.instances},
            {"size", d.size},
            {"step", d.step},
            {"trials", d.trials},
            {"tolerance", d.tolerance},
            {"alpha", d.weights.alpha},
            {"beta", d.weights.beta},
            {"corrupt_gradient", ""}};
  }
  return {{"command", "stream"},
          {"seed", 0},
          {"out", "stream"},
          {"checkpoint", "run/checkpoint.bin"},
          {"frames", "frames"},
          {"warmup", 5},
          {"save_masks", false}};
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct Context {
  json cfg;
  bool quiet = false;
  std::ostream& out;

  template <typename T>
  T get(const char* key) const {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  fs::path out_dir() const { return get<std::string>("out"); }
  std::ostream& log() const {
    static std::ostream null(nullptr);
    return quiet ? null : out;
  }
};

// ---------------------------------------------------------------------------

int cmd_synth(const Context& ctx) {
  const auto count = ctx.get<long long>("count");
  if (count <= 0) throw ConfigError("synth: --count must be positive");
  const auto phantom = ctx.get<PhantomConfig>("phantom");
  const auto degradation = ctx.get<DegradationConfig>("degradation");
  const auto seed = ctx.get<std::uint64_t>("seed");
  const fs::path out = ctx.out_dir();
  if (ctx.get<bool>("frames")) {
    const auto files = generate_frames(static_cast<std::size_t>(count), phantom, degradation, seed, out);
    write_json_file(out / "synth_config.json", ctx.cfg);
    ctx.log() << "wrote " << files.size() << " frames to " << out.string() << '\n';
    return kExitOk;
  }
  DatasetOptions options;
  options.test_fraction = ctx.get<double>("test_fraction");
  options.validation_fraction = ctx.get<double>("validation_fraction");
  const Manifest m = generate_dataset(static_cast<std::size_t>(count), phantom, degradation, seed, out, options);
  write_json_file(out / "synth_config.json", ctx.cfg);
  ctx.log() << "wrote " << m.samples.size() << " samples to " << out.string()
            << " (train " << m.indices(Split::Train).size() << ", val " << m.indices(Split::Val).size()
            << ", test " << m.indices(Split::Test).size() << ")\n";
  return kExitOk;
}

int cmd_train(const Context& ctx) {
  const auto network = ctx.get<NetworkConfig>("network");
  auto training = ctx.get<TrainingConfig>("training");
  training.seed = ctx.get<std::uint64_t>("seed");
  network.validate();
  training.validate();
  const Manifest manifest = load_manifest(ctx.get<std::string>("data"));
  const fs::path out = ctx.out_dir();
  ensure_dir(out);
  auto& log = ctx.log();
  log << "training: " << count_params(network) << " parameters, alpha " << training.loss_weights.alpha << ", beta "
      << training.loss_weights.beta << ", seed " << training.seed << '\n';
  const Checkpoint ckpt = train(manifest, network, training, [&](const EpochRecord& r, bool improved) {
    log << "epoch " << r.epoch << "  train_loss " << fixed(r.train_loss) << "  val_loss " << fixed(r.val_loss)
        << "  val_dice " << fixed(r.val_dice) << (improved ? "  *" : "") << std::endl;
  });
  save_checkpoint(ckpt, out / "checkpoint.bin");
  write_json_file(out / "history.json", history_json(ckpt));
  write_json_file(out / "train_config.json", ctx.cfg);
  log << "best epoch " << ckpt.best_epoch << "; checkpoint written to " << (out / "checkpoint.bin").string() << '\n';
  return kExitOk;
}

int cmd_eval(const Context& ctx) {
  const Checkpoint ckpt = load_checkpoint(ctx.get<std::string>("checkpoint"));
  const Manifest manifest = load_manifest(ctx.get<std::string>("data"));
  const Split split = parse_split(ctx.get<std::string>("split"));
  const ImageSource source = parse_image_source(ctx.get<std::string>("source"));
  const EvaluationReport report = evaluate_dataset(ckpt, manifest, split, source);
  const fs::path out = ctx.out_dir();
  ensure_dir(out);
  write_json_file(out / "report.json", report);
  write_json_file(out / "eval_config.json", ctx.cfg);
  const auto& a = report.aggregates;
  auto& log = ctx.log();
  log << "split " << report.split << " (" << report.image_source << "), " << report.per_image.size() << " images\n"
      << "  ssim       " << fixed(a.ssim) << '\n'
      << "  psnr_db    " << fixed(a.psnr_db, 2) << '\n'
      << "  iou        " << fixed(a.iou) << '\n'
      << "  dice       " << fixed(a.dice) << '\n'
      << "  epi_err    " << fixed(a.epi_err_px) << " px  " << fixed(a.epi_err_um) << " um\n"
      << "  dm_err     " << fixed(a.dm_err_px) << " px  " << fixed(a.dm_err_um) << " um\n"
      << "  holes      " << fixed(a.invalid_column_fraction) << " of columns\n";
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx) {
  GradCheckConfig g;
  g.seed = ctx.get<std::uint64_t>("seed");
  g.instances = ctx.get<int>("instances");
  g.size = ctx.get<int>("size");
  g.step = ctx.get<double>("step");
  g.trials = ctx.get<int>("trials");
  g.tolerance = ctx.get<double>("tolerance");
  g.weights.alpha = ctx.get<double>("alpha");
  g.weights.beta = ctx.get<double>("beta");
  g.corrupt = ctx.get<std::string>("corrupt_gradient");
  if (!(g.step > 0.0 && g.step <= 1e-2)) throw ConfigError("gradcheck: --step must be in (0, 1e-2]");
  const GradCheckOutcome outcome = run_gradcheck(g);
  const fs::path out = ctx.out_dir();
  ensure_dir(out);
  json losses = json::array();
  for (const auto& s : outcome.losses) {
    losses.push_back({{"loss", s.loss},
                      {"max_relative_error", s.max_relative_error},
                      {"tested", s.tested},
                      {"skipped", s.skipped}});
  }
  write_json_file(out / "gradcheck.json",
                  {{"passed", outcome.passed}, {"tolerance", g.tolerance}, {"losses", losses}});
  write_json_file(out / "gradcheck_config.json", ctx.cfg);
  // The table is printed even with --quiet when the check fails.
  std::ostream& table = outcome.passed ? ctx.log() : ctx.out;
  table << "loss          max_rel_error  tested  skipped\n";
  for (const auto& s : outcome.losses) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s  %13.6e  %6zu  %7zu\n", s.loss.c_str(), s.max_relative_error, s.tested,
                  s.skipped);
    table << line;
  }
  table << (outcome.passed ? "PASS" : "FAIL") << " (tolerance " << g.tolerance << ")\n";
  return outcome.passed ? kExitOk : kExitGradCheckFailed;
}

int cmd_stream(const Context& ctx) {
  const Checkpoint ckpt = load_checkpoint(ctx.get<std::string>("checkpoint"));
  const auto warmup = ctx.get<long long>("warmup");
  if (warmup < 0) throw ConfigError("stream: --warmup must be >= 0");
  const bool save = ctx.get<bool>("save_masks");
  DirectoryFrameSource source(ctx.get<std::string>("frames"));
  if (source.size() <= static_cast<std::size_t>(warmup)) {
    throw ConfigError("stream: " + std::to_string(source.size()) + " frames leave none after warmup " +
                      std::to_string(warmup));
  }
  const fs::path out = ctx.out_dir();
  ensure_dir(out);
  if (save) {
    ensure_dir(out / "masks");
    ensure_dir(out / "traces");
  }
  Segmenter segmenter(ckpt);
  const StreamStats stats =
      run_stream(segmenter, source, static_cast<std::size_t>(warmup), [&](const StreamFrame& f) {
        if (!save) return;
        char stem[32];
        std::snprintf(stem, sizeof(stem), "%04zu", f.index);
        write_mask_png(out / "masks" / ("mask_" + std::string(stem) + ".png"), f.result->mask);
        const BoundaryTrace trace = extract_boundaries(f.result->mask);
        json epi = json::array();
        json dm = json::array();
        for (std::size_t c = 0; c < trace.width(); ++c) {
          epi.push_back(trace.epithelium_rows[c] ? json(*trace.epithelium_rows[c]) : json());
          dm.push_back(trace.dm_rows[c] ? json(*trace.dm_rows[c]) : json());
        }
        write_json_file(out / "traces" / ("trace_" + std::string(stem) + ".json"),
                        {{"frame", f.index}, {"epithelium_rows", epi}, {"dm_rows", dm}});
      });
  json report = stats;
  report["warmup"] = warmup;
  report["frames_total"] = source.size();
  write_json_file(out / "stream_stats.json", report);
  write_json_file(out / "stream_config.json", ctx.cfg);
  ctx.log() << stats.frame_count << " frames after warmup " << warmup << ": mean latency "
            << fixed(stats.mean_latency * 1e3, 2) << " ms, p95 " << fixed(stats.p95_latency * 1e3, 2) << " ms, "
            << fixed(stats.frequency, 2) << " Hz\n";
  return kExitOk;
}

int dispatch(const std::string& command, const Context& ctx) {
  if (command == "synth") return cmd_synth(ctx);
  if (command == "train") return cmd_train(ctx);
  if (command == "eval") return cmd_eval(ctx);
  if (command == "gradcheck") return cmd_gradcheck(ctx);
  return cmd_stream(ctx);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Star-shape topology-regularized segmentation toolkit", "startopo");
  app.require_subcommand(1);
  app.fallthrough();

  Overrides ov;
  std::string config_file;
  app.add_option("--config", config_file, "JSON config file; command-line flags take precedence");
  ov.add<std::uint64_t>(&app, "--seed", "/seed", "Random seed");
  ov.add<std::string>(&app, "--out", "/out", "Output directory");
  CLI::Option* quiet = app.add_flag("--quiet,-q", "Only print errors");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic OCT dataset (or a frame sequence)");
  ov.add<long long>(synth, "--count", "/count", "Number of samples");
  ov.add_flag(synth, "--frames", "/frames", "Write only numbered degraded frames for streaming");
  ov.add<double>(synth, "--test-fraction", "/test_fraction", "Fraction of samples in the test split");
  ov.add<double>(synth, "--validation-fraction", "/validation_fraction", "Fraction of the rest used for validation");
  ov.add<int>(synth, "--height", "/phantom/height", "Image height");
  ov.add<int>(synth, "--width", "/phantom/width", "Image width");

  auto* trn = app.add_subcommand("train", "Train a segmentation network");
  ov.add<std::string>(trn, "--data", "/data", "Dataset directory or manifest");
  ov.add<double>(trn, "--alpha", "/training/loss_weights/alpha", "BCE weight");
  ov.add<double>(trn, "--beta", "/training/loss_weights/beta", "Topological loss weight (0 = BCE-only baseline)");
  ov.add<int>(trn, "--epochs", "/training/epochs", "Maximum epochs");
  ov.add<int>(trn, "--batch", "/training/batch", "Patches per optimizer step");
  ov.add<double>(trn, "--lr", "/training/optimizer/learning_rate", "Adam step size");
  ov.add<int>(trn, "--patience", "/training/early_stop_patience", "Epochs without validation improvement before stopping");
  ov.add<int>(trn, "--ray-stride", "/training/ray_stride", "Use every n-th foreground pixel as a ray source");
  ov.add<int>(trn, "--strip-width", "/training/strip_width", "Patch width");
  ov.add<double>(trn, "--validation-fraction", "/training/validation_fraction",
                 "Validation share carved from train when the dataset has no val split");
  ov.add<int>(trn, "--levels", "/network/levels", "Encoder depth");
  ov.add<int>(trn, "--base-channels", "/network/base_channels", "Channels at the first level");

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ov.add<std::string>(evl, "--checkpoint", "/checkpoint", "Checkpoint file");
  ov.add<std::string>(evl, "--data", "/data", "Dataset directory or manifest");
  ov.add<std::string>(evl, "--split", "/split", "train, val or test");
  ov.add<std::string>(evl, "--source", "/source", "degraded or clean images");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradients");
  ov.add<int>(grad, "--instances", "/instances", "Random instances");
  ov.add<int>(grad, "--size", "/size", "Instance side length");
  ov.add<double>(grad, "--step", "/step", "Central-difference step");
  ov.add<int>(grad, "--trials", "/trials", "Pixel draws per instance and loss");
  ov.add<double>(grad, "--tolerance", "/tolerance", "Maximum relative error");
  ov.add<std::string>(grad, "--corrupt-gradient", "/corrupt_gradient",
                      "Test hook: perturb the analytic gradient of bce, topological or hybrid");

  auto* strm = app.add_subcommand("stream", "Sequential inference over a directory of numbered frames");
  ov.add<std::string>(strm, "--checkpoint", "/checkpoint", "Checkpoint file");
  ov.add<std::string>(strm, "--frames", "/frames", "Directory of numbered PNG frames");
  ov.add<long long>(strm, "--warmup", "/warmup", "Frames excluded from the statistics");
  ov.add_flag(strm, "--save-masks", "/save_masks", "Write per-frame masks and boundary traces");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    json cfg = defaults_for(command);
    if (!config_file.empty()) {
      json file = read_json_file(config_file);
      if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
      if (file.contains("command") && file["command"] != command) {
        throw ConfigError("config file is for '" + file["command"].dump() + "', not '" + command + "'");
      }
      cfg.merge_patch(file);
    }
    for (const auto& f : ov.apply) f(cfg);
    for (const auto& [key, value] : cfg.items()) {
      if (!defaults_for(command).contains(key)) throw ConfigError("unknown config key '" + key + "' for " + command);
    }
    if (command == "train") cfg["training"]["seed"] = cfg["seed"];
    Context ctx{cfg, quiet->count() > 0, out};
    return dispatch(command, ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValueError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const EmptyDatasetError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const DimensionError& e) {
    err << "shape error: " << e.what() << '\n';
    return kExitShape;
  } catch (const ConsistencyError& e) {
    err << "consistency error: " << e.what() << '\n';
    return kExitShape;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace startopo
