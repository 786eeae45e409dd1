// binorm: train, evaluate and inspect batch-instance normalized toy networks.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "binorm/error.hpp"
#include "binorm/gates.hpp"
#include "binorm/gradcheck.hpp"
#include "binorm/rng.hpp"
#include "binorm/train.hpp"

namespace fs = std::filesystem;
using namespace binorm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

// Flags that mirror RunConfig keys. Only flags given on the command line are
// overlaid, so they override a --config file without the defaults clobbering it.
struct RunFlags {
  std::string config_path;
  RunConfig defaults;
  std::string norm = "bin";
  std::string task = "shape";
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double gate_lr_mult = 0.0;
  double eps = 0.0;
  std::size_t channels = 0;
  std::size_t norm_layers = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t size = 0;
  std::string out;
  std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> overlays;

  RunFlags() {
    const TrainConfig& t = defaults.train;
    epochs = t.epochs;
    batch_size = t.batch_size;
    lr = t.base_lr;
    momentum = t.momentum;
    weight_decay = t.weight_decay;
    gate_lr_mult = t.gate_lr_multiplier;
    eps = defaults.net.eps;
    channels = defaults.net.channels;
    norm_layers = defaults.net.num_norm_layers;
    n_train = defaults.n_train;
    n_test = defaults.n_test;
    size = defaults.data.height;
    out = defaults.out_dir.string();
  }

  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& key, T& target,
           const std::string& help) {
    CLI::Option* opt = app->add_option(flag, target, help)->capture_default_str();
    overlays.emplace_back(opt, [key, &target](json& j) { j[key] = target; });
  }

  void register_data(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file; explicit flags override it");
    add(app, "--task", "task", task, "dataset task {shape|style}");
    add(app, "--seed", "seed", seed, "root seed for every random stream");
    add(app, "--n-train", "n_train", n_train, "training samples");
    add(app, "--n-test", "n_test", n_test, "test samples");
    add(app, "--size", "size", size, "image height and width (>= 16)");
    add(app, "--out", "out", out, "output directory");
  }

  void register_train(CLI::App* app) {
    register_data(app);
    add(app, "--norm", "norm", norm, "normalization {bn|in|bin|bn+in}");
    add(app, "--epochs", "epochs", epochs, "training epochs");
    add(app, "--batch-size", "batch_size", batch_size, "minibatch size");
    add(app, "--lr", "lr", lr, "base learning rate");
    add(app, "--momentum", "momentum", momentum, "SGD momentum");
    add(app, "--weight-decay", "weight_decay", weight_decay, "weight decay (never applied to gates)");
    add(app, "--gate-lr-mult", "gate_lr_mult", gate_lr_mult, "gate learning-rate multiplier");
    add(app, "--eps", "eps", eps, "normalization epsilon");
    add(app, "--channels", "channels", channels, "channels per conv block");
    add(app, "--norm-layers", "norm_layers", norm_layers, "number of conv-norm-relu blocks (>= 3)");
  }

  RunConfig resolve() const {
    RunConfig cfg = defaults;
    if (!config_path.empty()) cfg = run_config_from_json(read_json_file(config_path), cfg);
    json given = json::object();
    for (const auto& [opt, write] : overlays) {
      if (opt->count() > 0) write(given);
    }
    cfg = run_config_from_json(given, cfg);
    cfg.validate();
    return cfg;
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  }
}

int cmd_train(const RunFlags& flags) {
  const RunConfig cfg = flags.resolve();
  ensure_dir(cfg.out_dir);
  const fs::path metrics_path = cfg.out_dir / "metrics.csv";
  const fs::path checkpoint_path = cfg.out_dir / "checkpoint.json";
  // fail on an unwritable path before spending time on training
  write_text_file(metrics_path, "");
  write_text_file(cfg.out_dir / "config.json", run_config_to_json(cfg).dump(2) + "\n");

  const TrainResult result = run_training(cfg);
  write_text_file(metrics_path, metrics_to_csv(result.metrics));
  write_text_file(checkpoint_path, checkpoint_to_json(result.net, cfg).dump() + "\n");
  std::printf("norm=%s task=%s seed=%llu test_loss=%.6f test_accuracy=%.4f\n",
              std::string(to_string(cfg.net.norm_kind)).c_str(),
              std::string(to_string(cfg.task)).c_str(),
              static_cast<unsigned long long>(cfg.train.seed), result.final_test.loss,
              result.final_test.accuracy);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path) {
  const json ckpt = read_json_file(checkpoint_path);
  const RunConfig cfg = config_from_checkpoint(ckpt);
  Network net = network_from_checkpoint(ckpt);
  const Dataset data = make_run_dataset(cfg);
  const EvalResult r = evaluate(net, data.test);
  std::printf("test_loss=%.6f test_accuracy=%.4f\n", r.loss, r.accuracy);
  return kExitOk;
}

int cmd_gates(const std::string& checkpoint_path, std::size_t bins, const std::string& out) {
  const auto layers = summarize_gates(read_json_file(checkpoint_path), bins);
  if (!out.empty()) {
    ensure_dir(out);
    write_text_file(fs::path(out) / "gates_hist.csv", gate_histogram_csv(layers, bins));
    write_text_file(fs::path(out) / "gates.csv", gate_values_csv(layers));
  } else {
    std::fputs(gate_histogram_csv(layers, bins).c_str(), stdout);
  }
  std::puts(gate_summary_line(layers).c_str());
  return kExitOk;
}

struct GradcheckFlags {
  std::string target = "all";
  std::uint64_t seed = 0;
  std::string inject_fault = "none";
  GradCheckTolerances tol{};
};

bool print_reports(const std::string& label, const std::vector<GradCheckReport>& reports) {
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-22s %s\n", label.c_str(), format_report(r).c_str());
    ok = ok && r.passed;
  }
  return ok;
}

int cmd_gradcheck(const GradcheckFlags& f) {
  NormBackwardFn backward = norm_backward;
  if (f.inject_fault == "rho-sign") {
    backward = [](NormKind k, const NormCache& c, const NormParams& p, const Tensor4& dy) {
      GradBundle g = norm_backward(k, c, p, dy);
      if (g.d_rho) {
        for (double& v : g.d_rho->data) v = -v;
      }
      return g;
    };
  } else if (f.inject_fault != "none") {
    throw ConfigError("unknown fault '" + f.inject_fault + "' (expected none or rho-sign)");
  }

  const bool layers = f.target == "all" || f.target == "layers";
  const bool net = f.target == "all" || f.target == "net";
  std::optional<NormKind> only;
  if (f.target == "bin" || f.target == "bn" || f.target == "in") only = parse_norm_kind(f.target);
  if (!layers && !net && !only) {
    throw ConfigError("unknown gradcheck target '" + f.target +
                      "' (expected all, layers, net, bin, bn or in)");
  }

  bool ok = true;
  std::size_t checked = 0;
  for (const auto& c : default_layer_sweep(f.seed)) {
    if (!layers && !(only && c.kind == *only)) continue;
    ok = print_reports(describe(c), check_layer_gradients(c, f.tol, backward)) && ok;
    ++checked;
  }
  if (net) {
    for (NormKind kind : {NormKind::BIN, NormKind::BN, NormKind::IN}) {
      NetConfig nc;
      nc.height = nc.width = 8;
      nc.channels = 3;
      nc.padding = 1;
      nc.norm_kind = kind;
      Network model(build_toy_net(nc), f.seed);
      randomize_gates(model, f.seed);
      Rng rng(f.seed, "gradcheck/net");
      Tensor4 x(Shape{2, 1, 8, 8});
      for (double& v : x.data()) v = rng.normal();
      const std::vector<int> labels = {0, 3};
      ok = print_reports("net-" + std::string(to_string(kind)) + "(2,1,8,8)",
                         check_network_gradients(model, x, labels, f.tol)) && ok;
      ++checked;
    }
  }
  std::printf("gradcheck: %zu configurations, %s\n", checked, ok ? "all passed" : "FAILED");
  return ok ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch-instance normalization toolkit"};
  app.require_subcommand(1);

  RunFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "train a toy network and write metrics + checkpoint");
  train_flags.register_train(train);

  std::string eval_checkpoint;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on its regenerated test split");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint.json written by train")->required();

  std::string gates_checkpoint;
  std::size_t gates_bins = 10;
  std::string gates_out;
  CLI::App* gates = app.add_subcommand("gates", "histogram the style gates of a checkpoint");
  gates->add_option("--checkpoint", gates_checkpoint, "checkpoint.json written by train")->required();
  gates->add_option("--bins", gates_bins, "histogram bins over [0, 1]")->capture_default_str()
      ->check(CLI::PositiveNumber);
  gates->add_option("--out", gates_out,
                    "directory for gates_hist.csv and gates.csv (default: histogram to stdout)");

  GradcheckFlags gc;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gradcheck->add_option("--target", gc.target, "all | layers | net | bin | bn | in")->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "fixture seed")->capture_default_str();
  gradcheck->add_option("--rel-tol", gc.tol.rel_tol, "relative tolerance")->capture_default_str();
  gradcheck->add_option("--abs-tol", gc.tol.abs_tol, "absolute fallback tolerance")->capture_default_str();
  gradcheck->add_option("--step", gc.tol.step, "central-difference step")->capture_default_str();
  gradcheck->add_option("--inject-fault", gc.inject_fault,
                        "test fixture: none | rho-sign (flip the sign of d_rho)")
      ->capture_default_str();

  RunFlags data_flags;
  CLI::App* gen = app.add_subcommand("gen-data", "dump a generated dataset as tensor JSON + label CSV");
  data_flags.register_data(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_checkpoint);
    if (*gates) return cmd_gates(gates_checkpoint, gates_bins, gates_out);
    if (*gradcheck) return cmd_gradcheck(gc);
    if (*gen) {
      const RunConfig cfg = data_flags.resolve();
      ensure_dir(cfg.out_dir);
      const Dataset data = make_run_dataset(cfg);
      write_text_file(cfg.out_dir / "train.json", tensor_to_json(data.train.images).dump() + "\n");
      write_text_file(cfg.out_dir / "train_labels.csv", label_manifest_csv(data.train));
      write_text_file(cfg.out_dir / "test.json", tensor_to_json(data.test.images).dump() + "\n");
      write_text_file(cfg.out_dir / "test_labels.csv", label_manifest_csv(data.test));
      std::printf("wrote %zu train / %zu test samples to %s\n", cfg.n_train, cfg.n_test,
                  cfg.out_dir.string().c_str());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
