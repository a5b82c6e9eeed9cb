// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: synth, train, eval, predict, gradcheck.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ppmunet/ppmunet.hpp"

namespace {

using namespace ppmunet;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitGradcheck = 3;

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// "0.7,0.1,0.2" as fractions, or "10,1,3" as patient counts summing to the total.
std::array<double, 3> parse_split_arg(const std::string& text, std::size_t patients) {
  std::array<double, 3> v{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw ValidationError("--split takes three comma-separated values");
    try {
      std::size_t used = 0;
      v[i] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("--split: cannot parse '" + item + "'");
    }
    if (!(v[i] >= 0.0)) throw ValidationError("--split values must be non-negative");
    ++i;
  }
  if (i != 3) throw ValidationError("--split takes three comma-separated values");
  const double sum = v[0] + v[1] + v[2];
  const bool counts = sum > 1.0 + 1e-9;
  if (counts) {
    for (double x : v)
      if (x != std::floor(x)) throw ValidationError("--split counts must be integers");
    if (sum != static_cast<double>(patients))
      throw ValidationError("--split counts sum to " + std::to_string(static_cast<std::size_t>(sum)) +
                            " but --patients is " + std::to_string(patients));
    for (double& x : v) x /= sum;
  }
  return v;
}

struct SynthArgs {
  std::string out;
  std::size_t patients = 10, scans = 2, bscans = 20, size = 64;
  std::uint64_t seed = 1;
  std::string split = "0.7,0.1,0.2";
};

int run_synth(const SynthArgs& a) {
  if (a.patients < 1) throw ValidationError("--patients must be >= 1");
  if (a.size < 16) throw ValidationError("--size must be >= 16");
  DatasetPlan plan{a.patients, a.scans, a.bscans, parse_split_arg(a.split, a.patients)};
  const std::string manifest = generate_dataset(SynthSpec::scaled(a.size, a.size), plan, a.seed, a.out);
  const auto bytes = std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(manifest.data()),
                                                   manifest.size());
  std::cout << "wrote " << a.patients * a.scans * a.bscans << " B-scans for " << a.patients << " patients to "
            << a.out << "\nmanifest digest " << hex64(fnv1a64(bytes)) << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string profile, config, variant, data, out, log, class_weights;
  std::optional<std::size_t> epochs, batch_size, depth, base_channels, size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool dump_config = false;
};

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("cannot parse number '" + item + "'");
    }
  }
  return out;
}

RunConfig resolve_run_config(const TrainArgs& a) {
  RunConfig rc;
  if (!a.profile.empty()) apply_profile(rc, a.profile);
  if (!a.config.empty()) {
    const auto bytes = read_file(a.config);
    try {
      rc.merge_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config " + a.config + ": " + e.what());
    }
  }
  if (!a.variant.empty()) rc.model.variant = parse_variant(a.variant);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (!a.log.empty()) rc.log = a.log;
  if (!a.class_weights.empty()) rc.class_weights = parse_doubles(a.class_weights);
  if (a.epochs) rc.epochs = *a.epochs;
  if (a.batch_size) rc.batch_size = *a.batch_size;
  if (a.depth) rc.model.depth = *a.depth;
  if (a.base_channels) rc.model.base_channels = *a.base_channels;
  if (a.size) rc.model.input_h = rc.model.input_w = *a.size;
  if (a.lr) rc.learning_rate = *a.lr;
  if (a.seed) rc.seed = *a.seed;
  if (a.deterministic) rc.deterministic = true;
  return rc;
}

int run_train(const TrainArgs& a) {
  const RunConfig rc = resolve_run_config(a);
  rc.validate();
  if (a.dump_config) {
    std::cout << rc.to_json().dump(2) << "\n";
    return kExitOk;
  }
  if (rc.data.empty()) throw ValidationError("train needs --data");
  const TrainResult r = train(rc, &std::cout);
  std::cout << "checkpoint " << r.final_checkpoint.string() << "\nbest " << r.best_checkpoint.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", variant, out = "metrics.csv";
  bool oracle = false, no_topology = false, deterministic = false;
  std::uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
  EvalOptions o;
  o.data = a.data;
  o.split = parse_split(a.split);
  if (!a.checkpoint.empty()) o.checkpoint = a.checkpoint;
  if (!a.variant.empty()) o.variant = parse_variant(a.variant);
  o.oracle = a.oracle;
  o.topology_filter = !a.no_topology;
  const MetricsReport r = evaluate(o);
  const std::string csv = metrics_csv(r);
  write_file(a.out, std::string_view(csv));
  std::cout << csv;
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, input, out = "prediction", variant;
  bool resize = false, deterministic = false;
  std::uint64_t seed = 1;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ck = a.variant.empty() ? load_checkpoint(a.checkpoint)
                                          : load_checkpoint(a.checkpoint, parse_variant(a.variant));
  const Tensor4<float> image = image_from_nt4(read_nt4(a.input));
  const Prediction p = predict(ck.model, image, a.resize);
  write_nt4(a.out + "_mask.nt4", to_nt4(p.labels, true));
  write_file(a.out + "_overlay.ppm", std::string_view(overlay_ppm(image, p)));
  write_file(a.out + "_surfaces.csv", std::string_view(surfaces_csv(p.surfaces.surfaces)));
  std::cout << "wrote " << a.out << "_mask.nt4, " << a.out << "_overlay.ppm, " << a.out << "_surfaces.csv\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::string op, inject;
  std::uint64_t seed = 7;
};

int run_gradcheck_cmd(const GradcheckArgs& a) {
  GradcheckOptions o;
  o.seed = a.seed;
  o.op_filter = a.op;
  o.inject_sign_error = a.inject;
  const auto results = run_gradcheck(o);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    std::printf("%-20s worst %.3e  tol %.0e  coords %zu  excluded %zu  %s\n", r.op.c_str(), r.worst, r.tolerance,
                r.coords, r.excluded, r.pass ? "PASS" : "FAIL");
    if (!r.pass) failed.push_back(r.op);
  }
  if (failed.empty()) return kExitOk;
  std::string names;
  for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
  std::fprintf(stderr, "gradcheck failed: %s\n", names.c_str());
  return kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pyramid-pooling U-Net for drusen segmentation in OCT B-scans"};
  app.require_subcommand(1);
  int code = kExitOk;

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic OCT dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--patients", sa.patients, "Number of patients");
  synth->add_option("--scans", sa.scans, "Scans per patient");
  synth->add_option("--bscans", sa.bscans, "B-scans per scan");
  synth->add_option("--size", sa.size, "Square B-scan size in pixels");
  synth->add_option("--seed", sa.seed, "Generator seed");
  synth->add_option("--split", sa.split, "train,val,test fractions or patient counts");
  synth->add_flag("--deterministic", "Accepted for symmetry; generation is always deterministic");
  synth->callback([&] { code = run_synth(sa); });

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a segmentation model");
  tr->add_option("--profile", ta.profile, "Preset: desk or full");
  tr->add_option("--config", ta.config, "JSON run configuration");
  tr->add_option("--variant", ta.variant, "unet-2c, unet-3c or unet-ppm");
  tr->add_option("--data", ta.data, "Dataset directory");
  tr->add_option("--out", ta.out, "Checkpoint path");
  tr->add_option("--log", ta.log, "Training log CSV");
  tr->add_option("--epochs", ta.epochs, "Training epochs");
  tr->add_option("--batch-size", ta.batch_size, "Mini-batch size");
  tr->add_option("--lr", ta.lr, "Adam learning rate");
  tr->add_option("--depth", ta.depth, "Resolution levels");
  tr->add_option("--base-channels", ta.base_channels, "Channels at the first level");
  tr->add_option("--size", ta.size, "Square input size");
  tr->add_option("--class-weights", ta.class_weights, "Comma-separated loss weights");
  tr->add_option("--seed", ta.seed, "Run seed");
  tr->add_flag("--deterministic", ta.deterministic, "Bitwise-reproducible run");
  tr->add_flag("--dump-config", ta.dump_config, "Print the resolved configuration and exit");
  tr->callback([&] { code = run_train(ta); });

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint path");
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--split", ea.split, "train, val or test");
  ev->add_option("--variant", ea.variant, "Expected variant");
  ev->add_option("--out", ea.out, "Metrics CSV path");
  ev->add_flag("--oracle", ea.oracle, "Score ground-truth masks as predictions");
  ev->add_flag("--no-topology-filter", ea.no_topology, "Keep drusen pixels outside OBRPE..BM");
  ev->add_flag("--deterministic", ea.deterministic, "Accepted; evaluation is always deterministic");
  ev->add_option("--seed", ea.seed, "Unused; accepted for uniform invocation");
  ev->callback([&] { code = run_eval(ea); });

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Segment one B-scan");
  pr->add_option("--checkpoint", pa.checkpoint, "Checkpoint path")->required();
  pr->add_option("--input", pa.input, "NT4 B-scan")->required();
  pr->add_option("--out", pa.out, "Output prefix");
  pr->add_option("--variant", pa.variant, "Expected variant");
  pr->add_flag("--resize", pa.resize, "Resample inputs of a different size");
  pr->add_flag("--deterministic", pa.deterministic, "Accepted; prediction is always deterministic");
  pr->add_option("--seed", pa.seed, "Unused; accepted for uniform invocation");
  pr->callback([&] { code = run_predict(pa); });

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--op", ga.op, "Run only ops whose name starts with this");
  gc->add_option("--seed", ga.seed, "Case seed");
  gc->add_option("--inject-sign-error", ga.inject, "Negate the analytic gradient of one op");
  gc->add_flag("--deterministic", "Accepted; checks are always deterministic");
  gc->callback([&] { code = run_gradcheck_cmd(ga); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  } catch (const ppmunet::RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const ppmunet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return code;
}
