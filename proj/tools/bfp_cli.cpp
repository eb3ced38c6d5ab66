// Command-line front end: gen-labels | bench | influence | train-toy | eval
// | gradcheck. Every command prints its resolved configuration so any result
// can be reproduced from the log alone.
//
// Exit codes: 0 success, 1 usage error, 2 verification failure, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bfp/bench.hpp"
#include "bfp/gradcheck.hpp"
#include "bfp/influence.hpp"
#include "bfp/model_io.hpp"
#include "bfp/pgm.hpp"
#include "bfp/train.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitVerify = 2, kExitIo = 3;

struct GenLabelsOpts {
  std::string in, out;
  double radius = 9.0;
  int ignore = 255;
};

int cmd_gen_labels(const GenLabelsOpts& o) {
  std::printf("gen-labels: in=%s out=%s radius=%g ignore=%d\n", o.in.c_str(),
              o.out.c_str(), o.radius, o.ignore);
  try {
    bfp::LabelMap labels = bfp::read_pgm(o.in, 0, o.ignore);
    int maxv = -1;
    for (int v : labels.values)
      if (v != o.ignore) maxv = std::max(maxv, v);
    labels.num_classes = maxv + 1;
    auto out = bfp::generate_boundary_labels(labels, o.radius);
    bfp::write_pgm(o.out, out);
    std::size_t boundary = 0, valid = 0;
    for (int v : out.values) {
      if (v == o.ignore) continue;
      ++valid;
      boundary += v == labels.num_classes;
    }
    std::printf("boundary fraction: %.6f (%zu of %zu pixels)\n",
                valid ? double(boundary) / double(valid) : 0.0, boundary,
                valid);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}

struct BenchOpts {
  std::vector<std::string> sizes = {"60x45", "120x90"};
  std::size_t channels = 32;
  unsigned threads = 1;
  std::string out;
  std::uint64_t seed = 42;
};

int cmd_bench(const BenchOpts& o) {
  std::printf("bench: channels=%zu threads=%u seed=%llu sizes=", o.channels,
              o.threads, static_cast<unsigned long long>(o.seed));
  for (const auto& s : o.sizes) std::printf("%s ", s.c_str());
  std::printf("\n");
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (const auto& s : o.sizes) {
    const auto x = s.find('x');
    if (x == std::string::npos) {
      std::fprintf(stderr, "error: size must look like 60x45, got %s\n",
                   s.c_str());
      return kExitUsage;
    }
    // WxH on the command line, height-first internally
    const std::size_t w = std::stoul(s.substr(0, x));
    const std::size_t h = std::stoul(s.substr(x + 1));
    sizes.emplace_back(h, w);
  }
  auto rows = bfp::run_bench(sizes, o.channels, o.threads, 80, o.seed);
  if (o.out.empty()) {
    bfp::write_bench_csv(std::cout, rows);
  } else {
    std::ofstream os(o.out);
    if (!os) {
      std::fprintf(stderr, "error: cannot write %s\n", o.out.c_str());
      return kExitIo;
    }
    bfp::write_bench_csv(os, rows);
    std::printf("wrote %s\n", o.out.c_str());
  }
  return kExitOk;
}

struct InfluenceOpts {
  std::string size = "8x8";
  std::string probe = "";
  std::string variant = "both";
  std::string gate = "open";
  std::uint64_t seed = 11;
};

int cmd_influence(const InfluenceOpts& o) {
  const auto x = o.size.find('x');
  if (x == std::string::npos) return kExitUsage;
  const std::size_t h = std::stoul(o.size.substr(0, x));
  const std::size_t w = std::stoul(o.size.substr(x + 1));
  std::printf("influence: size=%zux%zu variant=%s gate=%s seed=%llu\n", h, w,
              o.variant.c_str(), o.gate.c_str(),
              static_cast<unsigned long long>(o.seed));

  std::mt19937 g(static_cast<unsigned>(o.seed));
  std::uniform_real_distribution<double> uw(0.05, 0.25), ui(0.1, 0.5);
  const std::size_t c = 3;
  auto first = bfp::make_scan_params<double>(c, c, 1, false);
  auto second = bfp::make_scan_params<double>(c, c, 1, true);
  auto dp = bfp::make_dag_params<double>(c, c);
  for (auto* t : {&first.U, &first.W, &second.U, &second.W, &second.What,
                  &dp.U, &dp.Wv, &dp.Wh, &dp.Wd})
    for (auto& v : t->values()) v = uw(g);
  for (auto* t : {&first.delta, &second.delta, &dp.delta})
    for (auto& v : t->values()) v = 10.0;  // linear regime
  bfp::Tensor<double> base({c, h, w});
  for (auto& v : base.values()) v = ui(g);

  const bool closed = o.gate == "closed";
  bfp::Tensor<double> pz({h, w}, 0.0);
  auto uag = [&](const bfp::Tensor<double>& in) {
    auto s = bfp::uag_scan(in, first, bfp::ScanDirection::S,
                           closed ? &pz : nullptr);
    return bfp::uag_scan_second(s.h, second, bfp::ScanDirection::SE,
                                closed ? &pz : nullptr)
        .h;
  };
  auto dag = [&](const bfp::Tensor<double>& in) {
    return bfp::dag_scan(in, dp, bfp::DagDirection::SE).h;
  };

  auto print_mask = [&](const bfp::Mask& m) {
    for (std::size_t r = 0; r < h; ++r) {
      std::printf("  ");
      for (std::size_t cc = 0; cc < w; ++cc)
        std::printf("%c", m.at(r, cc) ? '1' : '.');
      std::printf("\n");
    }
  };

  std::size_t pr = h - 1, pc = w - 1;
  if (!o.probe.empty()) {
    const auto comma = o.probe.find(',');
    if (comma == std::string::npos) return kExitUsage;
    pr = std::stoul(o.probe.substr(0, comma));
    pc = std::stoul(o.probe.substr(comma + 1));
    if (pr >= h || pc >= w) {
      std::fprintf(stderr, "error: probe (%zu,%zu) out of range\n", pr, pc);
      return kExitUsage;
    }
  }

  if (o.variant == "uag" || o.variant == "dag") {
    bfp::InfluenceTable<double>::ScanFn fn = uag;
    if (o.variant == "dag") fn = dag;
    auto m = bfp::influence_mask<double>(fn, base, pr, pc);
    std::printf("%s mask at probe (%zu,%zu):\n", o.variant.c_str(), pr, pc);
    print_mask(m);
    return kExitOk;
  }
  if (o.variant != "both") {
    std::fprintf(stderr, "error: --variant must be uag|dag|both\n");
    return kExitUsage;
  }
  bfp::InfluenceTable<double> tu(uag, base, 1e-3, 1e-9);
  bfp::InfluenceTable<double> td(dag, base, 1e-3, 1e-9);
  std::printf("uag mask at probe (%zu,%zu):\n", pr, pc);
  print_mask(tu.mask_for(pr, pc));
  std::printf("dag mask at probe (%zu,%zu):\n", pr, pc);
  print_mask(td.mask_for(pr, pc));
  const bool equal = tu == td;
  std::printf("%s (all %zu probes compared)\n", equal ? "EQUAL" : "DIFFER",
              h * w);
  return equal ? kExitOk : kExitVerify;
}

json config_to_json(const bfp::TrainConfig& cfg) {
  json j;
  j["steps"] = cfg.steps;
  j["base_lr"] = cfg.base_lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["dataset_count"] = cfg.dataset_count;
  j["image_size"] = cfg.image_size;
  j["dataset_seed"] = cfg.dataset_seed;
  j["augment"] = cfg.augment;
  j["threads"] = cfg.threads;
  j["trimap_bands"] = cfg.trimap_bands;
  j["smooth_window"] = cfg.smooth_window;
  j["model"]["channels"] = cfg.model.channels;
  j["model"]["dilations"] = cfg.model.dilations;
  j["model"]["num_classes"] = cfg.model.num_classes;
  j["model"]["boundary_radius"] = cfg.model.boundary_radius;
  j["model"]["alpha"] = cfg.model.alpha;
  j["model"]["gamma"] = cfg.model.gamma;
  j["model"]["beta_init"] = cfg.model.beta_init;
  j["model"]["lambda"] = cfg.model.lambda;
  j["model"]["scan_k"] = cfg.model.scan_k;
  j["model"]["seed"] = cfg.model.seed;
  j["model"]["gated"] = cfg.model.gated;
  j["model"]["beta_frozen"] = cfg.model.beta_frozen;
  j["model"]["gate_first_stage"] = cfg.model.gate_first_stage;
  return j;
}

void config_from_json(const json& j, bfp::TrainConfig& cfg) {
  auto get = [&](const json& o, const char* k, auto& into) {
    if (o.contains(k)) into = o[k].get<std::decay_t<decltype(into)>>();
  };
  get(j, "steps", cfg.steps);
  get(j, "base_lr", cfg.base_lr);
  get(j, "momentum", cfg.momentum);
  get(j, "weight_decay", cfg.weight_decay);
  get(j, "dataset_count", cfg.dataset_count);
  get(j, "image_size", cfg.image_size);
  get(j, "dataset_seed", cfg.dataset_seed);
  get(j, "augment", cfg.augment);
  get(j, "threads", cfg.threads);
  get(j, "trimap_bands", cfg.trimap_bands);
  get(j, "smooth_window", cfg.smooth_window);
  if (j.contains("model")) {
    const json& m = j["model"];
    get(m, "channels", cfg.model.channels);
    get(m, "dilations", cfg.model.dilations);
    get(m, "num_classes", cfg.model.num_classes);
    get(m, "boundary_radius", cfg.model.boundary_radius);
    get(m, "alpha", cfg.model.alpha);
    get(m, "gamma", cfg.model.gamma);
    get(m, "beta_init", cfg.model.beta_init);
    get(m, "lambda", cfg.model.lambda);
    get(m, "scan_k", cfg.model.scan_k);
    get(m, "seed", cfg.model.seed);
    get(m, "gated", cfg.model.gated);
    get(m, "beta_frozen", cfg.model.beta_frozen);
    get(m, "gate_first_stage", cfg.model.gate_first_stage);
  }
}

// Evaluation-only fields of a MetricsReport, used by both train-toy (to pin)
// and eval (to compare).
json eval_metrics_json(const bfp::MetricsReport& r) {
  json full = bfp::to_json(r);
  json j;
  for (const char* k :
       {"miou", "boundary_iou", "per_class_iou", "trimap_bands",
        "trimap_miou", "boundary_conf_on_boundary",
        "boundary_conf_off_boundary", "final_beta"})
    j[k] = full[k];
  return j;
}

struct TrainOpts {
  std::string config, out;
  std::uint64_t seed = 0;  // 0: keep the config's seed
  long steps = -1;         // -1: keep the config's steps
};

int cmd_train_toy(const TrainOpts& o) {
  bfp::TrainConfig cfg;
  if (!o.config.empty()) {
    std::ifstream is(o.config);
    if (!is) {
      std::fprintf(stderr, "error: cannot read %s\n", o.config.c_str());
      return kExitIo;
    }
    try {
      config_from_json(json::parse(is), cfg);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: bad config: %s\n", e.what());
      return kExitUsage;
    }
  }
  if (o.seed) cfg.model.seed = o.seed;
  if (o.steps >= 0) cfg.steps = static_cast<std::size_t>(o.steps);
  std::printf("train-toy resolved config:\n%s\n",
              config_to_json(cfg).dump(2).c_str());
  try {
    std::filesystem::create_directories(o.out);
    auto scenes = bfp::synth_dataset<float>(
        cfg.dataset_seed, cfg.dataset_count, cfg.image_size,
        cfg.model.num_classes);
    auto model = bfp::build_model<float>(cfg.model);
    auto rep = bfp::train(model, scenes, cfg);
    std::ofstream(o.out + "/config.json") << config_to_json(cfg).dump(2)
                                          << "\n";
    std::ofstream(o.out + "/metrics.json") << eval_metrics_json(rep).dump(2)
                                           << "\n";
    {
      std::ofstream csv(o.out + "/loss.csv");
      csv << "step,total_loss\n";
      for (std::size_t i = 0; i < rep.loss_curve.size(); ++i)
        csv << i << "," << rep.loss_curve[i] << "\n";
    }
    bfp::save_model(o.out + "/model.bfpt", model);
    std::printf("train-toy: loss %.4f -> %.4f, wrote %s\n",
                rep.initial_loss_smoothed, rep.final_loss_smoothed,
                o.out.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}

struct EvalOpts {
  std::string model_dir;
  unsigned threads = 1;
};

int cmd_eval(const EvalOpts& o) {
  bfp::TrainConfig cfg;
  std::ifstream is(o.model_dir + "/config.json");
  if (!is) {
    std::fprintf(stderr, "error: cannot read %s/config.json\n",
                 o.model_dir.c_str());
    return kExitIo;
  }
  try {
    config_from_json(json::parse(is), cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: bad config: %s\n", e.what());
    return kExitIo;
  }
  std::printf("eval resolved config:\n%s\n",
              config_to_json(cfg).dump(2).c_str());
  try {
    auto model =
        bfp::load_model<float>(o.model_dir + "/model.bfpt", cfg.model);
    auto scenes = bfp::synth_dataset<float>(
        cfg.dataset_seed, cfg.dataset_count, cfg.image_size,
        cfg.model.num_classes);
    bfp::MetricsReport rep;
    bfp::evaluate_into(model, scenes, cfg, rep, o.threads);
    json got = eval_metrics_json(rep);
    std::printf("%s\n", got.dump(2).c_str());
    std::ifstream pin(o.model_dir + "/metrics.json");
    if (pin) {
      json want = json::parse(pin);
      if (got != want) {
        std::fprintf(stderr,
                     "DIFFER: evaluation does not reproduce the pinned "
                     "metrics\n");
        return kExitVerify;
      }
      std::printf("EQUAL: evaluation reproduces the pinned metrics\n");
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}

int cmd_gradcheck(int seeds) {
  std::printf("gradcheck: %d seeds per operation\n", seeds);
  auto entries = bfp::run_gradcheck_suite(seeds);
  bool all = true;
  std::printf("%-28s %-12s %-10s %s\n", "operation", "max_rel_err", "tol",
              "status");
  for (const auto& e : entries) {
    std::printf("%-28s %-12.3e %-10.0e %s\n", e.name.c_str(), e.max_rel_err,
                e.tol, e.pass ? "ok" : "FAILED");
    all = all && e.pass;
  }
  return all ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boundary-aware feature propagation toolkit"};
  app.require_subcommand(1);

  GenLabelsOpts gl;
  auto* c_gl = app.add_subcommand("gen-labels",
                                  "boundary-augment a PGM label map");
  c_gl->add_option("--in", gl.in, "input PGM label map")->required();
  c_gl->add_option("--out", gl.out, "output PGM path")->required();
  c_gl->add_option("--radius", gl.radius, "boundary radius in pixels");
  c_gl->add_option("--ignore", gl.ignore, "ignore label value");

  BenchOpts bo;
  auto* c_b = app.add_subcommand("bench", "time DAG vs UAG scans");
  c_b->add_option("--sizes", bo.sizes, "feature-map sizes, WxH");
  c_b->add_option("--channels", bo.channels, "channel count");
  c_b->add_option("--threads", bo.threads, "scan-internal threads");
  c_b->add_option("--out", bo.out, "CSV output path (default stdout)");
  c_b->add_option("--seed", bo.seed, "input seed");

  InfluenceOpts io;
  auto* c_i = app.add_subcommand("influence", "dependency-structure probe");
  c_i->add_option("--size", io.size, "grid size HxW");
  c_i->add_option("--probe", io.probe, "probe pixel r,c");
  c_i->add_option("--variant", io.variant, "uag | dag | both");
  c_i->add_option("--gate", io.gate, "open | closed");
  c_i->add_option("--seed", io.seed, "weight seed");

  TrainOpts to;
  auto* c_t = app.add_subcommand("train-toy", "train on the synthetic set");
  c_t->add_option("--config", to.config, "JSON config (defaults applied)");
  c_t->add_option("--out", to.out, "output directory")->required();
  c_t->add_option("--seed", to.seed, "override model seed");
  c_t->add_option("--steps", to.steps, "override step count");

  EvalOpts eo;
  auto* c_e = app.add_subcommand("eval", "evaluate a saved model");
  c_e->add_option("--model", eo.model_dir, "train-toy output directory")
      ->required();
  c_e->add_option("--threads", eo.threads, "scan-internal threads");

  int gc_seeds = 20;
  auto* c_g = app.add_subcommand("gradcheck", "finite-difference gradients");
  c_g->add_flag("--all", "run the full suite (default)");
  c_g->add_option("--seeds", gc_seeds, "seeds per operation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitUsage : kExitOk;
  }

  if (c_gl->parsed()) return cmd_gen_labels(gl);
  if (c_b->parsed()) return cmd_bench(bo);
  if (c_i->parsed()) return cmd_influence(io);
  if (c_t->parsed()) return cmd_train_toy(to);
  if (c_e->parsed()) return cmd_eval(eo);
  if (c_g->parsed()) return cmd_gradcheck(gc_seeds);
  return kExitUsage;
}
