// Command-line entry point: synthetic data generation, dataset statistics,
// training, embedding export, frozen-encoder probing, and multi-seed
// experiments. Every command resolves its configuration (file + --set
// overrides + --seed/--out flags), echoes it into the run directory, and is
// deterministic given (config, seed).

#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "bhygnn/checkpoint.hpp"
#include "bhygnn/config.hpp"
#include "bhygnn/dataset_io.hpp"
#include "bhygnn/train.hpp"

namespace fs = std::filesystem;
using namespace bhygnn;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;  // -1 = not given
  std::vector<std::string> sets;
};

Config resolve_config(const CommonArgs& args) {
  Config c;
  if (!args.config_path.empty()) c = Config::from_file(args.config_path);
  for (const auto& kv : args.sets) c.set_kv(kv);
  if (args.seed >= 0) c.set("seed", std::to_string(args.seed));
  return c;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Default: a fresh directory named by timestamp+seed under ./out. An explicit
// --out is used as the run directory itself.
fs::path make_run_dir(const CommonArgs& args, std::uint64_t seed) {
  fs::path dir = args.out_dir.empty()
                     ? fs::path("out") / ("run-" + timestamp() + "-seed" + std::to_string(seed))
                     : fs::path(args.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
}

Hypergraph load_data(const Config& c) {
  std::string path = c.require_str("data");
  if (fs::is_directory(path)) path = (fs::path(path) / "manifest.txt").string();
  return load_dataset(path);
}

void write_trace(const fs::path& p, const std::vector<MetricsRow>& trace) {
  std::ofstream f(p);
  f << trace_header() << "\n";
  for (const auto& r : trace) f << format_trace_row(r) << "\n";
}

int cmd_generate(const CommonArgs& args) {
  Config c = resolve_config(args);
  c.reject_unknown(generate_config_keys());
  const SyntheticSpec spec = parse_synthetic_spec(c);
  const fs::path dir = make_run_dir(args, spec.seed);
  const Hypergraph h = generate_chsbm(spec);
  save_dataset(h, dir.string());
  std::ostringstream prov;
  prov << "generator=chsbm\nclasses=" << spec.num_classes
       << "\nnodes_per_class=" << spec.nodes_per_class
       << "\nedges_per_class=" << spec.edges_per_class << "\nedge_size=" << spec.edge_size
       << "\nmajority_count=" << spec.majority_count << "\nfeature_dim=" << spec.feature_dim
       << "\nsigma=" << spec.noise_std << "\nseed=" << spec.seed << "\n";
  write_text(dir / "provenance.txt", prov.str());
  write_text(dir / "resolved_config.txt", c.render());
  std::printf("wrote dataset: %s (N=%lld, M=%lld)\n", dir.string().c_str(),
              static_cast<long long>(h.num_nodes), static_cast<long long>(h.num_edges()));
  return 0;
}

void print_histogram(const char* name, const std::vector<double>& vals) {
  std::array<std::int64_t, 10> bins{};
  for (double v : vals) {
    auto b = static_cast<std::size_t>(std::min(9.0, std::max(0.0, v * 10.0)));
    bins[b]++;
  }
  std::printf("%s histogram (bins of 0.1):\n", name);
  for (std::size_t b = 0; b < bins.size(); ++b)
    std::printf("  [%.1f,%.1f%s %lld\n", 0.1 * static_cast<double>(b),
                0.1 * static_cast<double>(b + 1), b == 9 ? "]" : ")",
                static_cast<long long>(bins[b]));
}

int cmd_stats(const CommonArgs& args) {
  Config c = resolve_config(args);
  c.reject_unknown({"data"});
  const Hypergraph h = load_data(c);
  const auto rep = homophily(h);
  auto [dv, de] = degrees(h);
  std::printf("nodes=%lld edges=%lld incidences=%lld\n", static_cast<long long>(h.num_nodes),
              static_cast<long long>(h.num_edges()),
              static_cast<long long>(incidence_pairs(h).size()));
  std::printf("mean h(v) = %.4f\n", rep.mean_node);
  std::printf("mean h(e) = %.4f\n", rep.mean_edge);
  print_histogram("h(v)", rep.per_node);
  print_histogram("h(e)", rep.per_edge);
  return 0;
}

struct SeedRunResult {
  std::uint64_t seed = 0;
  ProbeResult acc;
  bool failed = false;
  std::string error;
};

SeedRunResult run_one_seed(const Hypergraph& h, TrainConfig cfg, const fs::path& dir) {
  SeedRunResult r;
  r.seed = cfg.seed;
  try {
    const auto splits = splits_for(cfg, h.num_nodes);
    if (cfg.mode == TrainMode::Supervised) {
      TrainOutcome out = train_supervised(h, cfg);
      write_trace(dir / "trace.csv", out.trace);
      save_checkpoint(*out.model.store, (dir / "model_final.bhg").string());
      out.model.store->restore_values(out.best_values);
      save_checkpoint(*out.model.store, (dir / "model_best.bhg").string());
      r.acc = evaluate_supervised(out.model, h, splits);
    } else {
      TrainOutcome out = train_ssl(h, cfg, h.labels.has_value());
      write_trace(dir / "trace.csv", out.trace);
      save_checkpoint(*out.model.store, (dir / "encoder_final.bhg").string());
      out.model.store->restore_values(out.best_values);
      save_checkpoint(*out.model.store, (dir / "encoder_best.bhg").string());
      if (h.labels) {
        const Tensor emb = embed(out.model, h);
        r.acc = probe(emb, *h.labels, splits, cfg.probe);
      }
    }
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  return r;
}

int cmd_train(const CommonArgs& args) {
  Config c = resolve_config(args);
  c.reject_unknown(train_config_keys());
  const TrainConfig cfg = parse_train_config(c);
  const Hypergraph h = load_data(c);
  const fs::path dir = make_run_dir(args, cfg.seed);
  write_text(dir / "resolved_config.txt", c.render());
  SeedRunResult r = run_one_seed(h, cfg, dir);
  if (r.failed) throw NumericError(r.error);
  std::printf("train acc=%.4f val acc=%.4f test acc=%.4f\n", r.acc.train_acc, r.acc.val_acc,
              r.acc.test_acc);
  std::printf("run dir: %s\n", dir.string().c_str());
  return 0;
}

int cmd_embed(const CommonArgs& args, const std::string& ckpt) {
  Config c = resolve_config(args);
  c.reject_unknown(train_config_keys());
  const TrainConfig cfg = parse_train_config(c);
  const Hypergraph h = load_data(c);
  const std::int64_t d_edge =
      h.edge_features ? h.edge_features->cols() : h.node_features.cols();
  Model m = build_model(cfg, h.node_features.cols(), d_edge,
                        cfg.mode == TrainMode::Supervised ? std::max<std::int64_t>(h.num_classes(), 2)
                                                          : 0);
  load_checkpoint(*m.store, ckpt);
  const Tensor emb = embed(m, h);
  const fs::path dir = make_run_dir(args, cfg.seed);
  save_feature_file((dir / "embeddings.txt").string(), emb);
  std::printf("wrote %s (%lld x %lld)\n", (dir / "embeddings.txt").string().c_str(),
              static_cast<long long>(emb.rows()), static_cast<long long>(emb.cols()));
  return 0;
}

int cmd_probe(const CommonArgs& args, const std::string& embeddings_path) {
  Config c = resolve_config(args);
  c.reject_unknown(train_config_keys());
  const TrainConfig cfg = parse_train_config(c);
  const Hypergraph h = load_data(c);
  if (!h.labels) throw DataError("probe requires labels");
  const Tensor emb = load_feature_file(embeddings_path);
  const auto splits = splits_for(cfg, h.num_nodes);
  const ProbeResult r = probe(emb, *h.labels, splits, cfg.probe);
  std::printf("train acc=%.4f val acc=%.4f test acc=%.4f\n", r.train_acc, r.val_acc, r.test_acc);
  return 0;
}

int cmd_run_experiment(const CommonArgs& args) {
  Config c = resolve_config(args);
  c.reject_unknown(train_config_keys());
  const TrainConfig base_cfg = parse_train_config(c);
  const std::int64_t num_seeds = c.get_int("num_seeds", 5);
  if (num_seeds < 1) throw UsageError("num_seeds must be >= 1");
  const Hypergraph h = load_data(c);
  const fs::path dir = make_run_dir(args, base_cfg.seed);
  write_text(dir / "resolved_config.txt", c.render());

  std::vector<SeedRunResult> results;
  for (std::int64_t i = 0; i < num_seeds; ++i) {
    TrainConfig cfg = base_cfg;
    cfg.seed = base_cfg.seed + static_cast<std::uint64_t>(i);
    const fs::path seed_dir = dir / ("seed" + std::to_string(cfg.seed));
    fs::create_directories(seed_dir);
    results.push_back(run_one_seed(h, cfg, seed_dir));
    const auto& r = results.back();
    if (r.failed)
      std::printf("seed %llu: FAILED: %s\n", static_cast<unsigned long long>(r.seed),
                  r.error.c_str());
    else
      std::printf("seed %llu: train=%.4f val=%.4f test=%.4f\n",
                  static_cast<unsigned long long>(r.seed), r.acc.train_acc, r.acc.val_acc,
                  r.acc.test_acc);
  }

  auto mean_std = [&](auto getter) {
    std::vector<double> xs;
    for (const auto& r : results)
      if (!r.failed) xs.push_back(getter(r));
    if (xs.empty()) return std::pair<double, double>{0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return std::pair<double, double>{mean, std::sqrt(var)};
  };
  const auto [tr_m, tr_s] = mean_std([](const SeedRunResult& r) { return r.acc.train_acc; });
  const auto [va_m, va_s] = mean_std([](const SeedRunResult& r) { return r.acc.val_acc; });
  const auto [te_m, te_s] = mean_std([](const SeedRunResult& r) { return r.acc.test_acc; });

  std::ostringstream rep;
  rep << "seeds=" << num_seeds << "\n";
  std::int64_t failed = 0;
  for (const auto& r : results) {
    rep << "seed " << r.seed << ": ";
    if (r.failed) {
      rep << "FAILED: " << r.error << "\n";
      ++failed;
    } else {
      rep << "train=" << r.acc.train_acc << " val=" << r.acc.val_acc
          << " test=" << r.acc.test_acc << "\n";
    }
  }
  char line[256];
  std::snprintf(line, sizeof line, "train: %.4f +- %.4f\nval: %.4f +- %.4f\ntest: %.4f +- %.4f\n",
                tr_m, tr_s, va_m, va_s, te_m, te_s);
  rep << line;
  write_text(dir / "report.txt", rep.str());
  std::printf("%s", rep.str().c_str());
  std::printf("report: %s\n", (dir / "report.txt").string().c_str());
  return failed > 0 ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BHyGNN / BHyGNN+ hypergraph representation learning"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string ckpt, embeddings_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--out", args.out_dir, "output directory (default: out/run-<time>-seed<k>)");
    cmd->add_option("--set", args.sets, "config override key=value (repeatable)");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic heterophilic dataset");
  add_common(gen);
  auto* stats = app.add_subcommand("stats", "print homophily statistics for a dataset");
  add_common(stats);
  auto* train = app.add_subcommand("train", "train a model (mode=supervised|ssl)");
  add_common(train);
  auto* emb = app.add_subcommand("embed", "export deterministic node embeddings");
  add_common(emb);
  emb->add_option("--ckpt", ckpt, "checkpoint file (BHG1)")->required();
  auto* prb = app.add_subcommand("probe", "train a frozen-encoder probe on embeddings");
  add_common(prb);
  prb->add_option("--embeddings", embeddings_path, "embeddings feature file")->required();
  auto* exp = app.add_subcommand("run-experiment", "train+probe over several seeds");
  add_common(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(args);
    if (stats->parsed()) return cmd_stats(args);
    if (train->parsed()) return cmd_train(args);
    if (emb->parsed()) return cmd_embed(args, ckpt);
    if (prb->parsed()) return cmd_probe(args, embeddings_path);
    if (exp->parsed()) return cmd_run_experiment(args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
