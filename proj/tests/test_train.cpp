#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "bhygnn/checkpoint.hpp"
#include "bhygnn/train.hpp"

using namespace bhygnn;

namespace {

// Small labelled synthetic instance for smoke runs.
Hypergraph tiny_synthetic(std::uint64_t seed = 2, double sigma = 0.4) {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.nodes_per_class = 30;
  spec.edges_per_class = 12;
  spec.edge_size = 5;
  spec.majority_count = 3;
  spec.feature_dim = 12;
  spec.noise_std = sigma;
  spec.seed = seed;
  return generate_chsbm(spec);
}

TrainConfig tiny_config(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.layers = 2;
  cfg.latent = 4;
  cfg.proj_dim = 8;
  cfg.epochs = 15;
  cfg.eval_every = 5;
  cfg.probe.epochs = 40;
  cfg.probe.hidden = 16;
  cfg.split_train = 0.3;
  cfg.split_val = 0.2;
  cfg.split_test = 0.5;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("six-node toy supervised run decreases the cross-entropy") {
  Hypergraph h;
  h.num_nodes = 6;
  h.edges = {{0, 1, 2}, {3, 4, 5}, {2, 3}};
  h.node_features = Tensor::from_rows({{1.0, 0.1}, {0.9, 0.0}, {1.1, -0.1},
                                       {0.0, 1.0}, {0.1, 0.9}, {-0.1, 1.1}});
  h.labels = std::vector<std::int64_t>{0, 0, 0, 1, 1, 1};

  TrainConfig cfg = tiny_config(TrainMode::Supervised);
  cfg.alpha = 0.0;  // plain attention encoder + cross-entropy
  cfg.epochs = 50;
  cfg.split_train = 0.5;
  cfg.split_val = 0.2;
  cfg.split_test = 0.3;
  auto out = train_supervised(h, cfg);
  REQUIRE(out.trace.size() == 50);
  REQUIRE(out.trace.front().task > out.trace.back().task);
  REQUIRE(out.trace.back().total == Catch::Approx(out.trace.back().task));  // alpha = 0
}

TEST_CASE("supervised training is reproducible and beats chance on the tiny synthetic") {
  Hypergraph h = tiny_synthetic();
  TrainConfig cfg = tiny_config(TrainMode::Supervised);
  cfg.epochs = 60;
  auto a = train_supervised(h, cfg);
  auto b = train_supervised(h, cfg);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    REQUIRE(a.trace[i].total == b.trace[i].total);
    REQUIRE(a.trace[i].val_acc == b.trace[i].val_acc);
  }
  a.model.store->restore_values(a.best_values);
  const auto acc = evaluate_supervised(a.model, h, splits_for(cfg, h.num_nodes));
  REQUIRE(acc.test_acc > 0.5);  // two balanced classes
}

TEST_CASE("trace totals recombine from their parts") {
  Hypergraph h = tiny_synthetic(3);
  TrainConfig cfg = tiny_config(TrainMode::Supervised);
  cfg.epochs = 5;
  cfg.alpha = 0.25;
  auto out = train_supervised(h, cfg);
  for (const auto& row : out.trace)
    REQUIRE(std::abs(row.total - (row.task + cfg.alpha * (row.vlb_sum + row.reg_sum))) <= 1e-9);
}

TEST_CASE("embed is deterministic, shaped, and moves with training") {
  Hypergraph h = tiny_synthetic(4);
  TrainConfig cfg = tiny_config(TrainMode::Ssl);
  cfg.epochs = 2;
  auto out = train_ssl(h, cfg, /*probe_checkpoints=*/false);

  const Tensor e1 = embed(out.model, h);
  const Tensor e2 = embed(out.model, h);
  REQUIRE(e1 == e2);
  REQUIRE(e1.rows() == h.num_nodes);
  REQUIRE(e1.cols() == cfg.hidden);

  // one more epoch moves the parameters, and the embeddings with them
  TrainConfig cfg2 = cfg;
  cfg2.epochs = 3;
  auto out2 = train_ssl(h, cfg2, false);
  const Tensor e3 = embed(out2.model, h);
  REQUIRE(max_abs_diff(e1, e3) > 0.0);
}

TEST_CASE("probe") {
  SECTION("linearly separable clusters reach test accuracy 1.0") {
    const std::int64_t n = 60;
    Tensor emb(n, 4);
    std::vector<std::int64_t> y(static_cast<std::size_t>(n));
    RngStream rng(7);
    for (std::int64_t v = 0; v < n; ++v) {
      const bool cls = v % 2 == 0;
      y[static_cast<std::size_t>(v)] = cls ? 1 : 0;
      emb(v, 0) = (cls ? 3.0 : -3.0) + 0.1 * rng.normal();
      emb(v, 1) = rng.normal();
    }
    auto splits = make_splits(n, 0.4, 0.2, 0.4, 5);
    ProbeConfig pc;
    pc.epochs = 150;
    pc.hidden = 8;
    auto r = probe(emb, y, splits, pc);
    REQUIRE(r.test_acc == 1.0);
  }

  SECTION("label-shuffled embeddings score near chance") {
    const std::int64_t n = 400;
    Tensor emb(n, 6);
    std::vector<std::int64_t> y(static_cast<std::size_t>(n));
    RngStream rng(8);
    for (std::int64_t v = 0; v < n; ++v) {
      y[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(rng.below(4));
      for (std::int64_t c = 0; c < 6; ++c) emb(v, c) = rng.normal();
    }
    auto splits = make_splits(n, 0.5, 0.2, 0.3, 6);
    ProbeConfig pc;
    pc.epochs = 60;
    auto r = probe(emb, y, splits, pc);
    REQUIRE(r.test_acc >= 0.0);
    REQUIRE(r.test_acc <= 1.0);
    REQUIRE(std::abs(r.test_acc - 0.25) <= 0.12);
  }

  SECTION("empty split is rejected") {
    Tensor emb(4, 2);
    std::vector<std::int64_t> y{0, 1, 0, 1};
    SplitAssignment s;
    s.train = {0, 1};
    s.val = {};
    s.test = {2, 3};
    REQUIRE_THROWS_AS(probe(emb, y, s, ProbeConfig{}), DataError);
  }
}

TEST_CASE("ssl smoke: finite trace, probe rows at the eval cadence") {
  Hypergraph h = tiny_synthetic(5);
  TrainConfig cfg = tiny_config(TrainMode::Ssl);
  cfg.epochs = 10;
  cfg.eval_every = 5;
  auto out = train_ssl(h, cfg, true);
  REQUIRE(out.trace.size() == 10);
  for (const auto& row : out.trace) {
    REQUIRE(std::isfinite(row.total));
    REQUIRE(row.task >= -1.0);
    REQUIRE(row.task <= 1.0);  // mean cosine in [-1,1]
    REQUIRE(std::abs(row.total - (row.task + cfg.alpha * (row.vlb_sum + row.reg_sum))) <= 1e-9);
  }
  REQUIRE(out.trace[4].val_acc.has_value());
  REQUIRE_FALSE(out.trace[3].val_acc.has_value());
  REQUIRE(out.best_epoch > 0);
}

TEST_CASE("ssl training never reads labels") {
  Hypergraph h = tiny_synthetic(6);
  TrainConfig cfg = tiny_config(TrainMode::Ssl);
  cfg.epochs = 6;

  Hypergraph stripped = h;
  stripped.labels.reset();

  auto with_labels = train_ssl(h, cfg, true);
  auto without = train_ssl(stripped, cfg, true);
  const auto va = with_labels.model.store->snapshot_values();
  const auto vb = without.model.store->snapshot_values();
  REQUIRE(va.size() == vb.size());
  for (const auto& [name, val] : va) {
    auto it = vb.find(name);
    REQUIRE(it != vb.end());
    REQUIRE(val == it->second);  // bitwise
  }
}

TEST_CASE("ssl trajectory is independent of the worker thread count") {
  Hypergraph h = tiny_synthetic(9);
  TrainConfig cfg = tiny_config(TrainMode::Ssl);
  cfg.epochs = 4;
  setenv("BHYGNN_THREADS", "1", 1);
  auto a = train_ssl(h, cfg, false);
  setenv("BHYGNN_THREADS", "4", 1);
  auto b = train_ssl(h, cfg, false);
  setenv("BHYGNN_THREADS", "2", 1);
  const auto va = a.model.store->snapshot_values();
  const auto vb = b.model.store->snapshot_values();
  for (const auto& [name, val] : va) REQUIRE(val == vb.at(name));
}

TEST_CASE("probe training leaves the encoder untouched") {
  Hypergraph h = tiny_synthetic(7);
  TrainConfig cfg = tiny_config(TrainMode::Ssl);
  cfg.epochs = 2;
  auto out = train_ssl(h, cfg, false);
  const auto before = out.model.store->snapshot_values();
  const Tensor emb = embed(out.model, h);
  (void)probe(emb, *h.labels, splits_for(cfg, h.num_nodes), cfg.probe);
  const auto after = out.model.store->snapshot_values();
  for (const auto& [name, val] : before) REQUIRE(val == after.at(name));
}

TEST_CASE("checkpoint round trip preserves embeddings bit-exactly") {
  Hypergraph h = tiny_synthetic(8);
  TrainConfig cfg = tiny_config(TrainMode::Ssl);
  cfg.epochs = 2;
  auto out = train_ssl(h, cfg, false);
  const Tensor before = embed(out.model, h);

  auto path = std::filesystem::temp_directory_path() / "bhygnn_train_ckpt.bhg";
  save_checkpoint(*out.model.store, path.string());

  const std::int64_t d_edge = h.node_features.cols();
  Model fresh = build_model(cfg, h.node_features.cols(), d_edge, 0);
  load_checkpoint(*fresh.store, path.string());
  const Tensor after = embed(fresh, h);
  REQUIRE(before == after);
}

TEST_CASE("divergence aborts with the offending epoch") {
  Hypergraph h = tiny_synthetic(10);
  TrainConfig cfg = tiny_config(TrainMode::Supervised);
  cfg.lr = 1e18;  // blows up immediately
  cfg.epochs = 10;
  REQUIRE_THROWS_AS(train_supervised(h, cfg), NumericError);
}
