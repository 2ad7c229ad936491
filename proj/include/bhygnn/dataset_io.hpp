#pragma once

// On-disk dataset formats.
//
//   structure file:  line 1 "N M", then M lines of whitespace-separated
//                    0-based node ids (one line per hyperedge)
//   feature file:    line 1 "ROWS COLS", then ROWS lines of COLS reals;
//                    written with 17 significant digits so doubles round-trip
//                    bit-exactly
//   label file:      one integer per line
//   manifest:        flat key=value lines with keys
//                    structure, node_features, edge_features?, labels?, n, m, dv

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bhygnn/errors.hpp"
#include "bhygnn/hypergraph.hpp"

namespace bhygnn {

struct DatasetManifest {
  std::string structure;
  std::string node_features;
  std::string edge_features;  // empty = absent
  std::string labels;         // empty = absent
  std::int64_t n = 0;
  std::int64_t m = 0;
  std::int64_t dv = 0;
};

namespace io_detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open file: " + path);
  return f;
}

inline DataError line_error(const std::string& path, std::int64_t line, const std::string& what) {
  return DataError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace io_detail

inline void save_feature_file(const std::string& path, const Tensor& t) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot write file: " + path);
  std::fprintf(f, "%" PRId64 " %" PRId64 "\n", t.rows(), t.cols());
  for (std::int64_t r = 0; r < t.rows(); ++r) {
    for (std::int64_t c = 0; c < t.cols(); ++c)
      std::fprintf(f, c == 0 ? "%.17g" : " %.17g", t(r, c));
    std::fputc('\n', f);
  }
  std::fclose(f);
}

inline Tensor load_feature_file(const std::string& path) {
  auto f = io_detail::open_in(path);
  std::string line;
  std::int64_t lineno = 0;
  if (!std::getline(f, line)) throw io_detail::line_error(path, 1, "missing header");
  ++lineno;
  std::istringstream hdr(line);
  std::int64_t rows = 0, cols = 0;
  if (!(hdr >> rows >> cols) || rows < 0 || cols <= 0)
    throw io_detail::line_error(path, lineno, "malformed header (expected ROWS COLS)");
  Tensor t(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!std::getline(f, line))
      throw io_detail::line_error(path, lineno + 1, "unexpected end of file");
    ++lineno;
    std::istringstream ls(line);
    for (std::int64_t c = 0; c < cols; ++c)
      if (!(ls >> t(r, c)))
        throw io_detail::line_error(path, lineno, "malformed value in column " + std::to_string(c));
    double extra;
    if (ls >> extra) throw io_detail::line_error(path, lineno, "too many values");
  }
  return t;
}

inline void save_structure_file(const std::string& path, const Hypergraph& h) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write file: " + path);
  f << h.num_nodes << " " << h.num_edges() << "\n";
  for (const auto& e : h.edges) {
    for (std::size_t i = 0; i < e.size(); ++i) f << (i ? " " : "") << e[i];
    f << "\n";
  }
}

inline void load_structure_file(const std::string& path, Hypergraph& h) {
  auto f = io_detail::open_in(path);
  std::string line;
  std::int64_t lineno = 0;
  if (!std::getline(f, line)) throw io_detail::line_error(path, 1, "missing header");
  ++lineno;
  std::istringstream hdr(line);
  std::int64_t n = 0, m = 0;
  if (!(hdr >> n >> m) || n < 0 || m < 0)
    throw io_detail::line_error(path, lineno, "malformed header (expected N M)");
  h.num_nodes = n;
  h.edges.clear();
  for (std::int64_t j = 0; j < m; ++j) {
    if (!std::getline(f, line))
      throw io_detail::line_error(path, lineno + 1, "unexpected end of file");
    ++lineno;
    std::istringstream ls(line);
    std::vector<NodeId> e;
    NodeId v;
    while (ls >> v) {
      if (v < 0 || v >= n)
        throw io_detail::line_error(path, lineno,
                                    "node id " + std::to_string(v) + " out of range [0," +
                                        std::to_string(n) + ")");
      e.push_back(v);
    }
    if (!ls.eof()) throw io_detail::line_error(path, lineno, "malformed node id");
    if (e.empty()) throw io_detail::line_error(path, lineno, "empty hyperedge");
    h.edges.push_back(std::move(e));
  }
}

inline void save_label_file(const std::string& path, const std::vector<std::int64_t>& y) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write file: " + path);
  for (auto v : y) f << v << "\n";
}

inline std::vector<std::int64_t> load_label_file(const std::string& path) {
  auto f = io_detail::open_in(path);
  std::vector<std::int64_t> y;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::int64_t v;
    if (!(ls >> v)) throw io_detail::line_error(path, lineno, "malformed label");
    y.push_back(v);
  }
  return y;
}

inline std::map<std::string, std::string> load_kv_file(const std::string& path) {
  auto f = io_detail::open_in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw io_detail::line_error(path, lineno, "expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline DatasetManifest load_manifest(const std::string& path) {
  auto kv = load_kv_file(path);
  DatasetManifest m;
  auto need = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError(path + ": manifest missing key '" + k + "'");
    return it->second;
  };
  const auto dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (dir / fp).string();
  };
  m.structure = resolve(need("structure"));
  m.node_features = resolve(need("node_features"));
  if (kv.count("edge_features")) m.edge_features = resolve(kv["edge_features"]);
  if (kv.count("labels")) m.labels = resolve(kv["labels"]);
  m.n = std::stoll(need("n"));
  m.m = std::stoll(need("m"));
  m.dv = std::stoll(need("dv"));
  return m;
}

inline Hypergraph load_dataset(const DatasetManifest& m) {
  Hypergraph h;
  load_structure_file(m.structure, h);
  h.node_features = load_feature_file(m.node_features);
  if (!m.edge_features.empty()) h.edge_features = load_feature_file(m.edge_features);
  if (!m.labels.empty()) h.labels = load_label_file(m.labels);
  if (h.num_nodes != m.n)
    throw DataError("manifest declares n=" + std::to_string(m.n) + " but structure has " +
                    std::to_string(h.num_nodes));
  if (h.num_edges() != m.m)
    throw DataError("manifest declares m=" + std::to_string(m.m) + " but structure has " +
                    std::to_string(h.num_edges()));
  if (h.node_features.cols() != m.dv)
    throw DataError("manifest declares dv=" + std::to_string(m.dv) + " but features have " +
                    std::to_string(h.node_features.cols()) + " columns");
  if (h.labels && static_cast<std::int64_t>(h.labels->size()) != h.num_nodes)
    throw DataError("label count " + std::to_string(h.labels->size()) + " != node count " +
                    std::to_string(h.num_nodes));
  h.validate();
  return h;
}

inline Hypergraph load_dataset(const std::string& manifest_path) {
  return load_dataset(load_manifest(manifest_path));
}

// Writes the dataset into `dir` and returns the manifest (paths are relative
// to the directory; the manifest file itself is dir/manifest.txt).
inline DatasetManifest save_dataset(const Hypergraph& h, const std::string& dir) {
  h.validate();
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  DatasetManifest m;
  m.structure = "structure.txt";
  m.node_features = "node_features.txt";
  m.n = h.num_nodes;
  m.m = h.num_edges();
  m.dv = h.node_features.cols();
  save_structure_file((base / m.structure).string(), h);
  save_feature_file((base / m.node_features).string(), h.node_features);
  if (h.edge_features) {
    m.edge_features = "edge_features.txt";
    save_feature_file((base / m.edge_features).string(), *h.edge_features);
  }
  if (h.labels) {
    m.labels = "labels.txt";
    save_label_file((base / m.labels).string(), *h.labels);
  }
  std::ofstream f(base / "manifest.txt");
  if (!f) throw DataError("cannot write manifest in " + dir);
  f << "structure=" << m.structure << "\n";
  f << "node_features=" << m.node_features << "\n";
  if (!m.edge_features.empty()) f << "edge_features=" << m.edge_features << "\n";
  if (!m.labels.empty()) f << "labels=" << m.labels << "\n";
  f << "n=" << m.n << "\nm=" << m.m << "\ndv=" << m.dv << "\n";
  return m;
}

}  // namespace bhygnn
