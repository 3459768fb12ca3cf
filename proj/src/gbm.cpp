#include "deeplung/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "deeplung/checkpoint.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"

namespace deeplung {

std::vector<double> assemble_features(std::span<const double> deep, double d, const NoduleCrop& crop16,
                                      Index deep_dim) {
  if (static_cast<Index>(deep.size()) != deep_dim) {
    throw DimensionError("deep feature has " + std::to_string(deep.size()) + " values, expected " +
                         std::to_string(deep_dim));
  }
  if (static_cast<Index>(crop16.voxels.voxels.size()) != kPixelFeatureDim) {
    throw DimensionError("pixel crop has " + std::to_string(crop16.voxels.voxels.size()) + " voxels, expected " +
                         std::to_string(kPixelFeatureDim));
  }
  std::vector<double> out;
  out.reserve(deep.size() + 1 + crop16.voxels.voxels.size());
  out.insert(out.end(), deep.begin(), deep.end());
  out.push_back(d);
  out.insert(out.end(), crop16.voxels.voxels.begin(), crop16.voxels.voxels.end());
  return out;
}

double GbmTree::evaluate(std::span<const double> x) const {
  int i = 0;
  while (nodes[i].feature >= 0) {
    i = x[nodes[i].feature] < nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  return nodes[i].value;
}

int GbmTree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (nodes[i].feature >= 0) {
      level[nodes[i].left] = level[i] + 1;
      level[nodes[i].right] = level[i] + 1;
    }
  }
  return deepest;
}

double GbmModel::raw_score(std::span<const double> x) const {
  if (static_cast<Index>(x.size()) != n_features) {
    throw DimensionError("feature has " + std::to_string(x.size()) + " values, model expects " +
                         std::to_string(n_features));
  }
  double s = 0;
  for (const auto& t : trees) s += t.evaluate(x);
  return initial + shrinkage * s;
}

double gbm_predict(const GbmModel& model, std::span<const double> feature) {
  return sigmoid(model.raw_score(feature));
}

double gbm_loss(const GbmModel& model, const std::vector<std::vector<double>>& features,
                const std::vector<int>& labels) {
  double total = 0;
  for (std::size_t i = 0; i < features.size(); ++i) total += bce_with_logits(model.raw_score(features[i]), labels[i]);
  return features.empty() ? 0.0 : total / static_cast<double>(features.size());
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& columns, const std::vector<std::vector<int>>& sorted,
              const std::vector<double>& grad, const std::vector<double>& hess, int max_depth)
      : cols_(columns), sorted_(sorted), g_(grad), h_(hess), max_depth_(max_depth), in_node_(grad.size(), 0) {}

  GbmTree build(const std::vector<int>& rows) {
    GbmTree tree;
    tree.nodes.emplace_back();
    grow(tree, 0, rows, 0);
    if (tree.nodes.size() == 1) tree.nodes[0].value = 0;
    return tree;
  }

 private:
  Split best_split(const std::vector<int>& rows) {
    Split best;
    const double n = static_cast<double>(rows.size());
    double total = 0;
    for (int r : rows) total += g_[r];
    const double parent = total * total / n;
    for (int r : rows) in_node_[r] = 1;
    std::vector<int> order;
    order.reserve(rows.size());
    for (std::size_t f = 0; f < cols_.size(); ++f) {
      const auto& col = cols_[f];
      order.clear();
      for (int r : sorted_[f]) {
        if (in_node_[r]) order.push_back(r);
      }
      double left = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left += g_[order[i]];
        const double a = col[order[i]], b = col[order[i + 1]];
        if (!(a < b)) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl;
        const double right = total - left;
        const double gain = left * left / nl + right * right / nr - parent;
        if (gain > best.gain + 1e-12) {
          best.feature = static_cast<int>(f);
          best.threshold = a + (b - a) / 2;
          best.gain = gain;
        }
      }
    }
    for (int r : rows) in_node_[r] = 0;
    return best;
  }

  void grow(GbmTree& tree, int node, const std::vector<int>& rows, int depth) {
    double gs = 0, hs = 0;
    for (int r : rows) {
      gs += g_[r];
      hs += h_[r];
    }
    tree.nodes[node].value = hs > 1e-12 ? gs / hs : 0.0;
    if (depth >= max_depth_ || rows.size() < 2) return;
    const Split s = best_split(rows);
    if (s.feature < 0) return;
    std::vector<int> lrows, rrows;
    for (int r : rows) (cols_[s.feature][r] < s.threshold ? lrows : rrows).push_back(r);
    const int l = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int rr = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node].feature = s.feature;
    tree.nodes[node].threshold = s.threshold;
    tree.nodes[node].left = l;
    tree.nodes[node].right = rr;
    tree.nodes[node].value = 0;
    grow(tree, l, lrows, depth + 1);
    grow(tree, rr, rrows, depth + 1);
  }

  const std::vector<std::vector<double>>& cols_;
  const std::vector<std::vector<int>>& sorted_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  int max_depth_;
  std::vector<char> in_node_;
};

}  // namespace

GbmModel gbm_fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                 const GbmParams& params) {
  if (features.size() != labels.size()) throw DimensionError("one label per feature row required");
  if (params.n_trees < 0 || params.max_depth < 0) throw UsageError("n_trees and max_depth must be >= 0");
  if (!(params.subsample > 0 && params.subsample <= 1)) throw UsageError("subsample must be in (0, 1]");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = std::count(labels.begin(), labels.end(), 0);
  if (pos + neg != static_cast<std::ptrdiff_t>(labels.size())) throw DomainError("labels must be 0 or 1");
  if (pos == 0 || neg == 0) throw UsageError("boosting needs both classes present");

  const std::size_t n = features.size();
  const std::size_t f = features.front().size();
  std::vector<std::vector<double>> cols(f, std::vector<double>(n));
  for (std::size_t r = 0; r < n; ++r) {
    if (features[r].size() != f) throw DimensionError("feature rows differ in length");
    for (std::size_t c = 0; c < f; ++c) {
      if (!std::isfinite(features[r][c])) throw DomainError("non-finite feature value");
      cols[c][r] = features[r][c];
    }
  }
  std::vector<std::vector<int>> sorted(f, std::vector<int>(n));
  for (std::size_t c = 0; c < f; ++c) {
    std::iota(sorted[c].begin(), sorted[c].end(), 0);
    std::stable_sort(sorted[c].begin(), sorted[c].end(), [&](int a, int b) { return cols[c][a] < cols[c][b]; });
  }

  GbmModel model;
  model.n_features = static_cast<Index>(f);
  model.initial = std::log(static_cast<double>(pos) / static_cast<double>(neg));
  model.shrinkage = params.shrinkage;
  std::vector<double> score(n, model.initial), g(n), h(n);
  std::mt19937_64 rng(params.seed);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  const std::size_t take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(params.subsample * n)));
  TreeBuilder builder(cols, sorted, g, h, params.max_depth);

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      const double p = sigmoid(score[r]);
      g[r] = labels[r] - p;
      h[r] = p * (1 - p);
    }
    std::vector<int> rows = all;
    if (take < n) {
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(take);
      std::sort(rows.begin(), rows.end());
    }
    GbmTree tree = builder.build(rows);
    double loss = 0;
    for (std::size_t r = 0; r < n; ++r) {
      score[r] += model.shrinkage * tree.evaluate(features[r]);
      loss += bce_with_logits(score[r], labels[r]);
    }
    model.trees.push_back(std::move(tree));
    model.loss_history.push_back(loss / static_cast<double>(n));
    if (!std::isfinite(model.loss_history.back())) throw NumericError("boosting loss became non-finite");
  }
  return model;
}

namespace {

using namespace binio;
constexpr std::uint32_t kGbmVersion = 1;

void write_node(std::ostream& out, const GbmTree& tree, int i) {
  const GbmNode& node = tree.nodes[i];
  if (node.feature < 0) {
    put_u8(out, 1);
    put_f64(out, node.value);
    return;
  }
  put_u8(out, 0);
  put_u64(out, static_cast<std::uint64_t>(node.feature));
  put_f64(out, node.threshold);
  write_node(out, tree, node.left);
  write_node(out, tree, node.right);
}

int read_node(std::istream& in, GbmTree& tree, Index n_features, int depth) {
  if (depth > 64) throw ParseError("GBM tree too deep");
  const int i = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  const std::uint8_t leaf = get_u8(in);
  if (leaf == 1) {
    tree.nodes[i].value = get_f64(in);
    return i;
  }
  if (leaf != 0) throw ParseError("bad GBM node tag");
  const std::uint64_t feature = get_u64(in);
  if (feature >= static_cast<std::uint64_t>(n_features)) throw ParseError("GBM split feature out of range");
  tree.nodes[i].feature = static_cast<int>(feature);
  tree.nodes[i].threshold = get_f64(in);
  const int l = read_node(in, tree, n_features, depth + 1);
  tree.nodes[i].left = l;
  const int r = read_node(in, tree, n_features, depth + 1);
  tree.nodes[i].right = r;
  return i;
}

}  // namespace

std::string serialize_gbm(const GbmModel& model) {
  std::ostringstream out(std::ios::binary);
  out.write("GBM1", 4);
  binio::put_u32(out, kGbmVersion);
  binio::put_u64(out, static_cast<std::uint64_t>(model.n_features));
  binio::put_f64(out, model.initial);
  binio::put_f64(out, model.shrinkage);
  binio::put_u64(out, model.trees.size());
  for (const auto& t : model.trees) write_node(out, t, 0);
  return out.str();
}

GbmModel deserialize_gbm(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "GBM1") throw ParseError("not a GBM1 model file");
  const std::uint32_t version = binio::get_u32(in);
  if (version != kGbmVersion) throw ParseError("unsupported GBM model version " + std::to_string(version));
  GbmModel m;
  m.n_features = static_cast<Index>(binio::get_u64(in));
  m.initial = binio::get_f64(in);
  m.shrinkage = binio::get_f64(in);
  const std::uint64_t n = binio::get_u64(in);
  for (std::uint64_t t = 0; t < n; ++t) {
    GbmTree tree;
    read_node(in, tree, m.n_features, 0);
    m.trees.push_back(std::move(tree));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after GBM model");
  return m;
}

void save_gbm(const std::string& path, const GbmModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  const std::string bytes = serialize_gbm(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError("write failed for " + path);
}

GbmModel load_gbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_gbm(buf.str());
}

}  // namespace deeplung
