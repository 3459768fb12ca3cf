#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deeplung/classifier.hpp"

namespace deeplung {

inline constexpr Index kPaperDeepFeatureDim = 2560;
inline constexpr Index kPixelFeatureExtent = 16;
inline constexpr Index kPixelFeatureDim = kPixelFeatureExtent * kPixelFeatureExtent * kPixelFeatureExtent;

/// [deep | d | 16^3 crop voxels]. `deep_dim` is 2560 for the full network.
std::vector<double> assemble_features(std::span<const double> deep, double d, const NoduleCrop& crop16,
                                      Index deep_dim = kPaperDeepFeatureDim);

struct GbmParams {
  int n_trees = 200;
  int max_depth = 3;
  double shrinkage = 0.1;
  double subsample = 1.0;
  std::uint64_t seed = 0;
};

/// Leaves have feature == -1. Rows with x[feature] < threshold go left.
struct GbmNode {
  int feature = -1;
  double threshold = 0;
  int left = -1, right = -1;
  double value = 0;
};

struct GbmTree {
  std::vector<GbmNode> nodes;  // nodes[0] is the root
  double evaluate(std::span<const double> x) const;
  int depth() const;
};

struct GbmModel {
  Index n_features = 0;
  double initial = 0;  // prior log-odds
  double shrinkage = 0.1;
  std::vector<GbmTree> trees;
  std::vector<double> loss_history;  // mean logistic loss after each tree, not serialized

  double raw_score(std::span<const double> x) const;
};

/// Logistic boosting with exact greedy variance-reduction splits on the
/// negative gradient and one Newton step per leaf.
GbmModel gbm_fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                 const GbmParams& params = {});
double gbm_predict(const GbmModel& model, std::span<const double> feature);

/// Mean logistic loss of the model on a labelled set.
double gbm_loss(const GbmModel& model, const std::vector<std::vector<double>>& features,
                const std::vector<int>& labels);

/// "GBM1" magic, u32 version, header, trees in pre-order.
std::string serialize_gbm(const GbmModel& model);
GbmModel deserialize_gbm(const std::string& bytes);
void save_gbm(const std::string& path, const GbmModel& model);
GbmModel load_gbm(const std::string& path);

}  // namespace deeplung
