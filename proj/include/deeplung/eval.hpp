#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "deeplung/detect_post.hpp"

namespace deeplung {

enum class DetStatus { kTruePositive, kFalsePositive, kAbsorbed };

/// Vectors are indexed like the inputs (detections in caller order).
struct MatchResult {
  std::vector<bool> gt_hit;
  std::vector<DetStatus> status;
  std::vector<int> matched_gt;  // gt index for TP and absorbed detections, else -1
  int false_positives = 0;

  int hits() const;
};

/// A detection hits a gt when its center lies within gt.d / 2 of the gt
/// center. Detections are visited by descending probability; each takes the
/// nearest unhit gt in range, otherwise it is absorbed by a hit gt in range,
/// otherwise it is a false positive.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box3>& gts);

inline constexpr std::array<double, 7> kFrocRates{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct FrocCase {
  std::vector<Detection> detections;
  std::vector<Box3> gts;
};

struct FrocCurve {
  std::vector<std::pair<double, double>> points;  // (fp per scan, sensitivity), threshold descending
  std::array<double, 7> sensitivity{};
  double score = 0.0;
};

/// Throws DomainError when no volume carries a gt nodule.
FrocCurve froc(const std::vector<FrocCase>& cases);

/// Sensitivity at the lowest threshold whose FP per scan stays within `rate`.
double sensitivity_at(const FrocCurve& curve, double rate);

std::string format_froc_csv(const FrocCurve& curve);

/// Predictions are positive when p > 0.5.
double accuracy(const std::vector<double>& preds, const std::vector<int>& labels);
double cohen_kappa(const std::vector<int>& rater_a, const std::vector<int>& rater_b);
/// Probabilities clamped to [1e-6, 1 - 1e-6].
double mean_log_likelihood(const std::vector<double>& probs, const std::vector<int>& labels);

inline const std::vector<double> kBorderlineThresholds{0.1, 0.2, 0.3, 0.4};

/// Percent of probabilities with p < t or p > 1 - t, per threshold.
std::vector<double> borderline_stats(const std::vector<double>& probs,
                                     const std::vector<double>& thresholds = kBorderlineThresholds);

enum class PatientVerdict { kNonCancer, kCancer };
const char* verdict_name(PatientVerdict v);

/// OR over nodule predictions at the 0.5 cutoff; empty means non-cancer.
PatientVerdict patient_diagnosis(const std::vector<double>& nodule_probs);

struct TpFpResult {
  std::optional<double> tp_accuracy;   // absent when no TP carries a label
  std::optional<double> fp_reduction;  // absent when there are no FP detections
  int tp_count = 0;
  int fp_count = 0;
};

/// `gt_labels[g]` is 1 (malignant), 0 (benign) or -1 (excluded).
/// `preds[i]` is the malignancy probability of detection i.
TpFpResult tp_fp_split_eval(const MatchResult& match, const std::vector<int>& gt_labels,
                            const std::vector<double>& preds);

}  // namespace deeplung
