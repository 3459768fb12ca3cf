#include "deeplung/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "deeplung/csv.hpp"
#include "deeplung/errors.hpp"

namespace deeplung {

int MatchResult::hits() const { return static_cast<int>(std::count(gt_hit.begin(), gt_hit.end(), true)); }

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box3>& gts) {
  MatchResult r;
  r.gt_hit.assign(gts.size(), false);
  r.status.assign(dets.size(), DetStatus::kFalsePositive);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detection_before(dets[a], dets[b]); });
  for (std::size_t i : order) {
    const Box3& d = dets[i].box;
    int best_unhit = -1, best_hit = -1;
    double dist_unhit = 0, dist_hit = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double dx = d.x - gts[g].x, dy = d.y - gts[g].y, dz = d.z - gts[g].z;
      const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (dist > gts[g].d / 2) continue;
      if (!r.gt_hit[g]) {
        if (best_unhit < 0 || dist < dist_unhit) {
          best_unhit = static_cast<int>(g);
          dist_unhit = dist;
        }
      } else if (best_hit < 0 || dist < dist_hit) {
        best_hit = static_cast<int>(g);
        dist_hit = dist;
      }
    }
    if (best_unhit >= 0) {
      r.status[i] = DetStatus::kTruePositive;
      r.matched_gt[i] = best_unhit;
      r.gt_hit[static_cast<std::size_t>(best_unhit)] = true;
    } else if (best_hit >= 0) {
      r.status[i] = DetStatus::kAbsorbed;
      r.matched_gt[i] = best_hit;
    } else {
      ++r.false_positives;
    }
  }
  return r;
}

FrocCurve froc(const std::vector<FrocCase>& cases) {
  if (cases.empty()) throw DomainError("FROC needs at least one volume");
  struct Scored {
    double probability;
    bool tp;
  };
  std::vector<Scored> all;
  std::size_t total_gt = 0;
  for (const auto& c : cases) {
    total_gt += c.gts.size();
    const MatchResult m = match_detections(c.detections, c.gts);
    for (std::size_t i = 0; i < c.detections.size(); ++i) {
      if (m.status[i] == DetStatus::kAbsorbed) continue;
      all.push_back({c.detections[i].probability, m.status[i] == DetStatus::kTruePositive});
    }
  }
  if (total_gt == 0) throw DomainError("FROC sensitivity undefined: no gt nodules");
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.probability > b.probability; });

  FrocCurve curve;
  const double scans = static_cast<double>(cases.size());
  curve.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    // A threshold admits every detection tied at its probability.
    while (j < all.size() && all[j].probability == all[i].probability) {
      (all[j].tp ? tp : fp) += 1;
      ++j;
    }
    curve.points.emplace_back(static_cast<double>(fp) / scans, static_cast<double>(tp) / static_cast<double>(total_gt));
    i = j;
  }
  double sum = 0;
  for (std::size_t k = 0; k < kFrocRates.size(); ++k) {
    curve.sensitivity[k] = sensitivity_at(curve, kFrocRates[k]);
    sum += curve.sensitivity[k];
  }
  curve.score = sum / static_cast<double>(kFrocRates.size());
  return curve;
}

double sensitivity_at(const FrocCurve& curve, double rate) {
  double best = 0.0;
  for (const auto& [fp, sens] : curve.points) {
    if (fp <= rate) best = std::max(best, sens);
  }
  return best;
}

std::string format_froc_csv(const FrocCurve& curve) {
  std::ostringstream os;
  os << "fp_per_scan,sensitivity\n";
  for (const auto& [fp, s] : curve.points) os << format_number(fp) << ',' << format_number(s) << '\n';
  return os.str();
}

namespace {

void check_binary(const std::vector<int>& v, const char* what) {
  for (int x : v) {
    if (x != 0 && x != 1) throw DomainError(std::string(what) + " must be 0 or 1");
  }
}

}  // namespace

double accuracy(const std::vector<double>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw DomainError("accuracy of an empty set");
  if (preds.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
  check_binary(labels, "labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += (preds[i] > 0.5 ? 1 : 0) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty()) throw DomainError("kappa of an empty set");
  if (a.size() != b.size()) throw DimensionError("raters differ in length");
  check_binary(a, "rater labels");
  check_binary(b, "rater labels");
  const double n = static_cast<double>(a.size());
  double agree = 0, a1 = 0, b1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += a[i] == b[i];
    a1 += a[i];
    b1 += b[i];
  }
  const double po = agree / n;
  const double pe = (a1 / n) * (b1 / n) + (1 - a1 / n) * (1 - b1 / n);
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1 - pe);
}

double mean_log_likelihood(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.empty()) throw DomainError("log likelihood of an empty set");
  if (probs.size() != labels.size()) throw DimensionError("probabilities and labels differ in length");
  check_binary(labels, "labels");
  double s = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-6, 1 - 1e-6);
    s += std::log(labels[i] ? p : 1 - p);
  }
  return s / static_cast<double>(probs.size());
}

std::vector<double> borderline_stats(const std::vector<double>& probs, const std::vector<double>& thresholds) {
  std::vector<double> out;
  for (double t : thresholds) {
    if (probs.empty()) {
      out.push_back(0.0);
      continue;
    }
    std::size_t n = 0;
    for (double p : probs) {
      if (!(p >= 0 && p <= 1)) throw DomainError("probabilities must lie in [0, 1]");
      n += (p < t || p > 1 - t);
    }
    out.push_back(100.0 * static_cast<double>(n) / static_cast<double>(probs.size()));
  }
  return out;
}

const char* verdict_name(PatientVerdict v) { return v == PatientVerdict::kCancer ? "cancer" : "non-cancer"; }

PatientVerdict patient_diagnosis(const std::vector<double>& nodule_probs) {
  for (double p : nodule_probs) {
    if (p > 0.5) return PatientVerdict::kCancer;
  }
  return PatientVerdict::kNonCancer;
}

TpFpResult tp_fp_split_eval(const MatchResult& match, const std::vector<int>& gt_labels,
                            const std::vector<double>& preds) {
  if (preds.size() != match.status.size()) throw DimensionError("one prediction per detection required");
  TpFpResult r;
  int tp_correct = 0, fp_negative = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool positive = preds[i] > 0.5;
    if (match.status[i] == DetStatus::kTruePositive) {
      const int label = gt_labels.at(static_cast<std::size_t>(match.matched_gt[i]));
      if (label < 0) continue;
      ++r.tp_count;
      tp_correct += positive == (label == 1);
    } else if (match.status[i] == DetStatus::kFalsePositive) {
      ++r.fp_count;
      fp_negative += !positive;
    }
  }
  if (r.tp_count > 0) r.tp_accuracy = static_cast<double>(tp_correct) / r.tp_count;
  if (r.fp_count > 0) r.fp_reduction = static_cast<double>(fp_negative) / r.fp_count;
  return r;
}

}  // namespace deeplung
