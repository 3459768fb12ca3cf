#pragma once

// Stage functions shared by the command line tool and the end-to-end tests.
// A data directory holds <series_id>.mhd volumes (HU) and manifest.csv.

#include <cstdint>
#include <string>
#include <vector>

#include "deeplung/annotations.hpp"
#include "deeplung/classifier.hpp"
#include "deeplung/detect_post.hpp"
#include "deeplung/detector.hpp"
#include "deeplung/eval.hpp"
#include "deeplung/gbm.hpp"

namespace deeplung {

std::string manifest_path(const std::string& dir);
std::string series_path(const std::string& dir, const std::string& series_id);

/// Series of the manifest, in first-appearance order.
std::vector<std::string> dataset_series(const std::string& dir);
/// Reads a series and maps it to [0, 1].
Volume load_preprocessed(const std::string& dir, const std::string& series_id);
/// Annotation center and diameter in voxel units of `vol`.
Box3 annotation_box(const AnnotationRecord& rec, const Volume& vol);

std::vector<DetectionSample> load_detection_samples(const std::string& dir);

std::vector<SeriesDetections> run_detection(const DetectorNet& net, const std::string& dir,
                                            const DetectOptions& opt);

/// A nodule location fed to the classifier. label is 1 / 0 from the reader
/// consensus, or -1 when unknown (excluded nodules, unmatched detections).
struct NoduleSite {
  std::string series_id;
  int nodule_id = 0;
  Box3 box;
  int label = -1;
};

std::vector<NoduleSite> annotation_sites(const std::string& dir);
/// Detections in CSV order; each takes the label of the gt it hits.
std::vector<NoduleSite> detection_sites(const std::string& dir, const std::vector<SeriesDetections>& dets);

struct LabelledCrops {
  std::vector<NoduleCrop> crops;
  std::vector<int> labels;
};
/// Crops at annotated nodules with a positive or negative consensus.
LabelledCrops classifier_training_set(const std::string& dir, int extent);

std::vector<FeatureRow> compute_features(const ClassifierNet& net, const std::string& dir,
                                         const std::vector<NoduleSite>& sites);
/// Deep features, detected size and the 16^3 pixel crop, one row per site.
std::vector<std::vector<double>> fused_features(const std::vector<FeatureRow>& rows, const std::string& dir,
                                                const std::vector<NoduleSite>& sites);

GbmParams gbm_params(const KeyValueConfig& kv, std::uint64_t seed);

struct NodulePrediction {
  std::string series_id;
  int nodule_id = 0;
  double probability = 0;
  int label = -1;
};

struct DiagnosisRow {
  std::string series_id;
  PatientVerdict verdict = PatientVerdict::kNonCancer;
  double max_prob = 0;
};

std::vector<NodulePrediction> predict_nodules(const GbmModel& model, const std::vector<FeatureRow>& rows,
                                              const std::vector<std::vector<double>>& fused,
                                              const std::vector<NoduleSite>& sites);
/// One row per series; series without nodules are non-cancer with max_prob 0.
std::vector<DiagnosisRow> diagnose(const std::vector<std::string>& series, const std::vector<NodulePrediction>& preds);

std::string format_diagnosis_csv(const std::vector<DiagnosisRow>& rows);
std::vector<DiagnosisRow> parse_diagnosis_csv(const std::string& text);
std::string format_prediction_csv(const std::vector<NodulePrediction>& rows);
std::vector<NodulePrediction> parse_prediction_csv(const std::string& text);

/// Per-series FROC inputs from voxel-space detections and the manifest.
std::vector<FrocCase> froc_cases(const std::string& dir, const std::vector<SeriesDetections>& dets);

/// Whole synthetic pipeline in one directory: synth, train-detect, detect,
/// train-classify, features, gbm-fit, diagnose.
struct PipelineOptions {
  int n_volumes = 4;
  int extent = 48;
  std::uint64_t seed = 1;
  DetectorConfig detector = DetectorConfig::desk();
  ClassifierConfig classifier = ClassifierConfig::desk();
  GbmParams gbm;
};

struct PipelineArtifacts {
  std::string detections_csv;
  std::string features_csv;
  std::string diagnosis_csv;
};

PipelineArtifacts run_synthetic_pipeline(const std::string& work_dir, const PipelineOptions& opt);

}  // namespace deeplung
