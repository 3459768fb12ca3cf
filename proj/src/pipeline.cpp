#include "deeplung/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "deeplung/csv.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/synth.hpp"

namespace deeplung {

namespace fs = std::filesystem;

std::string manifest_path(const std::string& dir) { return (fs::path(dir) / "manifest.csv").string(); }

std::string series_path(const std::string& dir, const std::string& series_id) {
  return (fs::path(dir) / (series_id + ".mhd")).string();
}

std::vector<std::string> dataset_series(const std::string& dir) {
  return series_ids(read_manifest(manifest_path(dir)));
}

Volume load_preprocessed(const std::string& dir, const std::string& series_id) {
  return preprocess(read_mhd(series_path(dir, series_id)));
}

Box3 annotation_box(const AnnotationRecord& rec, const Volume& vol) {
  const Vec3 c = world_to_voxel(rec.world, vol);
  const double mean_spacing = (vol.spacing[0] + vol.spacing[1] + vol.spacing[2]) / 3;
  return {c[0], c[1], c[2], rec.diameter_mm / mean_spacing};
}

std::vector<DetectionSample> load_detection_samples(const std::string& dir) {
  const auto manifest = read_manifest(manifest_path(dir));
  std::vector<DetectionSample> out;
  for (const auto& id : series_ids(manifest)) {
    DetectionSample s;
    s.series_id = id;
    s.volume = load_preprocessed(dir, id);
    for (const auto& r : records_for(manifest, id)) s.boxes.push_back(annotation_box(r, s.volume));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SeriesDetections> run_detection(const DetectorNet& net, const std::string& dir,
                                            const DetectOptions& opt) {
  std::vector<SeriesDetections> out;
  for (const auto& id : dataset_series(dir)) out.push_back({id, detect_volume(net, load_preprocessed(dir, id), opt)});
  return out;
}

namespace {

int consensus_to_label(const AnnotationRecord& r) {
  switch (consensus_label(r.scores).label) {
    case Consensus::kPositive:
      return 1;
    case Consensus::kNegative:
      return 0;
    case Consensus::kExcluded:
      break;
  }
  return -1;
}

}  // namespace

std::vector<NoduleSite> annotation_sites(const std::string& dir) {
  const auto manifest = read_manifest(manifest_path(dir));
  std::vector<NoduleSite> out;
  for (const auto& id : series_ids(manifest)) {
    const Volume vol = read_mhd(series_path(dir, id));
    int n = 0;
    for (const auto& r : records_for(manifest, id)) out.push_back({id, n++, annotation_box(r, vol), consensus_to_label(r)});
  }
  return out;
}

std::vector<NoduleSite> detection_sites(const std::string& dir, const std::vector<SeriesDetections>& dets) {
  const auto manifest = read_manifest(manifest_path(dir));
  std::vector<NoduleSite> out;
  for (const auto& s : dets) {
    const auto recs = records_for(manifest, s.series_id);
    std::vector<Box3> gts;
    if (!recs.empty()) {
      const Volume vol = read_mhd(series_path(dir, s.series_id));
      for (const auto& r : recs) gts.push_back(annotation_box(r, vol));
    }
    const MatchResult m = match_detections(s.detections, gts);
    for (std::size_t i = 0; i < s.detections.size(); ++i) {
      const int g = m.matched_gt[i];
      out.push_back({s.series_id, static_cast<int>(i), s.detections[i].box, g >= 0 ? consensus_to_label(recs[g]) : -1});
    }
  }
  return out;
}

LabelledCrops classifier_training_set(const std::string& dir, int extent) {
  LabelledCrops out;
  std::string loaded_id;
  Volume vol;
  for (const auto& site : annotation_sites(dir)) {
    if (site.label < 0) continue;
    if (site.series_id != loaded_id) {
      vol = load_preprocessed(dir, site.series_id);
      loaded_id = site.series_id;
    }
    out.crops.push_back(crop_patch(vol, site.box, extent));
    out.labels.push_back(site.label);
  }
  return out;
}

std::vector<FeatureRow> compute_features(const ClassifierNet& net, const std::string& dir,
                                         const std::vector<NoduleSite>& sites) {
  std::vector<FeatureRow> out;
  std::string loaded_id;
  Volume vol;
  for (const auto& site : sites) {
    if (site.series_id != loaded_id) {
      vol = load_preprocessed(dir, site.series_id);
      loaded_id = site.series_id;
    }
    Classification c = classify(crop_patch(vol, site.box, net.config().input_extent), net);
    out.push_back({site.series_id, site.nodule_id, std::move(c.feature), site.box.d});
  }
  return out;
}

std::vector<std::vector<double>> fused_features(const std::vector<FeatureRow>& rows, const std::string& dir,
                                                const std::vector<NoduleSite>& sites) {
  if (rows.size() != sites.size()) throw DimensionError("feature rows and nodule sites differ in count");
  std::vector<std::vector<double>> out;
  std::string loaded_id;
  Volume vol;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].series_id != sites[i].series_id || rows[i].nodule_id != sites[i].nodule_id) {
      throw ParseError("feature row " + std::to_string(i) + " does not match nodule " + sites[i].series_id + "/" +
                       std::to_string(sites[i].nodule_id));
    }
    if (sites[i].series_id != loaded_id) {
      vol = load_preprocessed(dir, sites[i].series_id);
      loaded_id = sites[i].series_id;
    }
    const NoduleCrop pixels = crop_patch(vol, sites[i].box, static_cast<int>(kPixelFeatureExtent));
    out.push_back(
        assemble_features(rows[i].feature, rows[i].d, pixels, static_cast<Index>(rows.front().feature.size())));
  }
  return out;
}

GbmParams gbm_params(const KeyValueConfig& kv, std::uint64_t seed) {
  kv.check_known({"n_trees", "max_depth", "shrinkage", "subsample"});
  GbmParams p;
  p.n_trees = kv.get_int("n_trees", p.n_trees);
  p.max_depth = kv.get_int("max_depth", p.max_depth);
  p.shrinkage = kv.get_double("shrinkage", p.shrinkage);
  p.subsample = kv.get_double("subsample", p.subsample);
  p.seed = seed;
  return p;
}

std::vector<NodulePrediction> predict_nodules(const GbmModel& model, const std::vector<FeatureRow>& rows,
                                              const std::vector<std::vector<double>>& fused,
                                              const std::vector<NoduleSite>& sites) {
  std::vector<NodulePrediction> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({rows[i].series_id, rows[i].nodule_id, gbm_predict(model, fused[i]), sites[i].label});
  }
  return out;
}

std::vector<DiagnosisRow> diagnose(const std::vector<std::string>& series, const std::vector<NodulePrediction>& preds) {
  std::map<std::string, std::vector<double>> by_series;
  for (const auto& p : preds) by_series[p.series_id].push_back(p.probability);
  std::vector<std::string> ids = series;
  for (const auto& [id, probs] : by_series) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  std::vector<DiagnosisRow> out;
  for (const auto& id : ids) {
    const auto it = by_series.find(id);
    const std::vector<double> probs = it == by_series.end() ? std::vector<double>{} : it->second;
    const double mx = probs.empty() ? 0.0 : *std::max_element(probs.begin(), probs.end());
    out.push_back({id, patient_diagnosis(probs), mx});
  }
  return out;
}

std::string format_diagnosis_csv(const std::vector<DiagnosisRow>& rows) {
  std::ostringstream os;
  os << "series_id,verdict,max_prob\n";
  for (const auto& r : rows) os << r.series_id << ',' << verdict_name(r.verdict) << ',' << format_number(r.max_prob) << '\n';
  return os.str();
}

std::vector<DiagnosisRow> parse_diagnosis_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t s = t.column("series_id"), v = t.column("verdict"), p = t.column("max_prob");
  std::vector<DiagnosisRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& name = t.rows[r][v];
    PatientVerdict verdict;
    if (name == verdict_name(PatientVerdict::kCancer)) {
      verdict = PatientVerdict::kCancer;
    } else if (name == verdict_name(PatientVerdict::kNonCancer)) {
      verdict = PatientVerdict::kNonCancer;
    } else {
      throw ParseError("unknown verdict '" + name + "' on row " + std::to_string(r + 1));
    }
    out.push_back({t.rows[r][s], verdict, t.number(r, p)});
  }
  return out;
}

std::string format_prediction_csv(const std::vector<NodulePrediction>& rows) {
  std::ostringstream os;
  os << "series_id,nodule_id,probability,label\n";
  for (const auto& r : rows) {
    os << r.series_id << ',' << r.nodule_id << ',' << format_number(r.probability) << ',' << r.label << '\n';
  }
  return os.str();
}

std::vector<NodulePrediction> parse_prediction_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t s = t.column("series_id"), n = t.column("nodule_id"), p = t.column("probability"),
                    l = t.column("label");
  std::vector<NodulePrediction> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out.push_back({t.rows[r][s], static_cast<int>(t.number(r, n)), t.number(r, p), static_cast<int>(t.number(r, l))});
  }
  return out;
}

std::vector<FrocCase> froc_cases(const std::string& dir, const std::vector<SeriesDetections>& dets) {
  const auto manifest = read_manifest(manifest_path(dir));
  std::vector<std::string> ids = series_ids(manifest);
  for (const auto& s : dets) {
    if (std::find(ids.begin(), ids.end(), s.series_id) == ids.end()) ids.push_back(s.series_id);
  }
  std::vector<FrocCase> out;
  for (const auto& id : ids) {
    FrocCase c;
    const auto recs = records_for(manifest, id);
    if (!recs.empty()) {
      const Volume vol = read_mhd(series_path(dir, id));
      for (const auto& r : recs) c.gts.push_back(annotation_box(r, vol));
    }
    for (const auto& s : dets) {
      if (s.series_id == id) c.detections.insert(c.detections.end(), s.detections.begin(), s.detections.end());
    }
    out.push_back(std::move(c));
  }
  return out;
}

PipelineArtifacts run_synthetic_pipeline(const std::string& work_dir, const PipelineOptions& opt) {
  const fs::path root(work_dir);
  const std::string data = (root / "data").string();
  write_synth_dataset(data, synth_generate(opt.n_volumes, opt.extent, {}, opt.seed));

  DetectorNet det(opt.detector, opt.seed);
  TrainDetectorOptions dopt;
  dopt.seed = opt.seed;
  train_detector(det, load_detection_samples(data), dopt);
  DetectOptions dx = detect_options(opt.detector);
  dx.patch_extent = opt.detector.input_extent;
  const auto dets = run_detection(det, data, dx);

  PipelineArtifacts art;
  art.detections_csv = format_detection_csv(dets);

  ClassifierNet cls(opt.classifier, opt.seed);
  const LabelledCrops train = classifier_training_set(data, opt.classifier.input_extent);
  TrainClassifierOptions copt;
  copt.seed = opt.seed;
  train_classifier(cls, train.crops, train.labels, copt);

  const auto gt_sites = annotation_sites(data);
  const auto gt_rows = compute_features(cls, data, gt_sites);
  const auto gt_fused = fused_features(gt_rows, data, gt_sites);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < gt_sites.size(); ++i) {
    if (gt_sites[i].label < 0) continue;
    x.push_back(gt_fused[i]);
    y.push_back(gt_sites[i].label);
  }
  GbmParams gp = opt.gbm;
  gp.seed = opt.seed;
  const GbmModel model = gbm_fit(x, y, gp);

  const auto sites = detection_sites(data, dets);
  const auto rows = compute_features(cls, data, sites);
  art.features_csv = format_feature_csv(rows);
  const auto preds = predict_nodules(model, rows, fused_features(rows, data, sites), sites);
  art.diagnosis_csv = format_diagnosis_csv(diagnose(dataset_series(data), preds));

  write_text_file((root / "detections.csv").string(), art.detections_csv);
  write_text_file((root / "features.csv").string(), art.features_csv);
  write_text_file((root / "diagnosis.csv").string(), art.diagnosis_csv);
  return art;
}

}  // namespace deeplung
