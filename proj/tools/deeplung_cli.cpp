// deeplung command line: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "deeplung/checkpoint.hpp"
#include "deeplung/csv.hpp"
#include "deeplung/errors.hpp"
#include "deeplung/pipeline.hpp"
#include "deeplung/synth.hpp"

using namespace deeplung;
namespace fs = std::filesystem;

namespace {

constexpr int kInputError = 2;
constexpr int kNumericError = 3;

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig::parse("") : KeyValueConfig::load(path);
}

std::string model_file(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::vector<SeriesDetections> read_detections(const std::string& path) {
  return parse_detection_csv(read_text_file(path));
}

// Nodule sites for feature extraction: detections when given, else annotations.
std::vector<NoduleSite> sites_for(const std::string& data, const std::string& dets) {
  return dets.empty() ? annotation_sites(data) : detection_sites(data, read_detections(dets));
}

ClassifierNet load_classifier_dir(const std::string& dir) {
  ClassifierNet net(ClassifierConfig::from(KeyValueConfig::load(model_file(dir, "classifier.cfg"))), 0);
  load_classifier(model_file(dir, "classifier.ckpt"), net);
  return net;
}

// Ground truth as voxel boxes: either a manifest (needs the volumes for the
// world-to-voxel map) or a table with series_id,x,y,z,d.
std::map<std::string, std::vector<Box3>> read_ground_truth(const std::string& path, const std::string& data) {
  std::map<std::string, std::vector<Box3>> out;
  const CsvTable t = read_csv(path);
  if (std::find(t.header.begin(), t.header.end(), "diameter_mm") != t.header.end()) {
    if (data.empty()) throw UsageError("a manifest ground truth needs --data for voxel spacing");
    const auto manifest = read_manifest(path);
    for (const auto& id : series_ids(manifest)) {
      const Volume vol = read_mhd(series_path(data, id));
      for (const auto& r : records_for(manifest, id)) out[id].push_back(annotation_box(r, vol));
    }
    return out;
  }
  const std::size_t s = t.column("series_id"), x = t.column("x"), y = t.column("y"), z = t.column("z"),
                    d = t.column("d");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out[t.rows[r][s]].push_back({t.number(r, x), t.number(r, y), t.number(r, z), t.number(r, d)});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lung nodule detection and classification on CT volumes"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config, out, data, model, dets, features, gbm, gt, pred, diagnosis, in, mask, predictions;
  int n = 8, extent = 48;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "random seed"); };
  auto add_config = [&](CLI::App* c) { c->add_option("--config", config, "key = value config file"); };
  auto add_out = [&](CLI::App* c, const char* what) { c->add_option("--out", out, what)->required(); };
  auto add_data = [&](CLI::App* c) { c->add_option("--data", data, "dataset directory")->required(); };

  auto* synth = app.add_subcommand("synth", "generate synthetic volumes and a manifest");
  synth->add_option("--n", n, "number of volumes");
  synth->add_option("--extent", extent, "cube edge in voxels");
  add_seed(synth);
  add_config(synth);
  add_out(synth, "output directory");

  auto* prep = app.add_subcommand("preprocess", "clip and rescale one volume to [0, 1]");
  prep->add_option("--in", in, "input .mhd")->required();
  prep->add_option("--mask", mask, "optional MET_UCHAR mask .mhd");
  add_seed(prep);
  add_config(prep);
  add_out(prep, "output .mhd (MET_FLOAT)");

  auto* tdet = app.add_subcommand("train-detect", "train the nodule detector");
  add_data(tdet);
  add_seed(tdet);
  add_config(tdet);
  add_out(tdet, "model directory");

  auto* detect = app.add_subcommand("detect", "run the detector over every series");
  add_data(detect);
  detect->add_option("--model", model, "detector model directory")->required();
  add_seed(detect);
  add_config(detect);
  add_out(detect, "detection CSV");

  auto* tcls = app.add_subcommand("train-classify", "train the nodule classifier on annotated crops");
  add_data(tcls);
  add_seed(tcls);
  add_config(tcls);
  add_out(tcls, "model directory");

  auto* feat = app.add_subcommand("features", "classifier features per nodule");
  add_data(feat);
  feat->add_option("--model", model, "classifier model directory")->required();
  feat->add_option("--dets", dets, "detection CSV (default: annotated nodules)");
  add_seed(feat);
  add_config(feat);
  add_out(feat, "feature CSV");

  auto* gfit = app.add_subcommand("gbm-fit", "fit gradient boosting on fused features");
  add_data(gfit);
  gfit->add_option("--features", features, "feature CSV")->required();
  gfit->add_option("--dets", dets, "detection CSV the features came from");
  add_seed(gfit);
  add_config(gfit);
  add_out(gfit, "model file");

  auto* diag = app.add_subcommand("diagnose", "per-patient verdicts from detected nodules");
  add_data(diag);
  diag->add_option("--features", features, "feature CSV of the detections")->required();
  diag->add_option("--dets", dets, "detection CSV")->required();
  diag->add_option("--gbm", gbm, "boosting model file")->required();
  diag->add_option("--predictions", predictions, "also write per-nodule probabilities");
  add_seed(diag);
  add_config(diag);
  add_out(diag, "diagnosis CSV");

  auto* efroc = app.add_subcommand("eval-froc", "FROC score of detections");
  efroc->add_option("--dets", dets, "detection CSV")->required();
  efroc->add_option("--gt", gt, "ground truth: manifest or series_id,x,y,z,d")->required();
  efroc->add_option("--data", data, "dataset directory (for a manifest ground truth)");
  add_seed(efroc);
  add_config(efroc);
  efroc->add_option("--out", out, "curve CSV");

  auto* ecls = app.add_subcommand("eval-cls", "nodule classification metrics");
  ecls->add_option("--pred", pred, "CSV with probability and label columns")->required();
  add_seed(ecls);
  add_config(ecls);
  ecls->add_option("--out", out, "borderline statistics CSV");

  auto* epat = app.add_subcommand("eval-patient", "patient-level accuracy against the manifest");
  epat->add_option("--diagnosis", diagnosis, "diagnosis CSV")->required();
  add_data(epat);
  add_seed(epat);
  add_config(epat);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kInputError;
  }

  try {
    if (*synth) {
      const auto kv = load_config(config);
      kv.check_known({});
      write_synth_dataset(out, synth_generate(n, extent, {}, seed));
      std::cout << "wrote " << n << " volumes to " << out << "\n";
    } else if (*prep) {
      load_config(config).check_known({});
      Volume v = read_mhd(in);
      if (!mask.empty()) attach_mask(v, mask);
      write_mhd(out, preprocess(v), ElementType::kFloat);
    } else if (*tdet) {
      const DetectorConfig cfg = DetectorConfig::from(load_config(config));
      DetectorNet net(cfg, seed);
      TrainDetectorOptions opt;
      opt.seed = seed;
      opt.on_epoch = [](const EpochLoss& e) {
        std::cerr << "epoch " << e.epoch << " loss " << e.total << " cls " << e.cls << " reg " << e.reg << "\n";
      };
      fs::create_directories(out);
      opt.on_checkpoint = [&](int epoch, const DetectorNet& m) {
        save_checkpoint(model_file(out, ("detector_" + std::to_string(epoch) + ".ckpt").c_str()), m.tensors());
      };
      const auto curve = train_detector(net, load_detection_samples(data), opt);
      save_checkpoint(model_file(out, "detector.ckpt"), net.tensors());
      write_text_file(model_file(out, "detector.cfg"), cfg.to_text());
      write_text_file(model_file(out, "loss.csv"), format_loss_csv(curve));
    } else if (*detect) {
      const DetectorConfig cfg = DetectorConfig::from(KeyValueConfig::load(model_file(model, "detector.cfg")));
      DetectorNet net(cfg, 0);
      load_checkpoint(model_file(model, "detector.ckpt"), net.tensors());
      DetectOptions opt = detect_options(cfg);
      const auto kv = load_config(config);
      kv.check_known({"patch_extent", "overlap", "logit_threshold", "nms_iou"});
      opt.patch_extent = kv.get_int("patch_extent", opt.patch_extent);
      opt.overlap = kv.get_int("overlap", opt.overlap);
      opt.logit_threshold = kv.get_double("logit_threshold", opt.logit_threshold);
      opt.nms_iou = kv.get_double("nms_iou", opt.nms_iou);
      write_text_file(out, format_detection_csv(run_detection(net, data, opt)));
    } else if (*tcls) {
      const ClassifierConfig cfg = ClassifierConfig::from(load_config(config));
      ClassifierNet net(cfg, seed);
      const LabelledCrops train = classifier_training_set(data, cfg.input_extent);
      TrainClassifierOptions opt;
      opt.seed = seed;
      opt.on_epoch = [](const ClassifierEpoch& e) { std::cerr << "epoch " << e.epoch << " loss " << e.loss << "\n"; };
      train_classifier(net, train.crops, train.labels, opt);
      fs::create_directories(out);
      save_classifier(model_file(out, "classifier.ckpt"), net);
      write_text_file(model_file(out, "classifier.cfg"), cfg.to_text());
    } else if (*feat) {
      load_config(config).check_known({});
      const ClassifierNet net = load_classifier_dir(model);
      write_text_file(out, format_feature_csv(compute_features(net, data, sites_for(data, dets))));
    } else if (*gfit) {
      const auto rows = parse_feature_csv(read_text_file(features));
      const auto sites = sites_for(data, dets);
      const auto fused = fused_features(rows, data, sites);
      std::vector<std::vector<double>> x;
      std::vector<int> y;
      for (std::size_t i = 0; i < sites.size(); ++i) {
        if (sites[i].label < 0) continue;
        x.push_back(fused[i]);
        y.push_back(sites[i].label);
      }
      const GbmModel m = gbm_fit(x, y, gbm_params(load_config(config), seed));
      save_gbm(out, m);
      std::cout << "trees " << m.trees.size() << " final_loss "
                << format_number(m.loss_history.empty() ? 0.0 : m.loss_history.back()) << "\n";
    } else if (*diag) {
      load_config(config).check_known({});
      const GbmModel m = load_gbm(gbm);
      const auto rows = parse_feature_csv(read_text_file(features));
      const auto sites = detection_sites(data, read_detections(dets));
      const auto preds = predict_nodules(m, rows, fused_features(rows, data, sites), sites);
      if (!predictions.empty()) write_text_file(predictions, format_prediction_csv(preds));
      write_text_file(out, format_diagnosis_csv(diagnose(dataset_series(data), preds)));
    } else if (*efroc) {
      load_config(config).check_known({});
      const auto all = read_detections(dets);
      const auto truth = read_ground_truth(gt, data);
      std::vector<std::string> ids;
      for (const auto& [id, boxes] : truth) ids.push_back(id);
      for (const auto& s : all) {
        if (!truth.count(s.series_id) && std::find(ids.begin(), ids.end(), s.series_id) == ids.end()) {
          ids.push_back(s.series_id);
        }
      }
      std::vector<FrocCase> cases;
      for (const auto& id : ids) {
        FrocCase c;
        if (const auto it = truth.find(id); it != truth.end()) c.gts = it->second;
        for (const auto& s : all) {
          if (s.series_id == id) c.detections.insert(c.detections.end(), s.detections.begin(), s.detections.end());
        }
        cases.push_back(std::move(c));
      }
      const FrocCurve curve = froc(cases);
      std::cout << "froc " << format_number(curve.score) << "\n";
      if (out.empty()) {
        std::cout << format_froc_csv(curve);
      } else {
        write_text_file(out, format_froc_csv(curve));
      }
    } else if (*ecls) {
      load_config(config).check_known({});
      const CsvTable t = read_csv(pred);
      const std::size_t pc = t.column("probability"), lc = t.column("label");
      std::vector<double> probs;
      std::vector<int> labels, predicted;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const int label = static_cast<int>(t.number(r, lc));
        if (label < 0) continue;
        probs.push_back(t.number(r, pc));
        labels.push_back(label);
        predicted.push_back(probs.back() > 0.5);
      }
      std::cout << "n " << probs.size() << "\n";
      std::cout << "accuracy " << format_number(accuracy(probs, labels)) << "\n";
      std::cout << "kappa " << format_number(cohen_kappa(predicted, labels)) << "\n";
      std::cout << "log_likelihood " << format_number(mean_log_likelihood(probs, labels)) << "\n";
      const auto freq = borderline_stats(probs);
      std::string table = "threshold,percent\n";
      for (std::size_t i = 0; i < freq.size(); ++i) {
        table += format_number(kBorderlineThresholds[i]) + "," + format_number(freq[i]) + "\n";
      }
      if (out.empty()) {
        std::cout << table;
      } else {
        write_text_file(out, table);
      }
    } else if (*epat) {
      load_config(config).check_known({});
      const auto rows = parse_diagnosis_csv(read_text_file(diagnosis));
      const auto manifest = read_manifest(manifest_path(data));
      std::vector<double> probs;
      std::vector<int> labels;
      for (const auto& id : series_ids(manifest)) {
        bool cancer = false;
        for (const auto& r : records_for(manifest, id)) {
          cancer = cancer || consensus_label(r.scores).label == Consensus::kPositive;
        }
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const DiagnosisRow& d) { return d.series_id == id; });
        if (it == rows.end()) throw ParseError("diagnosis CSV has no row for series " + id);
        probs.push_back(it->verdict == PatientVerdict::kCancer ? 1.0 : 0.0);
        labels.push_back(cancer);
      }
      std::cout << "patients " << probs.size() << "\n";
      std::cout << "accuracy " << format_number(accuracy(probs, labels)) << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return 0;
}
