#pragma once

#include <array>
#include <string>
#include <vector>

#include "deeplung/volume.hpp"

namespace deeplung {

/// One manifest row. Scores are radiologist malignancy ratings 1..5, 0 = N/A.
struct AnnotationRecord {
  std::string series_id;
  Vec3 world{};  // mm, (x, y, z)
  double diameter_mm = 0;
  std::vector<int> scores;
};

enum class Consensus { kPositive, kNegative, kExcluded };

struct ConsensusResult {
  Consensus label = Consensus::kExcluded;
  double mean_score = 0;
  std::string reason;  // set when excluded
};

/// Drops zero scores; mean > 3 positive, == 3 excluded, < 3 negative.
ConsensusResult consensus_label(const std::vector<int>& scores);

/// `seriesuid,coordX,coordY,coordZ,diameter_mm[,s1..s4]`.
std::vector<AnnotationRecord> read_manifest(const std::string& path);
std::vector<AnnotationRecord> parse_manifest(const std::string& text);
void write_manifest(const std::string& path, const std::vector<AnnotationRecord>& records);
std::string format_manifest(const std::vector<AnnotationRecord>& records);

/// Records of one series, in manifest order.
std::vector<AnnotationRecord> records_for(const std::vector<AnnotationRecord>& all, const std::string& series_id);
/// Distinct series ids in first-appearance order.
std::vector<std::string> series_ids(const std::vector<AnnotationRecord>& all);

}  // namespace deeplung
