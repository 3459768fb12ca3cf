#include "deeplung/annotations.hpp"

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "deeplung/csv.hpp"
#include "deeplung/errors.hpp"

namespace deeplung {

ConsensusResult consensus_label(const std::vector<int>& scores) {
  ConsensusResult r;
  int sum = 0, count = 0;
  for (int s : scores) {
    if (s < 0 || s > 5) throw DomainError("malignancy score out of range: " + std::to_string(s));
    if (s == 0) continue;
    sum += s;
    ++count;
  }
  if (count == 0) {
    r.reason = "no nonzero scores";
    return r;
  }
  r.mean_score = static_cast<double>(sum) / count;
  // Integer comparison of sum against 3 * count avoids rounding at the boundary.
  if (sum > 3 * count) {
    r.label = Consensus::kPositive;
  } else if (sum < 3 * count) {
    r.label = Consensus::kNegative;
  } else {
    r.reason = "mean score exactly 3";
  }
  return r;
}

std::vector<AnnotationRecord> parse_manifest(const std::string& text) {
  const CsvTable table = parse_csv(text);
  const std::size_t sid = table.column("seriesuid");
  const std::size_t cx = table.column("coordX"), cy = table.column("coordY"), cz = table.column("coordZ");
  const std::size_t dm = table.column("diameter_mm");
  std::vector<std::size_t> score_cols;
  for (int i = 1; i <= 4; ++i) {
    if (auto c = table.find_column("s" + std::to_string(i))) score_cols.push_back(*c);
  }
  std::vector<AnnotationRecord> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    AnnotationRecord rec;
    rec.series_id = table.rows[r][sid];
    rec.world = {table.number(r, cx), table.number(r, cy), table.number(r, cz)};
    rec.diameter_mm = table.number(r, dm);
    if (!(rec.diameter_mm > 0)) throw ParseError("manifest row " + std::to_string(r + 2) + ": diameter must be positive");
    for (std::size_t c : score_cols) {
      const double v = table.number(r, c);
      if (v != static_cast<int>(v) || v < 0 || v > 5) {
        throw ParseError("manifest row " + std::to_string(r + 2) + ": score must be an integer in 0..5");
      }
      rec.scores.push_back(static_cast<int>(v));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<AnnotationRecord> read_manifest(const std::string& path) { return parse_manifest(read_text_file(path)); }

std::string format_manifest(const std::vector<AnnotationRecord>& records) {
  std::ostringstream os;
  os << "seriesuid,coordX,coordY,coordZ,diameter_mm,s1,s2,s3,s4\n";
  for (const auto& r : records) {
    os << r.series_id << ',' << format_number(r.world[0]) << ',' << format_number(r.world[1]) << ','
       << format_number(r.world[2]) << ',' << format_number(r.diameter_mm);
    for (std::size_t i = 0; i < 4; ++i) os << ',' << (i < r.scores.size() ? r.scores[i] : 0);
    os << '\n';
  }
  return os.str();
}

void write_manifest(const std::string& path, const std::vector<AnnotationRecord>& records) {
  write_text_file(path, format_manifest(records));
}

std::vector<AnnotationRecord> records_for(const std::vector<AnnotationRecord>& all, const std::string& series_id) {
  std::vector<AnnotationRecord> out;
  for (const auto& r : all) {
    if (r.series_id == series_id) out.push_back(r);
  }
  return out;
}

std::vector<std::string> series_ids(const std::vector<AnnotationRecord>& all) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : all) {
    if (seen.insert(r.series_id).second) out.push_back(r.series_id);
  }
  return out;
}

}  // namespace deeplung
