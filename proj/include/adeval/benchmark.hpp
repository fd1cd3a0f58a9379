#ifndef ADEVAL_BENCHMARK_HPP_
#define ADEVAL_BENCHMARK_HPP_

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adeval/parsing.hpp"
#include "adeval/pipeline.hpp"

namespace adeval::benchmark {

// Input-file problems: carries "path:line: message" text where applicable.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Manifest {
  int schema_version = 1;
  std::vector<pipeline::QARecord> records;
};

// One manifest line. Unknown keys are ignored on read; writing emits sorted
// keys so reruns are byte-identical.
std::string record_to_json(const pipeline::QARecord& rec);
pipeline::QARecord record_from_json(std::string_view line);

// JSONL, optionally starting with a {"schema_version": N} header line.
// Throws ValidationError naming the offending line; duplicate ids cite both.
Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& manifest);

// Predictions JSONL: {"id": ..., "output": ...} per line.
struct Prediction {
  std::string id;
  std::string output;
};

// Ordered read, duplicates kept; stream_name only labels error messages.
std::vector<Prediction> read_predictions(std::istream& in, const std::string& stream_name);

// Keyed view for evaluation. A repeated id keeps the last occurrence and
// records a warning. Path "-" reads standard input.
struct PredictionSet {
  std::map<std::string, std::string> by_id;
  std::vector<std::string> warnings;
};
PredictionSet load_predictions(const std::string& path);

struct EvalConfig {
  parsing::CoordSpace coord_space = parsing::CoordSpace::absolute;
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.5};
  int jobs = 1;

  // Thresholds must be non-empty, strictly ascending, each in (0, 1); jobs >= 1.
  void validate() const;
};

struct SubtaskScore {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy_percent() const;
};

struct DiscriminationScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct LocalizationScore {
  std::size_t total = 0;
  double mean_iou = 0.0;
  std::vector<std::pair<double, double>> acc;  // (threshold, percent), ascending
};

struct Report {
  std::map<pipeline::TaskKind, SubtaskScore> choice;  // subtasks present in the manifest
  // Present only when every anomaly-discrimination sample carries positive_option.
  std::optional<DiscriminationScore> discrimination;
  std::optional<LocalizationScore> localization;  // present only with bbox samples
  std::optional<double> average_percent;  // unweighted mean over present choice subtasks
  std::size_t missing = 0;
  std::size_t unparsable = 0;
  std::vector<std::string> warnings;  // predictions without a manifest record
};

// Scores every record against its prediction. Choice samples score by letter
// match, bbox samples by BBox-Mask IoU; a sample with no prediction is wrong
// (IoU 0) and counts as missing. Scoring may run in parallel; aggregation is
// keyed by sorted sample id, so the result is independent of input order and
// worker count.
Report evaluate(const Manifest& manifest, const PredictionSet& predictions,
                const EvalConfig& cfg);

// Precision/recall/F1 with prediction = positive iff the chosen letter equals
// positive_option, ground truth likewise from answer; an absent choice is a
// negative prediction. All 0/0 ratios resolve to 0. Throws ValidationError
// when a sample lacks positive_option.
struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
F1Result f1_discrimination(std::span<const pipeline::QARecord> samples,
                           std::span<const std::optional<char>> choices);

// Canonical JSON: alphabetically sorted keys, percents with 2 decimals,
// fractions with 6. Byte-stable for identical reports. Warnings are not part
// of the file.
std::string render_report(const Report& report);
void emit_report(const Report& report, const std::string& path);

// Human-readable table for standard output: one row per choice subtask in
// benchmark order, the macro average, then localization and F1 lines.
std::string render_summary(const Report& report);

}  // namespace adeval::benchmark

#endif  // ADEVAL_BENCHMARK_HPP_
