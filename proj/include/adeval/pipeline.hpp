#ifndef ADEVAL_PIPELINE_HPP_
#define ADEVAL_PIPELINE_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adeval/geometry.hpp"
#include "adeval/image_io.hpp"

namespace adeval::pipeline {

// The seven choice subtasks plus box localization.
enum class TaskKind {
  anomaly_discrimination,
  defect_classification,
  defect_localization_mc,
  defect_description,
  defect_analysis,
  object_classification,
  object_analysis,
  defect_localization_bbox,
};

inline constexpr TaskKind kChoiceTasks[] = {
    TaskKind::anomaly_discrimination, TaskKind::defect_classification,
    TaskKind::defect_localization_mc, TaskKind::defect_description,
    TaskKind::defect_analysis,        TaskKind::object_classification,
    TaskKind::object_analysis,
};

bool is_choice_task(TaskKind kind);
std::string_view to_string(TaskKind kind);
std::optional<TaskKind> task_kind_from_string(std::string_view name);

// One benchmark question. Choice tasks carry options/answer; the bbox task
// carries gt_boxes plus the image size.
struct QARecord {
  std::string id;
  TaskKind task = TaskKind::anomaly_discrimination;
  std::string question;
  std::map<char, std::string> options;
  char answer = 0;
  std::optional<char> positive_option;  // anomaly-discrimination F1 marker
  std::vector<geometry::BBox> gt_boxes;
  int image_width = 0;
  int image_height = 0;
  std::string query_image;
  std::vector<std::string> template_images;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::string valid_letters() const;  // option keys, e.g. "ABCD"
};

// 32x32 grayscale thumbnail, mean-centered and L2-normalized; a constant
// image maps to the zero vector. Always length 1024.
std::vector<double> descriptor(const image::GrayImage& img);
// Decodes the file first; throws std::runtime_error naming the path.
std::vector<double> descriptor_from_file(const std::string& path);

struct PoolEntry {
  std::string id;
  std::vector<double> vec;
};

// Nearest pool entry by Euclidean distance, ties broken by lowest id.
// Throws std::invalid_argument on an empty pool.
struct RetrievalResult {
  std::size_t index = 0;
  std::string id;
  double distance = 0.0;
};
RetrievalResult nearest(std::span<const double> query, std::span<const PoolEntry> pool);
std::string retrieve_template(std::span<const double> query,
                              std::span<const PoolEntry> pool);

// Downsamples only the normal side (uniform, seeded, without replacement) so
// that abnormal:normal reaches at least target_ratio. Abnormal ids are always
// kept; input order is preserved.
struct RebalanceResult {
  std::vector<std::string> normal;
  std::vector<std::string> abnormal;
};
RebalanceResult rebalance(std::span<const std::string> normal_ids,
                          std::span<const std::string> abnormal_ids,
                          double target_ratio, std::uint64_t seed);

// One seeded crop rectangle in the query image frame, applied identically to
// the template after it is resized to the query size. crop_fraction scales
// each dimension; 1.0 is the identity. Throws std::invalid_argument on a
// fraction outside (0, 1] or non-positive sizes.
struct CropRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};
CropRect paired_crop(int query_width, int query_height, int template_width,
                     int template_height, double crop_fraction, std::uint64_t seed);

// Localization record with gt_boxes taken from the mask's 4-connected
// components. Throws std::invalid_argument on an empty mask.
QARecord build_loc_record(const geometry::BinaryMask& mask, std::string query_image,
                          std::vector<std::string> template_images, std::string id);

// Choice record with options shuffled per seed; the answer letter is assigned
// after shuffling, letters consecutive from A. Throws std::invalid_argument on
// duplicate option texts, no distractors, or a non-choice task kind.
QARecord build_mc_record(const std::string& correct_text,
                         std::span<const std::string> distractors, std::uint64_t seed,
                         std::string id, TaskKind task_kind);

}  // namespace adeval::pipeline

#endif  // ADEVAL_PIPELINE_HPP_
