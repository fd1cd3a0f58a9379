#include "adeval/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "adeval/rng.hpp"

namespace adeval::pipeline {

bool is_choice_task(TaskKind kind) { return kind != TaskKind::defect_localization_bbox; }

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::anomaly_discrimination: return "anomaly_discrimination";
    case TaskKind::defect_classification: return "defect_classification";
    case TaskKind::defect_localization_mc: return "defect_localization_mc";
    case TaskKind::defect_description: return "defect_description";
    case TaskKind::defect_analysis: return "defect_analysis";
    case TaskKind::object_classification: return "object_classification";
    case TaskKind::object_analysis: return "object_analysis";
    case TaskKind::defect_localization_bbox: return "defect_localization_bbox";
  }
  return "anomaly_discrimination";
}

std::optional<TaskKind> task_kind_from_string(std::string_view name) {
  for (TaskKind kind : kChoiceTasks) {
    if (name == to_string(kind)) return kind;
  }
  if (name == to_string(TaskKind::defect_localization_bbox)) {
    return TaskKind::defect_localization_bbox;
  }
  return std::nullopt;
}

void QARecord::validate() const {
  if (id.empty()) throw std::invalid_argument("record field 'id' must be non-empty");
  if (is_choice_task(task)) {
    if (options.size() < 2) {
      throw std::invalid_argument("record '" + id +
                                  "': field 'options' needs at least 2 entries");
    }
    for (const auto& [letter, text] : options) {
      if (letter < 'A' || letter > 'Z') {
        throw std::invalid_argument("record '" + id +
                                    "': field 'options' has a non-letter key");
      }
      (void)text;
    }
    if (options.find(answer) == options.end()) {
      throw std::invalid_argument("record '" + id +
                                  "': field 'answer' is not an option letter");
    }
    if (positive_option && options.find(*positive_option) == options.end()) {
      throw std::invalid_argument("record '" + id +
                                  "': field 'positive_option' is not an option letter");
    }
  } else {
    if (image_width <= 0 || image_height <= 0) {
      throw std::invalid_argument("record '" + id +
                                  "': field 'image_size' must be positive");
    }
    if (gt_boxes.empty()) {
      throw std::invalid_argument("record '" + id +
                                  "': field 'gt_boxes' must be non-empty");
    }
    for (const auto& b : gt_boxes) {
      if (!b.valid() || b.x2 > image_width || b.y2 > image_height) {
        throw std::invalid_argument("record '" + id +
                                    "': field 'gt_boxes' has an invalid box");
      }
    }
  }
}

std::string QARecord::valid_letters() const {
  std::string letters;
  for (const auto& [letter, text] : options) {
    letters.push_back(letter);
    (void)text;
  }
  return letters;
}

namespace {

constexpr int kThumbSide = 32;
constexpr std::size_t kDescriptorLength =
    static_cast<std::size_t>(kThumbSide) * kThumbSide;

}  // namespace

std::vector<double> descriptor(const image::GrayImage& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() !=
          static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
    throw std::invalid_argument("descriptor: inconsistent image buffer");
  }
  std::vector<double> thumb(kDescriptorLength, 0.0);
  for (int ty = 0; ty < kThumbSide; ++ty) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(ty) * img.height / kThumbSide);
    int y1 = static_cast<int>(static_cast<std::int64_t>(ty + 1) * img.height / kThumbSide);
    y1 = std::max(y1, y0 + 1);
    for (int tx = 0; tx < kThumbSide; ++tx) {
      const int x0 = static_cast<int>(static_cast<std::int64_t>(tx) * img.width / kThumbSide);
      int x1 = static_cast<int>(static_cast<std::int64_t>(tx + 1) * img.width / kThumbSide);
      x1 = std::max(x1, x0 + 1);
      double sum = 0.0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          sum += img.pixels[static_cast<std::size_t>(y) * img.width + x];
        }
      }
      thumb[static_cast<std::size_t>(ty) * kThumbSide + tx] =
          sum / (static_cast<double>(y1 - y0) * (x1 - x0));
    }
  }
  double mean = 0.0;
  for (double v : thumb) mean += v;
  mean /= static_cast<double>(thumb.size());
  double norm_sq = 0.0;
  for (double& v : thumb) {
    v -= mean;
    norm_sq += v * v;
  }
  if (norm_sq <= 1e-12) {
    std::fill(thumb.begin(), thumb.end(), 0.0);
    return thumb;
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& v : thumb) v *= inv;
  return thumb;
}

std::vector<double> descriptor_from_file(const std::string& path) {
  return descriptor(image::read_gray_png(path));
}

RetrievalResult nearest(std::span<const double> query, std::span<const PoolEntry> pool) {
  if (pool.empty()) throw std::invalid_argument("retrieval pool must be non-empty");
  RetrievalResult best;
  bool have = false;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& entry = pool[i];
    if (entry.vec.size() != query.size()) {
      throw std::invalid_argument("descriptor length mismatch for pool entry '" +
                                  entry.id + "'");
    }
    double d2 = 0.0;
    for (std::size_t k = 0; k < query.size(); ++k) {
      const double diff = query[k] - entry.vec[k];
      d2 += diff * diff;
    }
    if (!have || d2 < best.distance ||
        (d2 == best.distance && entry.id < best.id)) {
      best = RetrievalResult{i, entry.id, d2};
      have = true;
    }
  }
  best.distance = std::sqrt(best.distance);
  return best;
}

std::string retrieve_template(std::span<const double> query,
                              std::span<const PoolEntry> pool) {
  return nearest(query, pool).id;
}

RebalanceResult rebalance(std::span<const std::string> normal_ids,
                          std::span<const std::string> abnormal_ids,
                          double target_ratio, std::uint64_t seed) {
  if (!(target_ratio > 0.0) || !std::isfinite(target_ratio)) {
    throw std::invalid_argument("rebalance: target_ratio must be positive and finite");
  }
  RebalanceResult out;
  out.abnormal.assign(abnormal_ids.begin(), abnormal_ids.end());
  const double current_ratio =
      normal_ids.empty() ? std::numeric_limits<double>::infinity()
                         : static_cast<double>(abnormal_ids.size()) /
                               static_cast<double>(normal_ids.size());
  if (current_ratio >= target_ratio) {
    out.normal.assign(normal_ids.begin(), normal_ids.end());
    return out;
  }
  const std::size_t keep = static_cast<std::size_t>(
      std::floor(static_cast<double>(abnormal_ids.size()) / target_ratio));
  Rng rng(seed);
  const std::vector<std::size_t> picked =
      rng.sample_without_replacement(normal_ids.size(), keep);
  out.normal.reserve(picked.size());
  for (std::size_t i : picked) out.normal.push_back(normal_ids[i]);
  return out;
}

CropRect paired_crop(int query_width, int query_height, int template_width,
                     int template_height, double crop_fraction, std::uint64_t seed) {
  if (query_width <= 0 || query_height <= 0 || template_width <= 0 ||
      template_height <= 0) {
    throw std::invalid_argument("paired_crop: image sizes must be positive");
  }
  if (!(crop_fraction > 0.0) || crop_fraction > 1.0) {
    throw std::invalid_argument("paired_crop: crop_fraction must be in (0, 1]");
  }
  const int w = std::max(1, static_cast<int>(std::floor(query_width * crop_fraction + 0.5)));
  const int h = std::max(1, static_cast<int>(std::floor(query_height * crop_fraction + 0.5)));
  Rng rng(seed);
  CropRect rect;
  rect.width = std::min(w, query_width);
  rect.height = std::min(h, query_height);
  rect.x = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(query_width - rect.width) + 1));
  rect.y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(query_height - rect.height) + 1));
  return rect;
}

namespace {

std::string question_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::anomaly_discrimination:
      return "Compare the query image with the template. Is there any defect in the "
             "query image?";
    case TaskKind::defect_classification:
      return "Compared with the template, what type of defect appears in the query "
             "image?";
    case TaskKind::defect_localization_mc:
      return "Where is the defect located in the query image?";
    case TaskKind::defect_description:
      return "Which statement best describes the defect in the query image?";
    case TaskKind::defect_analysis:
      return "What is the most likely cause of the defect in the query image?";
    case TaskKind::object_classification:
      return "What object is shown in the query image?";
    case TaskKind::object_analysis:
      return "Which statement about the object in the query image is correct?";
    case TaskKind::defect_localization_bbox:
      return "Compare the query image with the template and locate every defective "
             "region. Output bounding boxes as [x1, y1, x2, y2].";
  }
  return {};
}

}  // namespace

QARecord build_loc_record(const geometry::BinaryMask& mask, std::string query_image,
                          std::vector<std::string> template_images, std::string id) {
  if (mask.empty()) {
    throw std::invalid_argument("build_loc_record: mask has no anomalous pixels");
  }
  QARecord record;
  record.id = std::move(id);
  record.task = TaskKind::defect_localization_bbox;
  record.question = question_for(record.task);
  record.gt_boxes = geometry::boxes_from_mask(mask);
  record.image_width = mask.width();
  record.image_height = mask.height();
  record.query_image = std::move(query_image);
  record.template_images = std::move(template_images);
  record.validate();
  return record;
}

QARecord build_mc_record(const std::string& correct_text,
                         std::span<const std::string> distractors, std::uint64_t seed,
                         std::string id, TaskKind task_kind) {
  if (!is_choice_task(task_kind)) {
    throw std::invalid_argument("build_mc_record: task kind is not a choice task");
  }
  if (distractors.empty()) {
    throw std::invalid_argument("build_mc_record: at least one distractor required");
  }
  std::vector<std::string> texts;
  texts.push_back(correct_text);
  texts.insert(texts.end(), distractors.begin(), distractors.end());
  if (texts.size() > 26) {
    throw std::invalid_argument("build_mc_record: too many options");
  }
  std::set<std::string> unique(texts.begin(), texts.end());
  if (unique.size() != texts.size()) {
    throw std::invalid_argument("build_mc_record: duplicate option texts");
  }
  Rng rng(seed);
  rng.shuffle(texts);

  QARecord record;
  record.id = std::move(id);
  record.task = task_kind;
  record.question = question_for(task_kind);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const char letter = static_cast<char>('A' + i);
    record.options[letter] = texts[i];
    if (texts[i] == correct_text) record.answer = letter;
  }
  record.validate();
  return record;
}

}  // namespace adeval::pipeline
