#include "adeval/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace adeval::rewards {

void RewardConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw std::invalid_argument("reward lambda must be finite and non-negative");
  }
}

int format_reward(std::string_view text) {
  const parsing::SplitResponse split = parsing::split_think_answer(text);
  return (split.well_formed && split.think && !split.think->empty() &&
          !split.answer_body.empty())
             ? 1
             : 0;
}

int task_reward_mc(std::string_view text, char gt_letter, std::string_view valid_letters) {
  const parsing::SplitResponse split = parsing::split_think_answer(text);
  const auto choice = parsing::extract_choice(split.answer_body, valid_letters);
  return (choice && *choice == gt_letter) ? 1 : 0;
}

double task_reward_loc(std::string_view text, const geometry::GroundTruthRegion& gt,
                       int width, int height, parsing::CoordSpace space) {
  const parsing::SplitResponse split = parsing::split_think_answer(text);
  const auto boxes = parsing::extract_boxes(split.answer_body, space, width, height);
  return geometry::bbox_mask_iou(boxes, gt, width, height);
}

RewardBreakdown total_reward(const pipeline::QARecord& sample, std::string_view response,
                             const RewardConfig& cfg) {
  cfg.validate();
  sample.validate();

  RewardBreakdown out;
  out.format = cfg.require_format ? format_reward(response) : 0;
  if (pipeline::is_choice_task(sample.task)) {
    out.task = task_reward_mc(response, sample.answer, sample.valid_letters());
  } else {
    const auto gt = geometry::GroundTruthRegion::from_boxes(
        sample.gt_boxes, sample.image_width, sample.image_height);
    out.task = task_reward_loc(response, gt, sample.image_width, sample.image_height,
                               cfg.coord_space);
  }
  out.total = cfg.lambda * out.format + out.task;
  return out;
}

}  // namespace adeval::rewards
