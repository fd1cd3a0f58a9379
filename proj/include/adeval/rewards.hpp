#ifndef ADEVAL_REWARDS_HPP_
#define ADEVAL_REWARDS_HPP_

#include <string>
#include <string_view>

#include "adeval/geometry.hpp"
#include "adeval/parsing.hpp"
#include "adeval/pipeline.hpp"

namespace adeval::rewards {

struct RewardConfig {
  double lambda = 0.1;        // weight of the format term
  bool require_format = true; // when false the format term is omitted (reported as 0)
  parsing::CoordSpace coord_space = parsing::CoordSpace::absolute;

  // Throws std::invalid_argument on a negative or non-finite lambda.
  void validate() const;
};

// total = lambda * format + task, exactly.
struct RewardBreakdown {
  int format = 0;     // 0 or 1
  double task = 0.0;  // {0,1} for choice samples, [0,1] for localization
  double total = 0.0;
};

// 1 iff the response is well formed with non-empty reasoning and answer.
int format_reward(std::string_view text);

// 1 iff the extracted choice equals gt_letter; unparsable responses score 0.
// For malformed responses the full text is scanned (the split fallback).
int task_reward_mc(std::string_view text, char gt_letter, std::string_view valid_letters);

// BBox-Mask IoU of the boxes parsed from the answer body against gt.
double task_reward_loc(std::string_view text, const geometry::GroundTruthRegion& gt,
                       int width, int height, parsing::CoordSpace space);

// Dispatches on the sample's task kind. Throws std::invalid_argument when the
// sample fails validation (rewards need options/answer or gt boxes).
RewardBreakdown total_reward(const pipeline::QARecord& sample, std::string_view response,
                             const RewardConfig& cfg);

}  // namespace adeval::rewards

#endif  // ADEVAL_REWARDS_HPP_
