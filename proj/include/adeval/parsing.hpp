#ifndef ADEVAL_PARSING_HPP_
#define ADEVAL_PARSING_HPP_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adeval/geometry.hpp"

namespace adeval::parsing {

// Result of splitting a raw model response on <think>/<answer> tags.
// well_formed is true only for the strict grammar: exactly one think block,
// then exactly one answer block, nothing but whitespace outside. On malformed
// input answer_body falls back to the full text.
struct SplitResponse {
  std::optional<std::string> think;
  std::string answer_body;
  bool well_formed = false;
};

SplitResponse split_think_answer(std::string_view text);

// Interpretation of numeric box coordinates.
enum class CoordSpace {
  absolute,   // pixels
  norm_1000,  // thousandths of the image dimension
  norm_unit,  // fraction of the image dimension
};

std::optional<CoordSpace> coord_space_from_string(std::string_view name);
std::string_view to_string(CoordSpace space);

// First standalone valid letter scanning left to right; case-insensitive,
// delimited by non-alphanumeric characters on both sides. valid_letters must
// be uppercase. Returns nullopt when no letter qualifies.
std::optional<char> extract_choice(std::string_view answer_body,
                                   std::string_view valid_letters);

// Recognizes boxes in, by preference: (a) a JSON array of 4-number arrays,
// (b) JSON objects carrying a "bbox_2d" 4-number array (bare or in an array),
// (c) bracketed bare quadruples scattered in prose. Coordinates are scaled per
// space, rounded half-up, clamped to the image; degenerate boxes are dropped.
// Never throws: unrecognizable content yields an empty list.
std::vector<geometry::BBox> extract_boxes(std::string_view answer_body,
                                          CoordSpace space, int width, int height);

// Serializers for the recognized formats (used for round-trip checks and
// fixture construction).
enum class BoxTextFormat { json_array, bbox_2d_objects, plain_quadruples };
std::string format_boxes(std::span<const geometry::BBox> boxes, BoxTextFormat format);

}  // namespace adeval::parsing

#endif  // ADEVAL_PARSING_HPP_
