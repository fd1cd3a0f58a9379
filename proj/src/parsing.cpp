#include "adeval/parsing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include "json.hpp"

namespace adeval::parsing {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool whitespace_only(std::string_view s) { return trim(s).empty(); }

std::size_t count_occurrences(std::string_view text, std::string_view token) {
  std::size_t count = 0;
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string_view::npos) {
    ++count;
    pos += token.size();
  }
  return count;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

}  // namespace

SplitResponse split_think_answer(std::string_view text) {
  constexpr std::string_view kThinkOpen = "<think>";
  constexpr std::string_view kThinkClose = "</think>";
  constexpr std::string_view kAnswerOpen = "<answer>";
  constexpr std::string_view kAnswerClose = "</answer>";

  SplitResponse fallback{std::nullopt, std::string(text), false};

  if (count_occurrences(text, kThinkOpen) != 1 ||
      count_occurrences(text, kThinkClose) != 1 ||
      count_occurrences(text, kAnswerOpen) != 1 ||
      count_occurrences(text, kAnswerClose) != 1) {
    return fallback;
  }
  const std::size_t t0 = text.find(kThinkOpen);
  const std::size_t t1 = text.find(kThinkClose);
  const std::size_t a0 = text.find(kAnswerOpen);
  const std::size_t a1 = text.find(kAnswerClose);
  if (!(t0 < t1 && t1 < a0 && a0 < a1)) return fallback;
  if (!whitespace_only(text.substr(0, t0))) return fallback;
  if (!whitespace_only(text.substr(t1 + kThinkClose.size(),
                                   a0 - (t1 + kThinkClose.size())))) {
    return fallback;
  }
  if (!whitespace_only(text.substr(a1 + kAnswerClose.size()))) return fallback;

  SplitResponse out;
  out.well_formed = true;
  out.think = std::string(
      trim(text.substr(t0 + kThinkOpen.size(), t1 - (t0 + kThinkOpen.size()))));
  out.answer_body = std::string(
      trim(text.substr(a0 + kAnswerOpen.size(), a1 - (a0 + kAnswerOpen.size()))));
  return out;
}

std::optional<CoordSpace> coord_space_from_string(std::string_view name) {
  if (name == "absolute") return CoordSpace::absolute;
  if (name == "norm_1000") return CoordSpace::norm_1000;
  if (name == "norm_unit") return CoordSpace::norm_unit;
  return std::nullopt;
}

std::string_view to_string(CoordSpace space) {
  switch (space) {
    case CoordSpace::absolute: return "absolute";
    case CoordSpace::norm_1000: return "norm_1000";
    case CoordSpace::norm_unit: return "norm_unit";
  }
  return "absolute";
}

std::optional<char> extract_choice(std::string_view answer_body,
                                   std::string_view valid_letters) {
  for (std::size_t i = 0; i < answer_body.size(); ++i) {
    const char up =
        static_cast<char>(std::toupper(static_cast<unsigned char>(answer_body[i])));
    if (valid_letters.find(up) == std::string_view::npos) continue;
    const bool left_ok = i == 0 || !is_word_char(answer_body[i - 1]);
    const bool right_ok =
        i + 1 >= answer_body.size() || !is_word_char(answer_body[i + 1]);
    if (left_ok && right_ok) return up;
  }
  return std::nullopt;
}

namespace {

// Balanced [..] / {..} spans that parse as JSON, in positional order.
std::vector<json> json_candidates(std::string_view text) {
  std::vector<json> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '[' && c != '{') {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t j = i;
    std::size_t close = std::string_view::npos;
    for (; j < text.size(); ++j) {
      const char d = text[j];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (d == '\\') {
          escaped = true;
        } else if (d == '"') {
          in_string = false;
        }
        continue;
      }
      if (d == '"') {
        in_string = true;
      } else if (d == '[' || d == '{') {
        ++depth;
      } else if (d == ']' || d == '}') {
        --depth;
        if (depth == 0) {
          close = j;
          break;
        }
        if (depth < 0) break;
      }
    }
    if (close == std::string_view::npos) {
      ++i;
      continue;
    }
    const std::string_view span = text.substr(i, close - i + 1);
    json parsed = json::parse(span, nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded()) {
      out.push_back(std::move(parsed));
      i = close + 1;
    } else {
      ++i;
    }
  }
  return out;
}

bool is_quad_of_numbers(const json& v) {
  if (!v.is_array() || v.size() != 4) return false;
  return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
}

struct RawBox {
  double x1, y1, x2, y2;
};

std::optional<RawBox> quad_from_json(const json& v) {
  if (!is_quad_of_numbers(v)) return std::nullopt;
  return RawBox{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(),
                v[3].get<double>()};
}

std::optional<RawBox> bbox2d_from_object(const json& v) {
  if (!v.is_object()) return std::nullopt;
  const auto it = v.find("bbox_2d");
  if (it == v.end()) return std::nullopt;
  return quad_from_json(*it);
}

int scale_coord(double value, CoordSpace space, int extent) {
  double scaled = value;
  switch (space) {
    case CoordSpace::absolute:
      break;
    case CoordSpace::norm_1000:
      scaled = value * static_cast<double>(extent) / 1000.0;
      break;
    case CoordSpace::norm_unit:
      scaled = value * static_cast<double>(extent);
      break;
  }
  double rounded = std::floor(scaled + 0.5);  // half-up
  rounded = std::clamp(rounded, -1.0e9, 1.0e9);
  return static_cast<int>(rounded);
}

std::vector<geometry::BBox> convert_boxes(std::span<const RawBox> raw, CoordSpace space,
                                          int width, int height) {
  std::vector<geometry::BBox> out;
  out.reserve(raw.size());
  for (const RawBox& r : raw) {
    geometry::BBox box{scale_coord(r.x1, space, width), scale_coord(r.y1, space, height),
                       scale_coord(r.x2, space, width), scale_coord(r.y2, space, height)};
    if (auto clamped = geometry::clamp_box(box, width, height)) {
      out.push_back(*clamped);
    }
  }
  return out;
}

}  // namespace

std::vector<geometry::BBox> extract_boxes(std::string_view answer_body,
                                          CoordSpace space, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("extract_boxes: image size must be positive");
  }
  const std::vector<json> candidates = json_candidates(answer_body);

  // (a) arrays of 4-number arrays
  std::vector<RawBox> raw;
  for (const json& c : candidates) {
    if (!c.is_array() || c.empty()) continue;
    const bool all_quads = std::all_of(c.begin(), c.end(), is_quad_of_numbers);
    if (!all_quads) continue;
    for (const json& e : c) raw.push_back(*quad_from_json(e));
  }
  if (!raw.empty()) return convert_boxes(raw, space, width, height);

  // (b) objects with a "bbox_2d" quadruple, bare or inside an array
  for (const json& c : candidates) {
    if (auto b = bbox2d_from_object(c)) {
      raw.push_back(*b);
    } else if (c.is_array()) {
      for (const json& e : c) {
        if (auto eb = bbox2d_from_object(e)) raw.push_back(*eb);
      }
    }
  }
  if (!raw.empty()) return convert_boxes(raw, space, width, height);

  // (c) bare quadruples in prose
  static const std::regex kQuad(
      R"(\[\s*([-+]?[0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?)\s*,\s*([-+]?[0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?)\s*,\s*([-+]?[0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?)\s*,\s*([-+]?[0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?)\s*\])");
  const std::string body(answer_body);
  for (auto it = std::sregex_iterator(body.begin(), body.end(), kQuad);
       it != std::sregex_iterator(); ++it) {
    raw.push_back(RawBox{std::stod((*it)[1].str()), std::stod((*it)[2].str()),
                         std::stod((*it)[3].str()), std::stod((*it)[4].str())});
  }
  return convert_boxes(raw, space, width, height);
}

std::string format_boxes(std::span<const geometry::BBox> boxes, BoxTextFormat format) {
  switch (format) {
    case BoxTextFormat::json_array: {
      json arr = json::array();
      for (const auto& b : boxes) arr.push_back({b.x1, b.y1, b.x2, b.y2});
      return arr.dump();
    }
    case BoxTextFormat::bbox_2d_objects: {
      json arr = json::array();
      for (const auto& b : boxes) {
        arr.push_back({{"bbox_2d", {b.x1, b.y1, b.x2, b.y2}}});
      }
      return arr.dump();
    }
    case BoxTextFormat::plain_quadruples: {
      std::string out = "boxes:";
      for (const auto& b : boxes) {
        out += " [" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
               std::to_string(b.x2) + ", " + std::to_string(b.y2) + "]";
      }
      return out;
    }
  }
  return {};
}

}  // namespace adeval::parsing
