#include "adeval/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "adeval/image_io.hpp"

namespace adeval::geometry {

namespace {

void check_size(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image size must be positive, got " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
}

std::int64_t cell_count(const std::vector<std::uint8_t>& bits) {
  return std::accumulate(bits.begin(), bits.end(), std::int64_t{0},
                         [](std::int64_t acc, std::uint8_t b) { return acc + b; });
}

}  // namespace

std::optional<BBox> clamp_box(const BBox& box, int width, int height) {
  BBox c;
  c.x1 = std::max(box.x1, 0);
  c.y1 = std::max(box.y1, 0);
  c.x2 = std::min(box.x2, width);
  c.y2 = std::min(box.y2, height);
  if (c.x1 >= c.x2 || c.y1 >= c.y2) return std::nullopt;
  return c;
}

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
  check_size(width, height);
  bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

std::int64_t BinaryMask::count() const { return cell_count(bits_); }

GroundTruthRegion GroundTruthRegion::from_mask(BinaryMask mask) {
  return GroundTruthRegion(std::variant<BinaryMask, Boxes>(std::move(mask)));
}

GroundTruthRegion GroundTruthRegion::from_boxes(std::vector<BBox> boxes, int width,
                                                int height) {
  check_size(width, height);
  if (boxes.empty()) {
    throw std::invalid_argument("ground-truth box list must be non-empty");
  }
  for (const BBox& b : boxes) {
    if (!b.valid() || b.x2 > width || b.y2 > height) {
      throw std::invalid_argument("ground-truth box out of bounds for " +
                                  std::to_string(width) + "x" + std::to_string(height));
    }
  }
  Boxes v{std::move(boxes), width, height};
  return GroundTruthRegion(std::variant<BinaryMask, Boxes>(std::move(v)));
}

int GroundTruthRegion::width() const {
  if (const auto* m = std::get_if<BinaryMask>(&value_)) return m->width();
  return std::get<Boxes>(value_).width;
}

int GroundTruthRegion::height() const {
  if (const auto* m = std::get_if<BinaryMask>(&value_)) return m->height();
  return std::get<Boxes>(value_).height;
}

const std::vector<BBox>* GroundTruthRegion::boxes() const {
  if (const auto* b = std::get_if<Boxes>(&value_)) return &b->list;
  return nullptr;
}

BinaryMask GroundTruthRegion::to_mask() const {
  if (const auto* m = std::get_if<BinaryMask>(&value_)) return *m;
  const Boxes& b = std::get<Boxes>(value_);
  return rasterize(b.list, b.width, b.height);
}

BinaryMask rasterize(std::span<const BBox> boxes, int width, int height) {
  BinaryMask mask(width, height);
  for (const BBox& raw : boxes) {
    const auto box = clamp_box(raw, width, height);
    if (!box) continue;
    for (int y = box->y1; y < box->y2; ++y) {
      for (int x = box->x1; x < box->x2; ++x) {
        mask.set(x, y);
      }
    }
  }
  return mask;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw std::invalid_argument("mask_iou: dimension mismatch");
  }
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  const auto& ba = a.bits();
  const auto& bb = b.bits();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    inter += ba[i] & bb[i];
    uni += ba[i] | bb[i];
  }
  if (uni == 0) return 1.0;  // both empty: perfect agreement
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double bbox_mask_iou(std::span<const BBox> pred, const GroundTruthRegion& gt,
                     int width, int height) {
  check_size(width, height);
  if (gt.width() != width || gt.height() != height) {
    throw std::invalid_argument("bbox_mask_iou: ground truth size mismatch");
  }
  return mask_iou(rasterize(pred, width, height), gt.to_mask());
}

double box_union_iou_sweep(std::span<const BBox> a, std::span<const BBox> b) {
  std::vector<int> xs;
  std::vector<int> ys;
  xs.reserve(2 * (a.size() + b.size()));
  ys.reserve(2 * (a.size() + b.size()));
  for (const BBox& box : a) {
    xs.push_back(box.x1);
    xs.push_back(box.x2);
    ys.push_back(box.y1);
    ys.push_back(box.y2);
  }
  for (const BBox& box : b) {
    xs.push_back(box.x1);
    xs.push_back(box.x2);
    ys.push_back(box.y1);
    ys.push_back(box.y2);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

  const auto covers = [](std::span<const BBox> boxes, int x1, int y1, int x2, int y2) {
    for (const BBox& box : boxes) {
      if (box.x1 <= x1 && x2 <= box.x2 && box.y1 <= y1 && y2 <= box.y2) return true;
    }
    return false;
  };

  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      const std::int64_t area =
          static_cast<std::int64_t>(xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
      const bool in_a = covers(a, xs[i], ys[j], xs[i + 1], ys[j + 1]);
      const bool in_b = covers(b, xs[i], ys[j], xs[i + 1], ys[j + 1]);
      if (in_a && in_b) inter += area;
      if (in_a || in_b) uni += area;
    }
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double bbox_mask_iou_sweep(std::span<const BBox> pred, const GroundTruthRegion& gt,
                           int width, int height) {
  check_size(width, height);
  if (gt.width() != width || gt.height() != height) {
    throw std::invalid_argument("bbox_mask_iou_sweep: ground truth size mismatch");
  }
  const std::vector<BBox>* gt_boxes = gt.boxes();
  if (gt_boxes == nullptr) {
    throw std::invalid_argument("bbox_mask_iou_sweep requires box-list ground truth");
  }
  std::vector<BBox> clamped;
  clamped.reserve(pred.size());
  for (const BBox& raw : pred) {
    if (auto c = clamp_box(raw, width, height)) clamped.push_back(*c);
  }
  return box_union_iou_sweep(clamped, *gt_boxes);
}

std::vector<BBox> boxes_from_mask(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<BBox> out;
  std::vector<std::pair<int, int>> stack;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (!mask.get(x, y) || seen[idx]) continue;
      BBox box{x, y, x + 1, y + 1};
      seen[idx] = 1;
      stack.emplace_back(x, y);
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        box.x1 = std::min(box.x1, cx);
        box.y1 = std::min(box.y1, cy);
        box.x2 = std::max(box.x2, cx + 1);
        box.y2 = std::max(box.y2, cy + 1);
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = cx + dx[k];
          const int ny = cy + dy[k];
          if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
          const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
          if (!mask.get(nx, ny) || seen[nidx]) continue;
          seen[nidx] = 1;
          stack.emplace_back(nx, ny);
        }
      }
      out.push_back(box);
    }
  }
  std::sort(out.begin(), out.end(), [](const BBox& a, const BBox& b) {
    return std::tie(a.y1, a.x1, a.y2, a.x2) < std::tie(b.y1, b.x1, b.y2, b.x2);
  });
  return out;
}

namespace {

std::int64_t parse_int(std::string_view s, std::size_t& pos, const char* what) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), value);
  if (ec != std::errc() || ptr == s.data() + pos) {
    throw std::invalid_argument(std::string("RLE record: expected ") + what);
  }
  pos = static_cast<std::size_t>(ptr - s.data());
  return value;
}

void skip_ws(std::string_view s, std::size_t& pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' ||
                            s[pos] == '\r')) {
    ++pos;
  }
}

}  // namespace

BinaryMask mask_from_rle(std::string_view text) {
  std::size_t pos = 0;
  const std::int64_t w = parse_int(text, pos, "width");
  const std::int64_t h = parse_int(text, pos, "height");
  if (w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20) {
    throw std::invalid_argument("RLE record: bad dimensions");
  }
  skip_ws(text, pos);
  if (pos >= text.size() || text[pos] != ';') {
    throw std::invalid_argument("RLE record: expected ';' after dimensions");
  }
  ++pos;

  BinaryMask mask(static_cast<int>(w), static_cast<int>(h));
  const std::int64_t total = w * h;
  std::int64_t prev_end = 0;
  skip_ws(text, pos);
  bool first = true;
  while (pos < text.size()) {
    if (!first) {
      if (text[pos] != ',') {
        throw std::invalid_argument("RLE record: expected ',' between runs");
      }
      ++pos;
    }
    first = false;
    const std::int64_t start = parse_int(text, pos, "run start");
    skip_ws(text, pos);
    if (pos >= text.size() || text[pos] != ':') {
      throw std::invalid_argument("RLE record: expected ':' in run");
    }
    ++pos;
    const std::int64_t len = parse_int(text, pos, "run length");
    if (len < 1 || start < prev_end || start + len > total) {
      throw std::invalid_argument("RLE record: run out of order or out of bounds");
    }
    for (std::int64_t i = start; i < start + len; ++i) {
      mask.set(static_cast<int>(i % w), static_cast<int>(i / w));
    }
    prev_end = start + len;
    skip_ws(text, pos);
  }
  return mask;
}

std::string mask_to_rle(const BinaryMask& mask) {
  std::string out = std::to_string(mask.width()) + " " + std::to_string(mask.height()) + ";";
  const auto& bits = mask.bits();
  bool first = true;
  std::size_t i = 0;
  while (i < bits.size()) {
    if (!bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < bits.size() && bits[j]) ++j;
    out += first ? "" : ",";
    out += std::to_string(i) + ":" + std::to_string(j - i);
    first = false;
    i = j;
  }
  return out;
}

BinaryMask mask_from_png(const std::string& path) {
  const image::GrayImage img = image::read_gray_png(path);
  BinaryMask mask(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.pixels[static_cast<std::size_t>(y) * img.width + x] != 0) mask.set(x, y);
    }
  }
  return mask;
}

}  // namespace adeval::geometry
