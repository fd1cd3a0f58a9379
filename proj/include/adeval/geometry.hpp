#ifndef ADEVAL_GEOMETRY_HPP_
#define ADEVAL_GEOMETRY_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace adeval::geometry {

// Axis-aligned pixel box, half-open: covers columns [x1, x2) and rows [y1, y2).
struct BBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  bool valid() const { return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2; }
  std::int64_t area() const {
    return static_cast<std::int64_t>(x2 - x1) * static_cast<std::int64_t>(y2 - y1);
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

// Clamps a box to a width x height image. Returns nullopt when nothing of the
// box remains inside (including degenerate inputs).
std::optional<BBox> clamp_box(const BBox& box, int width, int height);

class BinaryMask {
 public:
  // Zero-filled mask; throws std::invalid_argument on non-positive dimensions.
  BinaryMask(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool get(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool value = true) { bits_[index(x, y)] = value ? 1 : 0; }
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

// Ground truth for one localization sample: either an explicit pixel mask or a
// non-empty box list over a known image size. The two variants are
// interchangeable through rasterization.
class GroundTruthRegion {
 public:
  static GroundTruthRegion from_mask(BinaryMask mask);
  // Throws std::invalid_argument on an empty list or a box not valid in-bounds.
  static GroundTruthRegion from_boxes(std::vector<BBox> boxes, int width, int height);

  int width() const;
  int height() const;
  bool holds_boxes() const { return std::holds_alternative<Boxes>(value_); }
  // Only meaningful for the box variant; nullptr otherwise.
  const std::vector<BBox>* boxes() const;
  BinaryMask to_mask() const;

 private:
  struct Boxes {
    std::vector<BBox> list;
    int width = 0;
    int height = 0;
  };
  explicit GroundTruthRegion(std::variant<BinaryMask, Boxes> v) : value_(std::move(v)) {}
  std::variant<BinaryMask, Boxes> value_;
};

// Union of boxes as a mask. Boxes overshooting the image are clamped and
// fully-outside ones dropped. Throws std::invalid_argument on a non-positive size.
BinaryMask rasterize(std::span<const BBox> boxes, int width, int height);

// |a&b| / |a|b|; 1.0 when both masks are empty. Throws std::invalid_argument
// on a dimension mismatch.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

// BBox-Mask IoU via rasterized pixel counting. Predicted boxes are clamped per
// rasterize; gt must match the given size.
double bbox_mask_iou(std::span<const BBox> pred, const GroundTruthRegion& gt,
                     int width, int height);

// Same quantity via an exact area sweep over compressed coordinates; requires
// the box variant of gt. Agrees with bbox_mask_iou to within 1e-12.
double bbox_mask_iou_sweep(std::span<const BBox> pred, const GroundTruthRegion& gt,
                           int width, int height);

// IoU of two box-union regions by coordinate-compression area sweep. Inputs
// must already be valid boxes (use clamp_box first for untrusted data).
double box_union_iou_sweep(std::span<const BBox> a, std::span<const BBox> b);

// One tight box per 4-connected component, sorted by (y1, x1).
std::vector<BBox> boxes_from_mask(const BinaryMask& mask);

// Run-length text record: "W H; start:len,start:len,..." over row-major bit
// indices. Runs must be in-bounds, non-overlapping and strictly increasing.
BinaryMask mask_from_rle(std::string_view text);
std::string mask_to_rle(const BinaryMask& mask);

// 8-bit grayscale PNG; any non-zero pixel is set.
BinaryMask mask_from_png(const std::string& path);

}  // namespace adeval::geometry

#endif  // ADEVAL_GEOMETRY_HPP_
