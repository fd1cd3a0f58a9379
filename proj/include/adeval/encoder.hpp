#ifndef ADEVAL_ENCODER_HPP_
#define ADEVAL_ENCODER_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adeval::encoder {

// Dense row-major double tensor. The encoder only ever uses rank-2 shapes, but
// the file schema is rank-generic.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  static Tensor matrix(std::size_t rows, std::size_t cols);

  std::size_t numel() const;
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  bool is_matrix() const { return shape.size() == 2; }
  bool all_finite() const;
};

// JSON wire format: {"shape": [...], "data": [...]} with row-major data.
std::string tensor_to_json(const Tensor& t);
Tensor tensor_from_json(std::string_view text);
Tensor load_tensor(const std::string& path);
void save_tensor(const std::string& path, const Tensor& t);

struct EncoderConfig {
  std::size_t dim = 8;         // feature dimension d
  std::size_t heads = 1;       // d must be divisible by heads
  std::size_t tokens = 100;    // comparison tokens L
  std::size_t grid_rows = 100; // reference patch grid
  std::size_t grid_cols = 100;

  std::size_t head_dim() const { return dim / heads; }
  double scale() const;  // 1/sqrt(head_dim)
  // Throws std::invalid_argument on inconsistent settings (dim % 4 != 0,
  // dim % heads != 0, zero sizes).
  void validate() const;
};

// Projection triples for both attention stages plus the learnable queries.
struct EncoderParams {
  Tensor wq1, wk1, wv1;        // stage 1, each dim x dim
  Tensor wq2, wk2, wv2;        // stage 2, each dim x dim
  Tensor comparison_queries;   // tokens x dim

  static EncoderParams gaussian_init(const EncoderConfig& cfg, std::uint64_t seed,
                                     double stddev = 0.02);
  void check_shapes(const EncoderConfig& cfg) const;
};

// Sinusoidal 2-D position code: first d/2 entries encode the row, last d/2 the
// column, each half alternating sin/cos over geometric frequencies (base
// 10000). Throws std::invalid_argument unless d is divisible by 4.
std::vector<double> sinusoidal_pe_2d(std::size_t row, std::size_t col, std::size_t d);

// L grid positions along the main diagonal: the i-th is
// (round(i*(R-1)/(L-1)), round(i*(C-1)/(L-1))); L = 1 maps to (0, 0).
std::vector<std::pair<std::size_t, std::size_t>> diagonal_positions(
    std::size_t tokens, std::size_t grid_rows, std::size_t grid_cols);

// Multi-head scaled dot-product cross-attention:
// per head, softmax((Q Wq)(KV Wk)^T * scale) (KV Wv), heads concatenated.
Tensor cross_attention(const Tensor& q, const Tensor& kv, const Tensor& wq,
                       const Tensor& wk, const Tensor& wv, const EncoderConfig& cfg);

// Same computation, also exposing the per-head softmax matrices (each q_rows x
// kv_rows) for instrumentation.
struct AttentionTrace {
  Tensor output;
  std::vector<Tensor> softmax;
};
AttentionTrace cross_attention_traced(const Tensor& q, const Tensor& kv,
                                      const Tensor& wq, const Tensor& wk,
                                      const Tensor& wv, const EncoderConfig& cfg);

// Two-stage comparison: features_a cross-attend to features_b, then the
// position-coded comparison queries compress the result into a fixed tokens x
// dim block.
Tensor compare_pair(const Tensor& features_a, const Tensor& features_b,
                    const EncoderParams& params, const EncoderConfig& cfg);

enum class RowKind { base, comparison };
struct RowRef {
  std::size_t image = 0;
  RowKind kind = RowKind::base;
};

// Per image: unmodified base tokens followed by its comparison block.
struct PackedSequence {
  Tensor data;                // total rows x dim
  std::vector<RowRef> layout; // one entry per row
  std::vector<std::size_t> base_rows;    // N_i per image
  std::vector<std::size_t> base_offset;  // row offset of image i's base block
  std::vector<std::size_t> comp_offset;  // row offset of image i's comparison block
};

// Streaming pairing: image 0 with itself, image i with image i-1. Base blocks
// pass through bit-identical. Throws std::invalid_argument on an empty list or
// inconsistent shapes.
PackedSequence stream_forward(std::span<const Tensor> features,
                              const EncoderParams& params, const EncoderConfig& cfg);

// Gradients of <upstream, stream_forward(features)> for every parameter matrix
// and every input feature tensor.
struct EncoderGradients {
  EncoderParams params;
  std::vector<Tensor> features;
};
EncoderGradients backward(std::span<const Tensor> features, const EncoderParams& params,
                          const EncoderConfig& cfg, const PackedSequence& upstream);

// Central-difference verification of backward on a seeded random instance.
// relative error = |analytic - numeric| / max(1, |analytic|, |numeric|).
// corrupt_first_entry is a self-test hook: it is added to one analytic entry
// before comparison so the detection path itself can be exercised.
struct GradCheckResult {
  std::map<std::string, double> per_group;  // wq1..wv2, queries, features
  double max_error = 0.0;
};
GradCheckResult grad_check(std::uint64_t seed, const EncoderConfig& cfg,
                           std::size_t images, std::size_t patches, double epsilon,
                           double corrupt_first_entry = 0.0);

// Fractions of total attention mass landing on base vs comparison rows; the
// two sum to 1. Throws std::invalid_argument on negative weights, a length
// mismatch, or an all-zero vector.
std::pair<double, double> attention_mass_ratio(std::span<const double> weights,
                                               std::span<const RowRef> layout);

}  // namespace adeval::encoder

#endif  // ADEVAL_ENCODER_HPP_
