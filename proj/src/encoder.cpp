#include "adeval/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "adeval/rng.hpp"

namespace adeval::encoder {

namespace {

using json = nlohmann::json;

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("mul: inner dimensions differ");
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.data[p * n];
      double* orow = &out.data[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

void add_in_place(Tensor& dst, const Tensor& src) {
  if (dst.shape != src.shape) throw std::invalid_argument("add_in_place: shape mismatch");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  Tensor out = Tensor::matrix(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = a.at(i, j);
  return out;
}

void add_cols(Tensor& dst, std::size_t c0, const Tensor& src) {
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < src.cols(); ++j) dst.at(i, c0 + j) += src.at(i, j);
}

void softmax_rows(Tensor& s) {
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double* row = &s.data[i * s.cols()];
    double mx = row[0];
    for (std::size_t j = 1; j < s.cols(); ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < s.cols(); ++j) row[j] /= sum;
  }
}

void check_attention_shapes(const Tensor& q, const Tensor& kv, const Tensor& wq,
                            const Tensor& wk, const Tensor& wv, const EncoderConfig& cfg) {
  const std::size_t d = cfg.dim;
  if (!q.is_matrix() || !kv.is_matrix() || q.cols() != d || kv.cols() != d)
    throw std::invalid_argument("cross_attention: inputs must be matrices with dim columns");
  if (q.rows() == 0 || kv.rows() == 0)
    throw std::invalid_argument("cross_attention: empty input");
  for (const Tensor* w : {&wq, &wk, &wv})
    if (!w->is_matrix() || w->rows() != d || w->cols() != d)
      throw std::invalid_argument("cross_attention: projection must be dim x dim");
}

// Everything backward needs from one attention call.
struct AttentionCache {
  Tensor a, b, v;            // projected Q, K, V (full width)
  std::vector<Tensor> p;     // per-head softmax
};

AttentionCache attention_forward(const Tensor& q, const Tensor& kv, const Tensor& wq,
                                 const Tensor& wk, const Tensor& wv,
                                 const EncoderConfig& cfg, Tensor& out) {
  check_attention_shapes(q, kv, wq, wk, wv, cfg);
  AttentionCache cache;
  cache.a = mul(q, wq);
  cache.b = mul(kv, wk);
  cache.v = mul(kv, wv);
  out = Tensor::matrix(q.rows(), cfg.dim);
  const std::size_t hd = cfg.head_dim();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor ah = slice_cols(cache.a, h * hd, (h + 1) * hd);
    const Tensor bh = slice_cols(cache.b, h * hd, (h + 1) * hd);
    const Tensor vh = slice_cols(cache.v, h * hd, (h + 1) * hd);
    Tensor s = mul(ah, transpose(bh));
    for (double& x : s.data) x *= cfg.scale();
    softmax_rows(s);
    add_cols(out, h * hd, mul(s, vh));
    cache.p.push_back(std::move(s));
  }
  return cache;
}

struct AttentionGrads {
  Tensor dq, dkv, dwq, dwk, dwv;
};

AttentionGrads attention_backward(const Tensor& q, const Tensor& kv, const Tensor& wq,
                                  const Tensor& wk, const Tensor& wv,
                                  const EncoderConfig& cfg, const AttentionCache& cache,
                                  const Tensor& dout) {
  const std::size_t hd = cfg.head_dim();
  Tensor da = Tensor::matrix(q.rows(), cfg.dim);
  Tensor db = Tensor::matrix(kv.rows(), cfg.dim);
  Tensor dv = Tensor::matrix(kv.rows(), cfg.dim);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor ah = slice_cols(cache.a, h * hd, (h + 1) * hd);
    const Tensor bh = slice_cols(cache.b, h * hd, (h + 1) * hd);
    const Tensor vh = slice_cols(cache.v, h * hd, (h + 1) * hd);
    const Tensor& ph = cache.p[h];
    const Tensor doh = slice_cols(dout, h * hd, (h + 1) * hd);

    Tensor dp = mul(doh, transpose(vh));
    add_cols(dv, h * hd, mul(transpose(ph), doh));

    // Softmax Jacobian applied row-wise: ds = p * (dp - rowsum(dp * p)).
    Tensor ds = Tensor::matrix(ph.rows(), ph.cols());
    for (std::size_t i = 0; i < ph.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < ph.cols(); ++j) dot += dp.at(i, j) * ph.at(i, j);
      for (std::size_t j = 0; j < ph.cols(); ++j)
        ds.at(i, j) = ph.at(i, j) * (dp.at(i, j) - dot);
    }
    Tensor dah = mul(ds, bh);
    Tensor dbh = mul(transpose(ds), ah);
    for (double& x : dah.data) x *= cfg.scale();
    for (double& x : dbh.data) x *= cfg.scale();
    add_cols(da, h * hd, dah);
    add_cols(db, h * hd, dbh);
  }
  AttentionGrads g;
  g.dwq = mul(transpose(q), da);
  g.dwk = mul(transpose(kv), db);
  g.dwv = mul(transpose(kv), dv);
  g.dq = mul(da, transpose(wq));
  g.dkv = mul(db, transpose(wk));
  add_in_place(g.dkv, mul(dv, transpose(wv)));
  return g;
}

// Comparison queries with their diagonal position code baked in.
Tensor position_coded_queries(const EncoderParams& params, const EncoderConfig& cfg) {
  const auto positions = diagonal_positions(cfg.tokens, cfg.grid_rows, cfg.grid_cols);
  Tensor q = params.comparison_queries;
  for (std::size_t i = 0; i < cfg.tokens; ++i) {
    const auto pe = sinusoidal_pe_2d(positions[i].first, positions[i].second, cfg.dim);
    for (std::size_t j = 0; j < cfg.dim; ++j) q.at(i, j) += pe[j];
  }
  return q;
}

std::size_t pair_index(std::size_t i) { return i == 0 ? 0 : i - 1; }

void check_features(std::span<const Tensor> features, const EncoderConfig& cfg) {
  if (features.empty()) throw std::invalid_argument("stream_forward: no images");
  for (const Tensor& f : features) {
    if (!f.is_matrix() || f.cols() != cfg.dim)
      throw std::invalid_argument("stream_forward: features must be matrices with dim columns");
    if (f.rows() == 0) throw std::invalid_argument("stream_forward: image with zero patches");
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

Tensor Tensor::matrix(std::size_t rows, std::size_t cols) {
  Tensor t;
  t.shape = {rows, cols};
  t.data.assign(rows * cols, 0.0);
  return t;
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return shape.empty() ? 0 : n;
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

std::string tensor_to_json(const Tensor& t) {
  if (!t.all_finite()) throw std::invalid_argument("tensor_to_json: non-finite value");
  if (t.numel() != t.data.size())
    throw std::invalid_argument("tensor_to_json: shape does not match data length");
  json j;
  j["shape"] = t.shape;
  j["data"] = t.data;
  return j.dump();
}

Tensor tensor_from_json(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("shape") || !j.contains("data") ||
      !j["shape"].is_array() || !j["data"].is_array())
    throw std::runtime_error("tensor: expected {\"shape\": [...], \"data\": [...]}");
  Tensor t;
  for (const json& s : j["shape"]) {
    if (!s.is_number_unsigned() || s.get<std::uint64_t>() == 0)
      throw std::runtime_error("tensor: shape entries must be positive integers");
    t.shape.push_back(s.get<std::size_t>());
  }
  if (t.shape.empty()) throw std::runtime_error("tensor: empty shape");
  for (const json& v : j["data"]) {
    if (!v.is_number()) throw std::runtime_error("tensor: data entries must be numbers");
    t.data.push_back(v.get<double>());
  }
  if (t.data.size() != t.numel())
    throw std::runtime_error("tensor: data length does not match shape");
  return t;
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return tensor_from_json(buf.str());
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << tensor_to_json(t) << '\n';
  if (!out.flush()) throw std::runtime_error("write failed: " + path);
}

double EncoderConfig::scale() const {
  return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

void EncoderConfig::validate() const {
  if (dim == 0 || heads == 0 || tokens == 0 || grid_rows == 0 || grid_cols == 0)
    throw std::invalid_argument("encoder config: sizes must be positive");
  if (dim % heads != 0)
    throw std::invalid_argument("encoder config: dim must be divisible by heads");
  if (dim % 4 != 0)
    throw std::invalid_argument("encoder config: dim must be divisible by 4");
}

EncoderParams EncoderParams::gaussian_init(const EncoderConfig& cfg, std::uint64_t seed,
                                           double stddev) {
  cfg.validate();
  EncoderParams p;
  Rng rng(seed);
  auto fill = [&](Tensor& t, std::size_t rows, std::size_t cols) {
    t = Tensor::matrix(rows, cols);
    for (double& x : t.data) x = rng.gaussian() * stddev;
  };
  fill(p.wq1, cfg.dim, cfg.dim);
  fill(p.wk1, cfg.dim, cfg.dim);
  fill(p.wv1, cfg.dim, cfg.dim);
  fill(p.wq2, cfg.dim, cfg.dim);
  fill(p.wk2, cfg.dim, cfg.dim);
  fill(p.wv2, cfg.dim, cfg.dim);
  fill(p.comparison_queries, cfg.tokens, cfg.dim);
  return p;
}

void EncoderParams::check_shapes(const EncoderConfig& cfg) const {
  for (const Tensor* w : {&wq1, &wk1, &wv1, &wq2, &wk2, &wv2})
    if (!w->is_matrix() || w->rows() != cfg.dim || w->cols() != cfg.dim)
      throw std::invalid_argument("encoder params: projections must be dim x dim");
  if (!comparison_queries.is_matrix() || comparison_queries.rows() != cfg.tokens ||
      comparison_queries.cols() != cfg.dim)
    throw std::invalid_argument("encoder params: comparison queries must be tokens x dim");
}

std::vector<double> sinusoidal_pe_2d(std::size_t row, std::size_t col, std::size_t d) {
  if (d == 0 || d % 4 != 0)
    throw std::invalid_argument("sinusoidal_pe_2d: dim must be a positive multiple of 4");
  const std::size_t half = d / 2;
  std::vector<double> pe(d);
  auto encode = [&](double pos, std::size_t offset) {
    for (std::size_t k = 0; k * 2 < half; ++k) {
      const double omega =
          std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
      pe[offset + 2 * k] = std::sin(pos * omega);
      pe[offset + 2 * k + 1] = std::cos(pos * omega);
    }
  };
  encode(static_cast<double>(row), 0);
  encode(static_cast<double>(col), half);
  return pe;
}

std::vector<std::pair<std::size_t, std::size_t>> diagonal_positions(
    std::size_t tokens, std::size_t grid_rows, std::size_t grid_cols) {
  if (tokens == 0 || grid_rows == 0 || grid_cols == 0)
    throw std::invalid_argument("diagonal_positions: sizes must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(tokens);
  if (tokens == 1) {
    out.emplace_back(0, 0);
    return out;
  }
  const double denom = static_cast<double>(tokens - 1);
  for (std::size_t i = 0; i < tokens; ++i) {
    const double t = static_cast<double>(i) / denom;
    const auto r = static_cast<std::size_t>(
        std::llround(t * static_cast<double>(grid_rows - 1)));
    const auto c = static_cast<std::size_t>(
        std::llround(t * static_cast<double>(grid_cols - 1)));
    out.emplace_back(r, c);
  }
  return out;
}

Tensor cross_attention(const Tensor& q, const Tensor& kv, const Tensor& wq,
                       const Tensor& wk, const Tensor& wv, const EncoderConfig& cfg) {
  cfg.validate();
  Tensor out;
  attention_forward(q, kv, wq, wk, wv, cfg, out);
  return out;
}

AttentionTrace cross_attention_traced(const Tensor& q, const Tensor& kv,
                                      const Tensor& wq, const Tensor& wk,
                                      const Tensor& wv, const EncoderConfig& cfg) {
  cfg.validate();
  AttentionTrace trace;
  AttentionCache cache = attention_forward(q, kv, wq, wk, wv, cfg, trace.output);
  trace.softmax = std::move(cache.p);
  return trace;
}

Tensor compare_pair(const Tensor& features_a, const Tensor& features_b,
                    const EncoderParams& params, const EncoderConfig& cfg) {
  cfg.validate();
  params.check_shapes(cfg);
  const Tensor stage1 =
      cross_attention(features_a, features_b, params.wq1, params.wk1, params.wv1, cfg);
  const Tensor queries = position_coded_queries(params, cfg);
  return cross_attention(queries, stage1, params.wq2, params.wk2, params.wv2, cfg);
}

PackedSequence stream_forward(std::span<const Tensor> features,
                              const EncoderParams& params, const EncoderConfig& cfg) {
  cfg.validate();
  params.check_shapes(cfg);
  check_features(features, cfg);

  std::size_t total = 0;
  for (const Tensor& f : features) total += f.rows() + cfg.tokens;

  PackedSequence seq;
  seq.data = Tensor::matrix(total, cfg.dim);
  seq.layout.reserve(total);
  std::size_t row = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Tensor& base = features[i];
    seq.base_rows.push_back(base.rows());
    seq.base_offset.push_back(row);
    std::copy(base.data.begin(), base.data.end(), seq.data.data.begin() + row * cfg.dim);
    for (std::size_t r = 0; r < base.rows(); ++r) seq.layout.push_back({i, RowKind::base});
    row += base.rows();

    const Tensor comp = compare_pair(features[i], features[pair_index(i)], params, cfg);
    seq.comp_offset.push_back(row);
    std::copy(comp.data.begin(), comp.data.end(), seq.data.data.begin() + row * cfg.dim);
    for (std::size_t r = 0; r < cfg.tokens; ++r)
      seq.layout.push_back({i, RowKind::comparison});
    row += cfg.tokens;
  }
  return seq;
}

EncoderGradients backward(std::span<const Tensor> features, const EncoderParams& params,
                          const EncoderConfig& cfg, const PackedSequence& upstream) {
  cfg.validate();
  params.check_shapes(cfg);
  check_features(features, cfg);

  std::size_t total = 0;
  for (const Tensor& f : features) total += f.rows() + cfg.tokens;
  if (!upstream.data.is_matrix() || upstream.data.rows() != total ||
      upstream.data.cols() != cfg.dim)
    throw std::invalid_argument("backward: upstream shape does not match forward output");

  EncoderGradients g;
  g.params.wq1 = Tensor::matrix(cfg.dim, cfg.dim);
  g.params.wk1 = Tensor::matrix(cfg.dim, cfg.dim);
  g.params.wv1 = Tensor::matrix(cfg.dim, cfg.dim);
  g.params.wq2 = Tensor::matrix(cfg.dim, cfg.dim);
  g.params.wk2 = Tensor::matrix(cfg.dim, cfg.dim);
  g.params.wv2 = Tensor::matrix(cfg.dim, cfg.dim);
  g.params.comparison_queries = Tensor::matrix(cfg.tokens, cfg.dim);
  for (const Tensor& f : features) g.features.push_back(Tensor::matrix(f.rows(), cfg.dim));

  const Tensor queries = position_coded_queries(params, cfg);
  std::size_t row = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Tensor& fa = features[i];
    const Tensor& fb = features[pair_index(i)];

    // Base rows pass through unchanged, so their upstream flows straight back.
    for (std::size_t r = 0; r < fa.rows(); ++r)
      for (std::size_t j = 0; j < cfg.dim; ++j)
        g.features[i].at(r, j) += upstream.data.at(row + r, j);
    row += fa.rows();

    Tensor dcomp = Tensor::matrix(cfg.tokens, cfg.dim);
    for (std::size_t r = 0; r < cfg.tokens; ++r)
      for (std::size_t j = 0; j < cfg.dim; ++j)
        dcomp.at(r, j) = upstream.data.at(row + r, j);
    row += cfg.tokens;

    Tensor stage1;
    const AttentionCache cache1 =
        attention_forward(fa, fb, params.wq1, params.wk1, params.wv1, cfg, stage1);
    Tensor stage2_unused;
    const AttentionCache cache2 = attention_forward(
        queries, stage1, params.wq2, params.wk2, params.wv2, cfg, stage2_unused);

    const AttentionGrads g2 = attention_backward(queries, stage1, params.wq2, params.wk2,
                                                 params.wv2, cfg, cache2, dcomp);
    add_in_place(g.params.wq2, g2.dwq);
    add_in_place(g.params.wk2, g2.dwk);
    add_in_place(g.params.wv2, g2.dwv);
    // The position code is a constant offset, so the query gradient is passed on whole.
    add_in_place(g.params.comparison_queries, g2.dq);

    const AttentionGrads g1 = attention_backward(fa, fb, params.wq1, params.wk1,
                                                 params.wv1, cfg, cache1, g2.dkv);
    add_in_place(g.params.wq1, g1.dwq);
    add_in_place(g.params.wk1, g1.dwk);
    add_in_place(g.params.wv1, g1.dwv);
    add_in_place(g.features[i], g1.dq);
    add_in_place(g.features[pair_index(i)], g1.dkv);
  }
  return g;
}

GradCheckResult grad_check(std::uint64_t seed, const EncoderConfig& cfg,
                           std::size_t images, std::size_t patches, double epsilon,
                           double corrupt_first_entry) {
  cfg.validate();
  if (images == 0 || patches == 0)
    throw std::invalid_argument("grad_check: images and patches must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");

  EncoderParams params = EncoderParams::gaussian_init(cfg, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Tensor> features;
  for (std::size_t i = 0; i < images; ++i) {
    Tensor f = Tensor::matrix(patches, cfg.dim);
    for (double& x : f.data) x = rng.gaussian();
    features.push_back(std::move(f));
  }
  const PackedSequence forward = stream_forward(features, params, cfg);
  PackedSequence upstream = forward;
  for (double& x : upstream.data.data) x = rng.gaussian();

  EncoderGradients analytic = backward(features, params, cfg, upstream);
  analytic.params.wq1.data[0] += corrupt_first_entry;

  const auto objective = [&]() {
    return dot(stream_forward(features, params, cfg).data.data, upstream.data.data);
  };
  const auto check_entries = [&](std::vector<double>& live, const std::vector<double>& grad) {
    double worst = 0.0;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const double saved = live[i];
      live[i] = saved + epsilon;
      const double hi = objective();
      live[i] = saved - epsilon;
      const double lo = objective();
      live[i] = saved;
      worst = std::max(worst, rel_err(grad[i], (hi - lo) / (2.0 * epsilon)));
    }
    return worst;
  };

  GradCheckResult result;
  result.per_group["wq1"] = check_entries(params.wq1.data, analytic.params.wq1.data);
  result.per_group["wk1"] = check_entries(params.wk1.data, analytic.params.wk1.data);
  result.per_group["wv1"] = check_entries(params.wv1.data, analytic.params.wv1.data);
  result.per_group["wq2"] = check_entries(params.wq2.data, analytic.params.wq2.data);
  result.per_group["wk2"] = check_entries(params.wk2.data, analytic.params.wk2.data);
  result.per_group["wv2"] = check_entries(params.wv2.data, analytic.params.wv2.data);
  result.per_group["queries"] =
      check_entries(params.comparison_queries.data, analytic.params.comparison_queries.data);
  double feat_worst = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i)
    feat_worst =
        std::max(feat_worst, check_entries(features[i].data, analytic.features[i].data));
  result.per_group["features"] = feat_worst;

  for (const auto& [name, err] : result.per_group)
    result.max_error = std::max(result.max_error, err);
  return result;
}

std::pair<double, double> attention_mass_ratio(std::span<const double> weights,
                                               std::span<const RowRef> layout) {
  if (weights.size() != layout.size())
    throw std::invalid_argument("attention_mass_ratio: length mismatch");
  double base = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0)
      throw std::invalid_argument("attention_mass_ratio: negative weight");
    (layout[i].kind == RowKind::base ? base : comp) += weights[i];
  }
  const double total = base + comp;
  if (total <= 0.0) throw std::invalid_argument("attention_mass_ratio: zero total mass");
  return {base / total, comp / total};
}

}  // namespace adeval::encoder
