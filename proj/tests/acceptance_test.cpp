// Acceptance gate: every release-blocking behavior in one binary, one printed
// verdict line per criterion.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adeval/benchmark.hpp"
#include "adeval/encoder.hpp"
#include "adeval/geometry.hpp"
#include "adeval/parsing.hpp"
#include "adeval/pipeline.hpp"
#include "adeval/rewards.hpp"
#include "adeval/rng.hpp"

using namespace adeval;
using geometry::BBox;
using pipeline::QARecord;
using pipeline::TaskKind;

namespace {

class CriterionLine {
 public:
  CriterionLine(int number, const char* what) : number_(number), what_(what) {}
  ~CriterionLine() {
    std::printf("criterion %d: %s  (%s)\n", number_,
                ::testing::Test::HasFailure() ? "FAIL" : "PASS", what_);
    std::fflush(stdout);
  }

 private:
  int number_;
  const char* what_;
};

std::string fixture(const std::string& name) {
  return std::string(ADEVAL_FIXTURE_DIR) + "/eval/" + name;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in) << path;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Test-local reference: rasterize both box unions onto plain byte grids and
// count. Deliberately naive; the library must agree with it.
double pixel_count_iou(std::span<const BBox> pred, std::span<const BBox> gt, int width,
                       int height) {
  std::vector<char> a(static_cast<std::size_t>(width) * height, 0);
  std::vector<char> b(a.size(), 0);
  const auto paint = [&](std::span<const BBox> boxes, std::vector<char>& grid) {
    for (const BBox& box : boxes)
      for (int y = std::max(0, box.y1); y < std::min(height, box.y2); ++y)
        for (int x = std::max(0, box.x1); x < std::min(width, box.x2); ++x)
          grid[static_cast<std::size_t>(y) * width + x] = 1;
  };
  paint(pred, a);
  paint(gt, b);
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<BBox> random_boxes(Rng& rng, int width, int height, std::size_t max_count) {
  std::vector<BBox> boxes;
  const std::size_t n = rng.uniform_index(max_count + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int x1 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width)));
    const int y1 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(height)));
    const int x2 = x1 + 1 + static_cast<int>(rng.uniform_index(
                                static_cast<std::uint64_t>(width - x1)));
    const int y2 = y1 + 1 + static_cast<int>(rng.uniform_index(
                                static_cast<std::uint64_t>(height - y1)));
    boxes.push_back({x1, y1, x2, y2});
  }
  return boxes;
}

QARecord make_mc(const std::string& id, char answer) {
  QARecord rec;
  rec.id = id;
  rec.task = TaskKind::defect_classification;
  rec.options = {{'A', "scratch"}, {'B', "dent"}, {'C', "crack"}, {'D', "stain"}};
  rec.answer = answer;
  return rec;
}

QARecord make_loc(const std::string& id, std::vector<BBox> gt, int width, int height) {
  QARecord rec;
  rec.id = id;
  rec.task = TaskKind::defect_localization_bbox;
  rec.gt_boxes = std::move(gt);
  rec.image_width = width;
  rec.image_height = height;
  return rec;
}

}  // namespace

TEST(Acceptance, Criterion01MetricOracleEquivalence) {
  CriterionLine line(1, "sweep IoU equals pixel counting on 1000 random instances");
  const auto start = std::chrono::steady_clock::now();
  Rng rng(0xACCE5501);
  for (int trial = 0; trial < 1000; ++trial) {
    const int width = 1 + static_cast<int>(rng.uniform_index(64));
    const int height = 1 + static_cast<int>(rng.uniform_index(64));
    const auto pred = random_boxes(rng, width, height, 5);
    auto gt_boxes = random_boxes(rng, width, height, 5);
    if (gt_boxes.empty()) gt_boxes.push_back({0, 0, 1, 1});
    const auto gt = geometry::GroundTruthRegion::from_boxes(gt_boxes, width, height);

    const double counted = geometry::bbox_mask_iou(pred, gt, width, height);
    const double swept = geometry::bbox_mask_iou_sweep(pred, gt, width, height);
    const double reference = pixel_count_iou(pred, gt_boxes, width, height);
    ASSERT_NEAR(counted, swept, 1e-12) << "trial " << trial;
    ASSERT_NEAR(counted, reference, 1e-12) << "trial " << trial;
  }
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_LT(std::chrono::duration_cast<std::chrono::seconds>(elapsed).count(), 10);
}

TEST(Acceptance, Criterion02WorkedMetricValue) {
  CriterionLine line(2, "(0,0,10,10) vs (5,5,15,15) on 20x20 is exactly 25/175");
  const std::vector<BBox> pred = {{0, 0, 10, 10}};
  const auto gt = geometry::GroundTruthRegion::from_boxes({{5, 5, 15, 15}}, 20, 20);
  EXPECT_EQ(geometry::bbox_mask_iou(pred, gt, 20, 20), 25.0 / 175.0);
  EXPECT_EQ(geometry::bbox_mask_iou_sweep(pred, gt, 20, 20), 25.0 / 175.0);
}

TEST(Acceptance, Criterion03ThresholdMonotonicity) {
  CriterionLine line(3, "ACC@0.1 >= ACC@0.2 >= ACC@0.3 >= ACC@0.5 on random batches");
  Rng rng(0xACCE5503);
  benchmark::EvalConfig cfg;  // thresholds 0.1, 0.2, 0.3, 0.5
  for (int batch = 0; batch < 20; ++batch) {
    benchmark::Manifest manifest;
    benchmark::PredictionSet preds;
    for (int i = 0; i < 16; ++i) {
      const std::string id = "s" + std::to_string(i);
      auto gt = random_boxes(rng, 32, 32, 3);
      if (gt.empty()) gt.push_back({0, 0, 4, 4});
      manifest.records.push_back(make_loc(id, gt, 32, 32));
      preds.by_id[id] = parsing::format_boxes(random_boxes(rng, 32, 32, 3),
                                              parsing::BoxTextFormat::json_array);
    }
    const benchmark::Report report = benchmark::evaluate(manifest, preds, cfg);
    ASSERT_TRUE(report.localization.has_value());
    const auto& acc = report.localization->acc;
    ASSERT_EQ(acc.size(), 4u);
    for (std::size_t t = 1; t < acc.size(); ++t)
      EXPECT_GE(acc[t - 1].second, acc[t].second) << "batch " << batch;
  }

  // Externally reported rows with this shape must survive the report format
  // at two-decimal precision.
  benchmark::Report sample;
  benchmark::LocalizationScore loc;
  loc.total = 100;
  loc.mean_iou = 0.2530;
  loc.acc = {{0.1, 28.39}, {0.2, 18.83}, {0.3, 13.39}, {0.5, 5.15}};
  sample.localization = loc;
  const auto parsed = nlohmann::json::parse(benchmark::render_report(sample));
  EXPECT_EQ(parsed.at("localization").at("acc").at("0.1").get<double>(), 28.39);
  EXPECT_EQ(parsed.at("localization").at("acc").at("0.2").get<double>(), 18.83);
  EXPECT_EQ(parsed.at("localization").at("acc").at("0.3").get<double>(), 13.39);
  EXPECT_EQ(parsed.at("localization").at("acc").at("0.5").get<double>(), 5.15);
  EXPECT_EQ(parsed.at("localization").at("mean_iou").get<double>(), 0.253);
}

TEST(Acceptance, Criterion04RewardLaw) {
  CriterionLine line(4, "total == lambda*format + task on a 30-case grid");
  const QARecord mc = make_mc("mc", 'B');
  const QARecord loc = make_loc("loc", {{5, 5, 15, 15}}, 20, 20);

  const std::string mc_correct = "B";
  const std::string mc_wrong = "C";
  const std::string mc_unparsable = "hmm, truly unclear";
  const std::string loc_correct = "[[5, 5, 15, 15]]";
  const std::string loc_wrong = "[[0, 0, 3, 3]]";
  const std::string loc_unparsable = "somewhere on the rim";

  struct Case {
    const QARecord* rec;
    std::string response;
    bool is_mc;
  };
  std::vector<Case> cases;
  for (const std::string& body :
       {mc_correct, mc_wrong, mc_unparsable})
    for (const bool formatted : {true, false})
      cases.push_back({&mc,
                       formatted ? "<think>compared</think><answer>" + body + "</answer>"
                                 : body,
                       true});
  for (const std::string& body : {loc_correct, loc_wrong, loc_unparsable})
    for (const bool formatted : {true, false})
      cases.push_back({&loc,
                       formatted ? "<think>compared</think><answer>" + body + "</answer>"
                                 : body,
                       false});
  // Pad the grid to 30 with letter and box variations.
  for (const char letter : {'A', 'B', 'C', 'D'}) {
    cases.push_back({&mc, std::string(1, letter), true});
    cases.push_back(
        {&mc, "<think>t</think><answer>" + std::string(1, letter) + "</answer>", true});
  }
  const std::string extra_bodies[] = {"[[0, 0, 20, 20]]", "[[4, 4, 16, 16]]",
                                      "[[5, 5, 15, 15]] [[0, 0, 2, 2]]"};
  for (const std::string& body : extra_bodies) {
    cases.push_back({&loc, body, false});
    cases.push_back({&loc, "<think>t</think><answer>" + body + "</answer>", false});
  }
  // Structurally broken tag layouts round the grid out to 30.
  cases.push_back({&mc, "<answer>B</answer>", true});
  cases.push_back({&mc, "<think>a</think><answer>B</answer><answer>C</answer>", true});
  cases.push_back({&loc, "<answer>[[5, 5, 15, 15]]</answer>", false});
  cases.push_back({&loc, "", false});
  ASSERT_EQ(cases.size(), 30u);

  rewards::RewardConfig cfg;  // lambda 0.1
  rewards::RewardConfig pure;
  pure.lambda = 0.0;
  const std::set<double> mc_totals = {0.0, cfg.lambda, 1.0, 1.0 + cfg.lambda};
  for (const Case& c : cases) {
    const auto b = rewards::total_reward(*c.rec, c.response, cfg);
    EXPECT_EQ(b.total, cfg.lambda * b.format + b.task) << c.response;
    if (c.is_mc) {
      EXPECT_TRUE(mc_totals.count(b.total)) << c.response;
    }

    const auto p = rewards::total_reward(*c.rec, c.response, pure);
    EXPECT_EQ(p.total, p.task) << c.response;
  }
}

TEST(Acceptance, Criterion05EncoderGradientCheck) {
  CriterionLine line(5, "analytic backward within 1e-5 of central differences");
  const auto start = std::chrono::steady_clock::now();
  encoder::EncoderConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.tokens = 4;
  cfg.grid_rows = 8;
  cfg.grid_cols = 8;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto result = encoder::grad_check(seed, cfg, 3, 4, 1e-5);
    EXPECT_LT(result.max_error, 1e-5) << "seed " << seed;
  }
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_LT(std::chrono::duration_cast<std::chrono::seconds>(elapsed).count(), 30);
}

TEST(Acceptance, Criterion06EncoderStructuralContract) {
  CriterionLine line(6, "L x d blocks, bit-identical base rows, streaming pairing");
  encoder::EncoderConfig cfg;
  cfg.dim = 4;
  cfg.tokens = 3;
  cfg.grid_rows = 5;
  cfg.grid_cols = 5;
  const auto params = encoder::EncoderParams::gaussian_init(cfg, 17);
  Rng rng(0xACCE5506);
  const auto random_features = [&](std::size_t rows) {
    encoder::Tensor t = encoder::Tensor::matrix(rows, cfg.dim);
    for (double& x : t.data) x = rng.gaussian();
    return t;
  };

  for (const std::size_t na : {1u, 2u, 5u})
    for (const std::size_t nb : {1u, 3u, 4u}) {
      const auto out = encoder::compare_pair(random_features(na), random_features(nb),
                                             params, cfg);
      EXPECT_EQ(out.rows(), cfg.tokens);
      EXPECT_EQ(out.cols(), cfg.dim);
    }

  const std::vector<encoder::Tensor> feats = {random_features(2), random_features(4),
                                              random_features(3)};
  const auto seq = encoder::stream_forward(feats, params, cfg);
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t r = 0; r < feats[i].rows(); ++r)
      for (std::size_t c = 0; c < cfg.dim; ++c)
        EXPECT_EQ(seq.data.at(seq.base_offset[i] + r, c), feats[i].at(r, c));

  const encoder::Tensor expected[] = {
      encoder::compare_pair(feats[0], feats[0], params, cfg),
      encoder::compare_pair(feats[1], feats[0], params, cfg),
      encoder::compare_pair(feats[2], feats[1], params, cfg),
  };
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t r = 0; r < cfg.tokens; ++r)
      for (std::size_t c = 0; c < cfg.dim; ++c)
        EXPECT_EQ(seq.data.at(seq.comp_offset[i] + r, c), expected[i].at(r, c));

  const encoder::EncoderConfig defaults;
  EXPECT_EQ(defaults.tokens, 100u);
  EXPECT_EQ(defaults.grid_rows, 100u);
  EXPECT_EQ(defaults.grid_cols, 100u);
  const auto diag = encoder::diagonal_positions(defaults.tokens, defaults.grid_rows,
                                                defaults.grid_cols);
  ASSERT_EQ(diag.size(), 100u);
  for (std::size_t i = 0; i < diag.size(); ++i) {
    EXPECT_EQ(diag[i].first, i);
    EXPECT_EQ(diag[i].second, i);
  }
}

TEST(Acceptance, Criterion07ParserRoundTrip) {
  CriterionLine line(7, "serialize-then-parse identity plus scaled extraction");
  Rng rng(0xACCE5507);
  for (const auto format :
       {parsing::BoxTextFormat::json_array, parsing::BoxTextFormat::bbox_2d_objects,
        parsing::BoxTextFormat::plain_quadruples}) {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<BBox> boxes;
      const std::size_t n = 1 + rng.uniform_index(5);
      for (std::size_t i = 0; i < n; ++i) {
        const int x1 = static_cast<int>(rng.uniform_index(120));
        const int y1 = static_cast<int>(rng.uniform_index(120));
        boxes.push_back({x1, y1, x1 + 1 + static_cast<int>(rng.uniform_index(8)),
                         y1 + 1 + static_cast<int>(rng.uniform_index(8))});
      }
      const auto parsed = parsing::extract_boxes(parsing::format_boxes(boxes, format),
                                                 parsing::CoordSpace::absolute, 128, 128);
      ASSERT_EQ(parsed, boxes);
    }
  }

  const auto scaled = parsing::extract_boxes(R"({"bbox_2d":[0,0,500,500]})",
                                             parsing::CoordSpace::norm_1000, 200, 100);
  ASSERT_EQ(scaled.size(), 1u);
  EXPECT_EQ(scaled[0], (BBox{0, 0, 100, 50}));
}

TEST(Acceptance, Criterion08EndToEndGoldenFixture) {
  CriterionLine line(8, "fixture report matches hand scoring, byte-stable across jobs");
  const benchmark::Manifest manifest = benchmark::load_manifest(fixture("manifest.jsonl"));
  const benchmark::PredictionSet preds =
      benchmark::load_predictions(fixture("predictions.jsonl"));

  std::size_t choice_count = 0, bbox_count = 0;
  for (const QARecord& rec : manifest.records)
    (pipeline::is_choice_task(rec.task) ? choice_count : bbox_count)++;
  EXPECT_EQ(choice_count, 70u);
  EXPECT_EQ(bbox_count, 30u);

  const benchmark::Report report = benchmark::evaluate(manifest, preds,
                                                       benchmark::EvalConfig{});
  const auto accuracy = [&](TaskKind kind) {
    return report.choice.at(kind).accuracy_percent();
  };
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::anomaly_discrimination), 80.0);
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::defect_classification), 70.0);
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::defect_localization_mc), 60.0);
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::defect_description), 90.0);
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::defect_analysis), 50.0);
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::object_classification), 100.0);
  EXPECT_DOUBLE_EQ(accuracy(TaskKind::object_analysis), 40.0);
  ASSERT_TRUE(report.average_percent.has_value());
  EXPECT_DOUBLE_EQ(*report.average_percent, 70.0);

  ASSERT_TRUE(report.discrimination.has_value());
  EXPECT_DOUBLE_EQ(report.discrimination->precision, 0.8);
  EXPECT_DOUBLE_EQ(report.discrimination->recall, 0.8);
  EXPECT_DOUBLE_EQ(report.discrimination->f1, 0.8);

  ASSERT_TRUE(report.localization.has_value());
  EXPECT_NEAR(report.localization->mean_iou,
              (6.0 + 9.0 * 0.25 + 6.0 * (25.0 / 175.0)) / 30.0, 1e-12);
  const auto& acc = report.localization->acc;
  ASSERT_EQ(acc.size(), 4u);
  EXPECT_DOUBLE_EQ(acc[0].second, 70.0);
  EXPECT_DOUBLE_EQ(acc[1].second, 50.0);
  EXPECT_DOUBLE_EQ(acc[2].second, 20.0);
  EXPECT_DOUBLE_EQ(acc[3].second, 20.0);
  EXPECT_EQ(report.missing, 2u);
  EXPECT_EQ(report.unparsable, 5u);

  const std::string golden = read_file(fixture("report.golden.json"));
  EXPECT_EQ(benchmark::render_report(report), golden);
  EXPECT_EQ(benchmark::render_report(report), golden);  // rerun, same bytes

  for (const int jobs : {2, 4, 8}) {
    benchmark::EvalConfig cfg;
    cfg.jobs = jobs;
    EXPECT_EQ(benchmark::render_report(benchmark::evaluate(manifest, preds, cfg)), golden)
        << jobs << " jobs";
  }
}

TEST(Acceptance, Criterion09RetrievalIdentity) {
  CriterionLine line(9, "pool member retrieved at distance 0, scan-exact otherwise");
  Rng rng(0xACCE5509);
  std::vector<pipeline::PoolEntry> pool;
  for (int i = 0; i < 100; ++i) {
    pipeline::PoolEntry entry;
    entry.id = "pool_" + std::to_string(1000 + i);
    for (int k = 0; k < 32; ++k) entry.vec.push_back(rng.gaussian());
    pool.push_back(std::move(entry));
  }

  for (const std::size_t member : {0u, 41u, 99u}) {
    const auto hit = pipeline::nearest(pool[member].vec, pool);
    EXPECT_EQ(hit.index, member);
    EXPECT_EQ(hit.distance, 0.0);
  }

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> query;
    for (int k = 0; k < 32; ++k) query.push_back(rng.gaussian());
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < query.size(); ++k) {
        const double diff = query[k] - pool[i].vec[k];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    const auto hit = pipeline::nearest(query, pool);
    EXPECT_EQ(hit.index, best) << "trial " << trial;
    EXPECT_DOUBLE_EQ(hit.distance, std::sqrt(best_d2));
  }
}

TEST(Acceptance, Criterion10RebalanceArithmetic) {
  CriterionLine line(10, "900/100 at 1:1 keeps exactly 100+100, abnormal untouched");
  std::vector<std::string> normal, abnormal;
  for (int i = 0; i < 900; ++i) normal.push_back("n" + std::to_string(1000 + i));
  for (int i = 0; i < 100; ++i) abnormal.push_back("a" + std::to_string(1000 + i));

  for (const std::uint64_t seed : {1ull, 2ull, 3ull, 99ull, 12345ull}) {
    const auto out = pipeline::rebalance(normal, abnormal, 1.0, seed);
    EXPECT_EQ(out.normal.size(), 100u) << "seed " << seed;
    EXPECT_EQ(out.abnormal, abnormal) << "seed " << seed;
    const auto again = pipeline::rebalance(normal, abnormal, 1.0, seed);
    EXPECT_EQ(again.normal, out.normal) << "seed " << seed;
  }
}
