// adeval: batch evaluation, reward scoring, and dataset plumbing in one binary.
// Exit codes: 0 success, 1 check failure, 2 input or validation error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adeval/benchmark.hpp"
#include "adeval/encoder.hpp"
#include "adeval/geometry.hpp"
#include "adeval/pipeline.hpp"
#include "adeval/rewards.hpp"

namespace fs = std::filesystem;
using namespace adeval;

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Exact decimal round-trip; reward totals must not lose precision in transit.
std::string fmt_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

parsing::CoordSpace parse_space(const std::string& name) {
  const auto space = parsing::coord_space_from_string(name);
  if (!space) throw std::invalid_argument("unknown coordinate space: " + name);
  return *space;
}

// All *.png under root, as sorted generic relative paths.
std::vector<std::string> png_files(const fs::path& root) {
  if (!fs::is_directory(root))
    throw benchmark::ValidationError("not a directory: " + root.string());
  std::vector<std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      out.push_back(fs::relative(entry.path(), root).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw benchmark::ValidationError("cannot open " + path + " for writing");
  return out;
}

struct EvalArgs {
  std::string manifest, predictions, out, coord_space = "absolute";
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.5};
  int jobs = 1;
};

int run_eval(const EvalArgs& args) {
  benchmark::EvalConfig cfg;
  cfg.coord_space = parse_space(args.coord_space);
  cfg.thresholds = args.thresholds;
  cfg.jobs = args.jobs;
  cfg.validate();

  const benchmark::Manifest manifest = benchmark::load_manifest(args.manifest);
  const benchmark::PredictionSet predictions = benchmark::load_predictions(args.predictions);
  for (const std::string& w : predictions.warnings) std::cerr << "warning: " << w << "\n";

  const benchmark::Report report = benchmark::evaluate(manifest, predictions, cfg);
  for (const std::string& w : report.warnings) std::cerr << "warning: " << w << "\n";

  if (!args.out.empty()) benchmark::emit_report(report, args.out);
  std::cout << benchmark::render_summary(report);
  return 0;
}

struct RewardArgs {
  std::string manifest, responses = "-", out = "-";
  std::string coord_space = "absolute";
  double lambda = 0.1;
};

int run_reward(const RewardArgs& args) {
  rewards::RewardConfig cfg;
  cfg.lambda = args.lambda;
  cfg.coord_space = parse_space(args.coord_space);
  cfg.validate();

  const benchmark::Manifest manifest = benchmark::load_manifest(args.manifest);
  std::map<std::string, const pipeline::QARecord*> by_id;
  for (const pipeline::QARecord& rec : manifest.records) by_id[rec.id] = &rec;

  std::vector<benchmark::Prediction> responses;
  if (args.responses == "-") {
    responses = benchmark::read_predictions(std::cin, "<stdin>");
  } else {
    std::ifstream in(args.responses);
    if (!in) throw benchmark::ValidationError("cannot open " + args.responses);
    responses = benchmark::read_predictions(in, args.responses);
  }

  std::ofstream file;
  if (args.out != "-") file = open_out(args.out);
  std::ostream& out = args.out == "-" ? std::cout : file;

  for (const benchmark::Prediction& resp : responses) {
    const auto it = by_id.find(resp.id);
    if (it == by_id.end()) {
      out << "{\"error\": \"no manifest record\", \"id\": \"" << resp.id << "\"}\n";
      continue;
    }
    const rewards::RewardBreakdown b = rewards::total_reward(*it->second, resp.output, cfg);
    out << "{\"format\": " << b.format << ", \"id\": \"" << resp.id
        << "\", \"task\": " << fmt_exact(b.task) << ", \"total\": " << fmt_exact(b.total)
        << "}\n";
  }
  if (!out.flush()) throw std::runtime_error("write failed");
  return 0;
}

struct GenGtArgs {
  std::string masks, out;
};

int run_gen_gt(const GenGtArgs& args) {
  const fs::path root(args.masks);
  const std::vector<std::string> files = png_files(root);
  std::ofstream out = open_out(args.out);

  std::size_t empty_skipped = 0, undecodable = 0, written = 0;
  for (const std::string& rel : files) {
    geometry::BinaryMask mask(1, 1);
    try {
      mask = geometry::mask_from_png((root / rel).string());
    } catch (const std::runtime_error& e) {
      std::cerr << "warning: " << e.what() << ", skipped\n";
      ++undecodable;
      continue;
    }
    if (mask.empty()) {
      std::cerr << "warning: empty mask " << rel << ", skipped\n";
      ++empty_skipped;
      continue;
    }
    const pipeline::QARecord rec = pipeline::build_loc_record(mask, rel, {}, rel);
    out << benchmark::record_to_json(rec) << '\n';
    ++written;
  }
  if (!out.flush()) throw std::runtime_error("write failed: " + args.out);
  std::cerr << written << " records, " << empty_skipped << " empty masks skipped, "
            << undecodable << " undecodable\n";
  return 0;
}

struct PairArgs {
  std::string queries, pool, out;
};

int run_pair_templates(const PairArgs& args) {
  const fs::path pool_root(args.pool);
  std::vector<pipeline::PoolEntry> pool;
  for (const std::string& rel : png_files(pool_root))
    pool.push_back({rel, pipeline::descriptor_from_file((pool_root / rel).string())});
  if (pool.empty()) throw benchmark::ValidationError("empty pool: " + args.pool);

  const fs::path query_root(args.queries);
  const std::vector<std::string> queries = png_files(query_root);
  if (queries.empty()) throw benchmark::ValidationError("no queries in " + args.queries);

  std::ofstream out = open_out(args.out);
  for (const std::string& rel : queries) {
    const auto vec = pipeline::descriptor_from_file((query_root / rel).string());
    const pipeline::RetrievalResult r = pipeline::nearest(vec, pool);
    out << "{\"distance\": " << fmt6(r.distance) << ", \"query\": \"" << rel
        << "\", \"template\": \"" << r.id << "\"}\n";
  }
  if (!out.flush()) throw std::runtime_error("write failed: " + args.out);
  return 0;
}

struct EncoderCheckArgs {
  std::uint64_t seed = 1;
  std::size_t seeds = 10;
  std::size_t dim = 8, heads = 1, tokens = 4, grid_rows = 8, grid_cols = 8;
  std::size_t images = 3, patches = 4;
  double epsilon = 1e-5;
  double corrupt = 0.0;  // test hook: offset added to one analytic gradient entry
};

int run_encoder_check(const EncoderCheckArgs& args) {
  encoder::EncoderConfig cfg;
  cfg.dim = args.dim;
  cfg.heads = args.heads;
  cfg.tokens = args.tokens;
  cfg.grid_rows = args.grid_rows;
  cfg.grid_cols = args.grid_cols;
  cfg.validate();

  std::map<std::string, double> worst;
  double max_error = 0.0;
  for (std::size_t i = 0; i < args.seeds; ++i) {
    const auto result = encoder::grad_check(args.seed + i, cfg, args.images,
                                            args.patches, args.epsilon, args.corrupt);
    for (const auto& [group, err] : result.per_group)
      worst[group] = std::max(worst[group], err);
    max_error = std::max(max_error, result.max_error);
  }
  for (const auto& [group, err] : worst)
    std::printf("%-10s %.3e\n", group.c_str(), err);
  const bool ok = max_error < 1e-5;
  std::printf("max relative error: %.3e (threshold 1e-05) %s\n", max_error,
              ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

struct EncoderForwardArgs {
  std::string input, out;
  std::uint64_t seed = 1;
  std::size_t heads = 1, tokens = 100, grid_rows = 100, grid_cols = 100;
};

int run_encoder_forward(const EncoderForwardArgs& args) {
  const encoder::Tensor features = encoder::load_tensor(args.input);
  if (!features.is_matrix())
    throw benchmark::ValidationError("input tensor must be rank 2 (patches x dim)");
  encoder::EncoderConfig cfg;
  cfg.dim = features.cols();
  cfg.heads = args.heads;
  cfg.tokens = args.tokens;
  cfg.grid_rows = args.grid_rows;
  cfg.grid_cols = args.grid_cols;
  cfg.validate();

  const auto params = encoder::EncoderParams::gaussian_init(cfg, args.seed);
  const encoder::Tensor input[] = {features};
  const encoder::PackedSequence packed = encoder::stream_forward(input, params, cfg);
  encoder::save_tensor(args.out, packed.data);
  std::printf("packed %zu rows x %zu cols (%zu base + %zu comparison)\n",
              packed.data.rows(), packed.data.cols(), features.rows(), cfg.tokens);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anomaly-detection evaluation toolkit"};
  app.require_subcommand(1);

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "score a predictions file against a manifest");
  eval->add_option("--manifest", eval_args.manifest, "manifest JSONL")->required();
  eval->add_option("--predictions", eval_args.predictions, "predictions JSONL")->required();
  eval->add_option("--out", eval_args.out, "report JSON path");
  eval->add_option("--coord-space", eval_args.coord_space, "box coordinate space")
      ->check(CLI::IsMember({"absolute", "norm_1000", "norm_unit"}));
  eval->add_option("--thresholds", eval_args.thresholds, "IoU thresholds, ascending")
      ->delimiter(',');
  eval->add_option("--jobs", eval_args.jobs, "worker threads");

  RewardArgs reward_args;
  CLI::App* reward = app.add_subcommand("reward", "score responses for RL training");
  reward->add_option("--manifest", reward_args.manifest, "manifest JSONL")->required();
  reward->add_option("--responses", reward_args.responses, "responses JSONL, - for stdin");
  reward->add_option("--out", reward_args.out, "rewards JSONL, - for stdout");
  reward->add_option("--lambda", reward_args.lambda, "format reward weight");
  reward->add_option("--coord-space", reward_args.coord_space, "box coordinate space")
      ->check(CLI::IsMember({"absolute", "norm_1000", "norm_unit"}));

  GenGtArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-gt", "build bbox records from mask images");
  gen->add_option("--masks", gen_args.masks, "directory of mask PNGs")->required();
  gen->add_option("--out", gen_args.out, "manifest fragment path")->required();

  PairArgs pair_args;
  CLI::App* pair = app.add_subcommand("pair-templates", "nearest normal template per query");
  pair->add_option("--queries", pair_args.queries, "directory of query PNGs")->required();
  pair->add_option("--pool", pair_args.pool, "directory of normal PNGs")->required();
  pair->add_option("--out", pair_args.out, "pairs JSONL path")->required();

  EncoderCheckArgs check_args;
  CLI::App* check = app.add_subcommand("encoder-check", "verify analytic gradients");
  check->add_option("--seed", check_args.seed, "first seed");
  check->add_option("--seeds", check_args.seeds, "number of seeds");
  check->add_option("--dim", check_args.dim, "feature dimension");
  check->add_option("--heads", check_args.heads, "attention heads");
  check->add_option("--tokens", check_args.tokens, "comparison tokens");
  check->add_option("--grid-rows", check_args.grid_rows, "patch grid rows");
  check->add_option("--grid-cols", check_args.grid_cols, "patch grid cols");
  check->add_option("--images", check_args.images, "images in the stream");
  check->add_option("--patches", check_args.patches, "patches per image");
  check->add_option("--epsilon", check_args.epsilon, "finite-difference step");
  check->add_option("--corrupt", check_args.corrupt, "test hook: corrupt one gradient entry");

  EncoderForwardArgs fwd_args;
  CLI::App* fwd = app.add_subcommand("encoder-forward", "run one image through the encoder");
  fwd->add_option("--input", fwd_args.input, "feature tensor JSON (patches x dim)")->required();
  fwd->add_option("--out", fwd_args.out, "output tensor JSON")->required();
  fwd->add_option("--seed", fwd_args.seed, "parameter init seed");
  fwd->add_option("--heads", fwd_args.heads, "attention heads");
  fwd->add_option("--tokens", fwd_args.tokens, "comparison tokens");
  fwd->add_option("--grid-rows", fwd_args.grid_rows, "patch grid rows");
  fwd->add_option("--grid-cols", fwd_args.grid_cols, "patch grid cols");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (eval->parsed()) return run_eval(eval_args);
    if (reward->parsed()) return run_reward(reward_args);
    if (gen->parsed()) return run_gen_gt(gen_args);
    if (pair->parsed()) return run_pair_templates(pair_args);
    if (check->parsed()) return run_encoder_check(check_args);
    if (fwd->parsed()) return run_encoder_forward(fwd_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
