#include "adeval/benchmark.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "adeval/geometry.hpp"
#include "adeval/parallel.hpp"

namespace adeval::benchmark {

namespace {

using json = nlohmann::json;
using pipeline::QARecord;
using pipeline::TaskKind;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}
std::string pct(double v) { return fmt("%.2f", v); }
std::string frac(double v) { return fmt("%.6f", v); }

char require_letter(const json& j, const char* field) {
  if (!j.is_string() || j.get<std::string>().size() != 1)
    throw ValidationError(std::string(field) + " must be a single-letter string");
  const char c = j.get<std::string>()[0];
  if (c < 'A' || c > 'Z')
    throw ValidationError(std::string(field) + " must be an uppercase letter");
  return c;
}

geometry::BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4)
    throw ValidationError("gt_boxes entries must be [x1, y1, x2, y2]");
  int v[4];
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number_integer())
      throw ValidationError("gt_boxes coordinates must be integers");
    v[i] = j[i].get<int>();
  }
  return {v[0], v[1], v[2], v[3]};
}

// Reads lines, strips a trailing CR, and hands each non-empty line to fn with
// its 1-based number. Used for every JSONL reader in this module.
template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(number, line);
  }
}

[[noreturn]] void fail_at(const std::string& name, std::size_t line, const std::string& msg) {
  throw ValidationError(name + ":" + std::to_string(line) + ": " + msg);
}

struct SampleResult {
  bool missing = false;
  bool unparsable = false;
  bool correct = false;
  double iou = 0.0;
  std::optional<char> choice;
};

}  // namespace

std::string record_to_json(const QARecord& rec) {
  json j;
  j["id"] = rec.id;
  j["task"] = std::string(pipeline::to_string(rec.task));
  j["question"] = rec.question;
  j["query_image"] = rec.query_image;
  j["template_images"] = rec.template_images;
  if (pipeline::is_choice_task(rec.task)) {
    json opts = json::object();
    for (const auto& [letter, text] : rec.options) opts[std::string(1, letter)] = text;
    j["options"] = std::move(opts);
    j["answer"] = std::string(1, rec.answer);
    if (rec.positive_option) j["positive_option"] = std::string(1, *rec.positive_option);
  } else {
    json boxes = json::array();
    for (const auto& b : rec.gt_boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    j["gt_boxes"] = std::move(boxes);
    j["image_size"] = {rec.image_width, rec.image_height};
  }
  return j.dump();
}

QARecord record_from_json(std::string_view line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ValidationError("line is not a JSON object");

  QARecord rec;
  if (!j.contains("id") || !j["id"].is_string())
    throw ValidationError("missing string field \"id\"");
  rec.id = j["id"].get<std::string>();

  if (!j.contains("task") || !j["task"].is_string())
    throw ValidationError("missing string field \"task\"");
  const auto kind = pipeline::task_kind_from_string(j["task"].get<std::string>());
  if (!kind)
    throw ValidationError("unknown task kind \"" + j["task"].get<std::string>() + "\"");
  rec.task = *kind;

  if (j.contains("question")) {
    if (!j["question"].is_string()) throw ValidationError("\"question\" must be a string");
    rec.question = j["question"].get<std::string>();
  }
  if (j.contains("query_image")) {
    if (!j["query_image"].is_string())
      throw ValidationError("\"query_image\" must be a string");
    rec.query_image = j["query_image"].get<std::string>();
  }
  if (j.contains("template_images")) {
    if (!j["template_images"].is_array())
      throw ValidationError("\"template_images\" must be an array");
    for (const json& t : j["template_images"]) {
      if (!t.is_string()) throw ValidationError("\"template_images\" entries must be strings");
      rec.template_images.push_back(t.get<std::string>());
    }
  }
  if (j.contains("options")) {
    if (!j["options"].is_object()) throw ValidationError("\"options\" must be an object");
    for (const auto& [key, value] : j["options"].items()) {
      if (key.size() != 1 || key[0] < 'A' || key[0] > 'Z')
        throw ValidationError("option keys must be single uppercase letters");
      if (!value.is_string()) throw ValidationError("option texts must be strings");
      rec.options[key[0]] = value.get<std::string>();
    }
  }
  if (j.contains("answer")) rec.answer = require_letter(j["answer"], "answer");
  if (j.contains("positive_option"))
    rec.positive_option = require_letter(j["positive_option"], "positive_option");
  if (j.contains("gt_boxes")) {
    if (!j["gt_boxes"].is_array()) throw ValidationError("\"gt_boxes\" must be an array");
    for (const json& b : j["gt_boxes"]) rec.gt_boxes.push_back(box_from_json(b));
  }
  if (j.contains("image_size")) {
    const json& s = j["image_size"];
    if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() ||
        !s[1].is_number_integer())
      throw ValidationError("\"image_size\" must be [width, height]");
    rec.image_width = s[0].get<int>();
    rec.image_height = s[1].get<int>();
  }

  try {
    rec.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  return rec;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);

  Manifest manifest;
  std::map<std::string, std::size_t> seen;  // id -> line
  bool first_content_line = true;
  for_each_line(in, [&](std::size_t number, const std::string& line) {
    // An id-less {"schema_version": N} object may lead the file.
    if (first_content_line) {
      first_content_line = false;
      const json j = json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("schema_version") && !j.contains("id")) {
        if (!j["schema_version"].is_number_integer() ||
            j["schema_version"].get<int>() != 1)
          fail_at(path, number, "unsupported schema_version");
        manifest.schema_version = 1;
        return;
      }
    }
    QARecord rec;
    try {
      rec = record_from_json(line);
    } catch (const ValidationError& e) {
      fail_at(path, number, e.what());
    }
    const auto [it, inserted] = seen.emplace(rec.id, number);
    if (!inserted)
      fail_at(path, number,
              "duplicate id \"" + rec.id + "\" (first seen at line " +
                  std::to_string(it->second) + ")");
    manifest.records.push_back(std::move(rec));
  });
  return manifest;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "{\"schema_version\": " << manifest.schema_version << "}\n";
  for (const QARecord& rec : manifest.records) out << record_to_json(rec) << '\n';
  if (!out.flush()) throw std::runtime_error("write failed: " + path);
}

std::vector<Prediction> read_predictions(std::istream& in, const std::string& stream_name) {
  std::vector<Prediction> out;
  for_each_line(in, [&](std::size_t number, const std::string& line) {
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("output") || !j["output"].is_string())
      fail_at(stream_name, number, "expected {\"id\": ..., \"output\": ...}");
    out.push_back({j["id"].get<std::string>(), j["output"].get<std::string>()});
  });
  return out;
}

PredictionSet load_predictions(const std::string& path) {
  std::vector<Prediction> ordered;
  if (path == "-") {
    ordered = read_predictions(std::cin, "<stdin>");
  } else {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    ordered = read_predictions(in, path);
  }
  PredictionSet set;
  std::map<std::string, std::size_t> count;
  for (const Prediction& p : ordered) ++count[p.id];
  for (Prediction& p : ordered) set.by_id[p.id] = std::move(p.output);
  for (const auto& [id, n] : count)
    if (n > 1)
      set.warnings.push_back("prediction id \"" + id + "\" repeated " +
                             std::to_string(n) + " times; keeping the last");
  return set;
}

void EvalConfig::validate() const {
  if (thresholds.empty()) throw std::invalid_argument("thresholds: empty");
  for (double t : thresholds)
    if (!(t > 0.0) || !(t < 1.0))
      throw std::invalid_argument("thresholds: values must lie in (0, 1)");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()) ||
      std::adjacent_find(thresholds.begin(), thresholds.end()) != thresholds.end())
    throw std::invalid_argument("thresholds: must be strictly ascending");
  if (jobs < 1) throw std::invalid_argument("jobs: must be at least 1");
}

double SubtaskScore::accuracy_percent() const {
  return total == 0 ? 0.0 : (100.0 * static_cast<double>(correct)) /
                                static_cast<double>(total);
}

Report evaluate(const Manifest& manifest, const PredictionSet& predictions,
                const EvalConfig& cfg) {
  cfg.validate();
  const std::size_t n = manifest.records.size();
  std::vector<SampleResult> results(n);

  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const QARecord& rec = manifest.records[i];
    SampleResult r;
    const auto it = predictions.by_id.find(rec.id);
    if (it == predictions.by_id.end()) {
      r.missing = true;
    } else {
      const parsing::SplitResponse split = parsing::split_think_answer(it->second);
      if (pipeline::is_choice_task(rec.task)) {
        r.choice = parsing::extract_choice(split.answer_body, rec.valid_letters());
        if (r.choice)
          r.correct = *r.choice == rec.answer;
        else
          r.unparsable = true;
      } else {
        const auto boxes = parsing::extract_boxes(split.answer_body, cfg.coord_space,
                                                  rec.image_width, rec.image_height);
        if (boxes.empty()) {
          r.unparsable = true;
        } else {
          const auto gt = geometry::GroundTruthRegion::from_boxes(
              rec.gt_boxes, rec.image_width, rec.image_height);
          r.iou = geometry::bbox_mask_iou(boxes, gt, rec.image_width, rec.image_height);
        }
      }
    }
    results[i] = r;
  });

  // Aggregate by ascending sample id so floating-point sums (and therefore the
  // emitted bytes) do not depend on manifest order or the worker count.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return manifest.records[a].id < manifest.records[b].id;
  });

  Report report;
  double iou_sum = 0.0;
  std::size_t loc_total = 0;
  std::vector<std::size_t> at_threshold(cfg.thresholds.size(), 0);
  std::vector<const QARecord*> disc_samples;
  std::vector<std::optional<char>> disc_choices;

  for (std::size_t idx : order) {
    const QARecord& rec = manifest.records[idx];
    const SampleResult& r = results[idx];
    if (r.missing) ++report.missing;
    if (r.unparsable) ++report.unparsable;
    if (pipeline::is_choice_task(rec.task)) {
      SubtaskScore& sc = report.choice[rec.task];
      ++sc.total;
      if (r.correct) ++sc.correct;
      if (rec.task == TaskKind::anomaly_discrimination) {
        disc_samples.push_back(&rec);
        disc_choices.push_back(r.choice);
      }
    } else {
      ++loc_total;
      iou_sum += r.iou;
      for (std::size_t t = 0; t < cfg.thresholds.size(); ++t)
        if (r.iou >= cfg.thresholds[t]) ++at_threshold[t];
    }
  }

  if (!report.choice.empty()) {
    double sum = 0.0;
    for (const auto& [kind, score] : report.choice) sum += score.accuracy_percent();
    report.average_percent = sum / static_cast<double>(report.choice.size());
  }
  if (loc_total > 0) {
    LocalizationScore loc;
    loc.total = loc_total;
    loc.mean_iou = iou_sum / static_cast<double>(loc_total);
    for (std::size_t t = 0; t < cfg.thresholds.size(); ++t)
      loc.acc.emplace_back(cfg.thresholds[t],
                           100.0 * static_cast<double>(at_threshold[t]) /
                               static_cast<double>(loc_total));
    report.localization = std::move(loc);
  }
  const bool all_marked =
      !disc_samples.empty() &&
      std::all_of(disc_samples.begin(), disc_samples.end(),
                  [](const QARecord* s) { return s->positive_option.has_value(); });
  if (all_marked) {
    std::vector<QARecord> samples;
    samples.reserve(disc_samples.size());
    for (const QARecord* s : disc_samples) samples.push_back(*s);
    const F1Result f1 = f1_discrimination(samples, disc_choices);
    report.discrimination = DiscriminationScore{f1.precision, f1.recall, f1.f1};
  }

  for (const auto& [id, output] : predictions.by_id) {
    (void)output;
    const bool known = std::any_of(manifest.records.begin(), manifest.records.end(),
                                   [&](const QARecord& rec) { return rec.id == id; });
    if (!known) report.warnings.push_back("prediction id \"" + id + "\" has no manifest record");
  }
  return report;
}

F1Result f1_discrimination(std::span<const QARecord> samples,
                           std::span<const std::optional<char>> choices) {
  if (samples.size() != choices.size())
    throw std::invalid_argument("f1_discrimination: samples/choices length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].positive_option)
      throw ValidationError("sample \"" + samples[i].id +
                            "\": positive_option required for F1");
    const char pos = *samples[i].positive_option;
    const bool pred_pos = choices[i].has_value() && *choices[i] == pos;
    const bool true_pos = samples[i].answer == pos;
    if (pred_pos && true_pos) ++tp;
    if (pred_pos && !true_pos) ++fp;
    if (!pred_pos && true_pos) ++fn;
  }
  F1Result r;
  r.precision = tp + fp == 0 ? 0.0
                             : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.f1 = r.precision + r.recall == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

std::string render_report(const Report& report) {
  std::vector<std::string> sections;
  if (report.average_percent)
    sections.push_back(
        "  \"average\": {\"scheme\": \"unweighted_mean_over_subtasks\", \"value\": " +
        pct(*report.average_percent) + "}");

  if (!report.choice.empty()) {
    // Keys sorted alphabetically, like every object in this file.
    std::vector<std::pair<std::string, const SubtaskScore*>> rows;
    for (const auto& [kind, score] : report.choice)
      rows.emplace_back(std::string(pipeline::to_string(kind)), &score);
    std::sort(rows.begin(), rows.end());
    std::string s = "  \"choice\": {\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      s += "    \"" + rows[i].first + "\": {\"accuracy\": " +
           pct(rows[i].second->accuracy_percent()) +
           ", \"correct\": " + std::to_string(rows[i].second->correct);
      if (rows[i].first == pipeline::to_string(TaskKind::anomaly_discrimination) &&
          report.discrimination) {
        s += ", \"f1\": " + frac(report.discrimination->f1) +
             ", \"precision\": " + frac(report.discrimination->precision) +
             ", \"recall\": " + frac(report.discrimination->recall);
      }
      s += ", \"total\": " + std::to_string(rows[i].second->total) + "}";
      if (i + 1 < rows.size()) s += ",";
      s += "\n";
    }
    s += "  }";
    sections.push_back(std::move(s));
  }

  if (report.localization) {
    std::string s = "  \"localization\": {\"acc\": {";
    for (std::size_t i = 0; i < report.localization->acc.size(); ++i) {
      if (i > 0) s += ", ";
      s += "\"" + fmt("%g", report.localization->acc[i].first) +
           "\": " + pct(report.localization->acc[i].second);
    }
    s += "}, \"mean_iou\": " + frac(report.localization->mean_iou) +
         ", \"total\": " + std::to_string(report.localization->total) + "}";
    sections.push_back(std::move(s));
  }

  sections.push_back("  \"missing\": " + std::to_string(report.missing));
  sections.push_back("  \"schema_version\": 1");
  sections.push_back("  \"unparsable\": " + std::to_string(report.unparsable));

  std::string out = "{\n";
  for (std::size_t i = 0; i < sections.size(); ++i) {
    out += sections[i];
    if (i + 1 < sections.size()) out += ",";
    out += "\n";
  }
  out += "}\n";
  return out;
}

void emit_report(const Report& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << render_report(report);
  if (!out.flush()) throw std::runtime_error("write failed: " + path);
}

std::string render_summary(const Report& report) {
  std::string out;
  char buf[160];
  if (!report.choice.empty()) {
    std::snprintf(buf, sizeof(buf), "%-26s %8s %14s\n", "subtask", "acc%", "correct/total");
    out += buf;
    for (const TaskKind kind : pipeline::kChoiceTasks) {
      const auto it = report.choice.find(kind);
      if (it == report.choice.end()) continue;
      const std::string ct =
          std::to_string(it->second.correct) + "/" + std::to_string(it->second.total);
      std::snprintf(buf, sizeof(buf), "%-26s %8.2f %14s\n",
                    std::string(pipeline::to_string(kind)).c_str(),
                    it->second.accuracy_percent(), ct.c_str());
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-26s %8.2f\n", "average", *report.average_percent);
    out += buf;
  }
  if (report.discrimination) {
    std::snprintf(buf, sizeof(buf),
                  "anomaly discrimination F1: precision %.6f  recall %.6f  F1 %.6f\n",
                  report.discrimination->precision, report.discrimination->recall,
                  report.discrimination->f1);
    out += buf;
  }
  if (report.localization) {
    std::snprintf(buf, sizeof(buf), "mIoU(%%): %.2f", report.localization->mean_iou * 100.0);
    out += buf;
    for (const auto& [threshold, percent] : report.localization->acc) {
      std::snprintf(buf, sizeof(buf), "  ACC@%g: %.2f", threshold, percent);
      out += buf;
    }
    out += "\n";
  }
  std::snprintf(buf, sizeof(buf), "missing: %zu  unparsable: %zu\n", report.missing,
                report.unparsable);
  out += buf;
  return out;
}

}  // namespace adeval::benchmark
