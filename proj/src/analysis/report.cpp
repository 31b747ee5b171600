#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mla/analysis/analysis.hpp"
#include "mla/error.hpp"
#include "mla/graph/attention_dag.hpp"

namespace mla::analysis {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string render_rows(const Table& t) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_field(cells[i]);
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string group_name(const ExplanationSet& set, std::size_t g) {
  return g < set.group_names.size() ? set.group_names[g] : "group" + std::to_string(g);
}

bool has_two_best(std::span<const ExplanationSet> sets) {
  for (const auto& s : sets) {
    for (const auto& r : s.records) {
      if (r.explanation.ranked.size() < 2) return false;
    }
  }
  return true;
}

// The modal best group per sample as a single-run set.
ExplanationSet modal_set(std::span<const ExplanationSet> runs) {
  ExplanationSet out = runs.front();
  if (runs.size() == 1) return out;
  const auto modes = mode_best_group(runs);
  for (std::size_t i = 0; i < out.records.size(); ++i) out.records[i].explanation.ranked = {modes[i]};
  return out;
}

void distribution_rows(Table& t, const ExplanationSet& set, const std::string& label, Segment segment) {
  const auto dist = best_group_distribution(set, segment);
  std::size_t samples = 0;
  for (const auto& r : set.records) {
    switch (segment.kind) {
      case Segment::Kind::All: ++samples; break;
      case Segment::Kind::Class: samples += r.label == segment.label ? 1 : 0; break;
      case Segment::Kind::Correct: samples += r.correct ? 1 : 0; break;
      case Segment::Kind::Wrong: samples += r.correct ? 0 : 1; break;
    }
  }
  if (!dist) {
    t.rows.push_back({label, "", "", "0"});
    return;
  }
  for (std::size_t g = 0; g < set.groups; ++g) {
    t.rows.push_back({label, group_name(set, g), format_number((*dist)[g]), std::to_string(samples)});
  }
}

}  // namespace

std::string render_table(const Table& table) { return render_rows(table); }

void write_table(const Table& table, const std::filesystem::path& path) { write_text(path, render_rows(table)); }

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

Table heatmap_table(const std::string& name, const kernel::Tensor& matrix,
                    const std::vector<std::string>& group_names) {
  const std::vector<double> scaled = graph::scale_unit(matrix.data());
  Table t;
  t.name = name;
  t.header.push_back("from");
  const std::size_t rows = matrix.rows(), cols = matrix.cols();
  auto label = [&](std::size_t i) { return i < group_names.size() ? group_names[i] : "group" + std::to_string(i); };
  for (std::size_t c = 0; c < cols; ++c) t.header.push_back(label(c));
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<std::string> row{label(r)};
    for (std::size_t c = 0; c < cols; ++c) row.push_back(format_number(scaled[r * cols + c]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<Table> build_report(std::span<const ExplanationSet> sets, const ReportOptions& options) {
  // Runs per method, methods in canonical order, runs by seed.
  std::vector<std::pair<explain::Method, std::vector<ExplanationSet>>> by_method;
  for (explain::Method m : explain::kAllMethods) {
    std::vector<ExplanationSet> runs;
    for (const auto& s : sets) {
      if (s.method == m) runs.push_back(s);
    }
    if (runs.empty()) continue;
    std::stable_sort(runs.begin(), runs.end(),
                     [](const ExplanationSet& a, const ExplanationSet& b) { return a.run_seed < b.run_seed; });
    check_aligned(runs);
    by_method.emplace_back(m, std::move(runs));
  }

  std::vector<Table> tables;
  for (const auto& [method, runs] : by_method) {
    const ExplanationSet modal = modal_set(runs);
    if (modal.records.empty()) continue;
    Table t{"distribution_" + explain::to_string(method), {"segment", "group", "proportion", "samples"}, {}};
    distribution_rows(t, modal, "all", Segment::all());
    const std::vector<std::string>& class_names =
        options.class_names.empty() ? modal.class_names : options.class_names;
    std::size_t classes = class_names.size();
    for (const auto& r : modal.records) classes = std::max(classes, r.label + 1);
    for (std::size_t c = 0; c < classes; ++c) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      distribution_rows(t, modal, "class:" + name, Segment::of_class(c));
    }
    distribution_rows(t, modal, "correct", Segment::correct());
    distribution_rows(t, modal, "wrong", Segment::wrong());
    tables.push_back(std::move(t));
  }

  const bool two_best = has_two_best(sets);
  for (std::size_t top = 1; top <= 2; ++top) {
    if (top == 2 && !two_best) break;
    Table summary{"agreement_top" + std::to_string(top), {"method_a", "method_b", "mean_percent", "pairs"}, {}};
    Table detail{"agreement_runs_top" + std::to_string(top), {"method_a", "method_b", "pair", "percent"}, {}};
    for (const auto& [ma, ra] : by_method) {
      for (const auto& [mb, rb] : by_method) {
        if (ma == mb) continue;
        const std::vector<double> values = run_pair_agreement(ra, rb, top, options.pair_mode);
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        summary.rows.push_back({explain::to_string(ma), explain::to_string(mb), format_number(mean),
                                std::to_string(values.size())});
        for (std::size_t i = 0; i < values.size(); ++i) {
          detail.rows.push_back(
              {explain::to_string(ma), explain::to_string(mb), std::to_string(i), format_number(values[i])});
        }
      }
    }
    if (!summary.rows.empty()) {
      tables.push_back(std::move(summary));
      tables.push_back(std::move(detail));
    }
  }

  Table stab_summary{"stability_summary", {"method", "top", "runs", "min", "q1", "median", "q3", "max"}, {}};
  for (std::size_t top = 1; top <= 2; ++top) {
    if (top == 2 && !two_best) break;
    Table detail{"stability_top" + std::to_string(top), {"method", "sample_id", "percent"}, {}};
    for (const auto& [method, runs] : by_method) {
      if (runs.size() < 2 || runs.front().records.empty()) continue;
      const StabilityResult s = stability(runs, top);
      for (std::size_t i = 0; i < s.percent.size(); ++i) {
        detail.rows.push_back({explain::to_string(method), std::to_string(s.sample_ids[i]), format_number(s.percent[i])});
      }
      stab_summary.rows.push_back({explain::to_string(method), std::to_string(top), std::to_string(runs.size()),
                                   format_number(s.summary.min), format_number(s.summary.q1),
                                   format_number(s.summary.median), format_number(s.summary.q3),
                                   format_number(s.summary.max)});
    }
    if (!detail.rows.empty()) tables.push_back(std::move(detail));
  }
  if (!stab_summary.rows.empty()) tables.push_back(std::move(stab_summary));
  return tables;
}

std::vector<std::string> emit_report(std::span<const Table> tables, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report directory " + dir.string());
  std::vector<std::string> names;
  for (const auto& t : tables) {
    if (t.name.empty() || t.name.find_first_of("/\\") != std::string::npos) {
      throw ValidationError("invalid report table name '" + t.name + "'");
    }
    if (std::find(names.begin(), names.end(), t.name + ".csv") != names.end()) {
      throw ValidationError("duplicate report table '" + t.name + "'");
    }
    names.push_back(t.name + ".csv");
  }
  nlohmann::ordered_json manifest;
  manifest["format"] = "mla-report";
  manifest["version"] = 1;
  manifest["files"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < tables.size(); ++i) {
    write_text(dir / names[i], render_table(tables[i]));
    manifest["files"].push_back({{"file", names[i]}, {"rows", tables[i].rows.size()}});
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return names;
}

}  // namespace mla::analysis
