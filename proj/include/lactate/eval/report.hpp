#pragma once

// Result files:
//   results.csv      one row per (imputer, model, metric): mean, std, status
//   folds.csv        one row per (imputer, model, fold) with all metrics
//   predictions.csv  stay-level predictions for audit
// and the report rendered from them:
//   report.md        metric-major tables, best cell in bold
//   plot.csv         long format: metric, imputer, model, fold, value

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lactate/csv.hpp"
#include "lactate/eval/experiment.hpp"

namespace lactate::eval {

namespace detail {
inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}
}  // namespace detail

inline std::string results_csv(const ResultTable& t) {
  std::ostringstream out;
  csv::write_row(out, {"imputer", "model", "metric", "mean", "std", "folds", "status", "note"});
  for (const auto& c : t.cells)
    for (auto m : kMetrics) {
      const bool ok = c.ok();
      csv::write_row(out, {c.imputer, c.model, to_string(m), ok ? csv::format_double(c.mean(m)) : "",
                           ok ? csv::format_double(c.std(m)) : "", std::to_string(c.folds.size()), ok ? "ok" : "failed",
                           ok ? "" : c.failure()});
    }
  return out.str();
}

inline std::string folds_csv(const ResultTable& t) {
  std::ostringstream out;
  csv::write_row(out, {"imputer", "model", "fold", "n_train", "n_test", "status", "MAE", "RMSE", "R2", "error"});
  for (const auto& c : t.cells)
    for (std::size_t k = 0; k < c.folds.size(); ++k) {
      const auto& f = c.folds[k];
      csv::write_row(out, {c.imputer, c.model, std::to_string(k + 1), std::to_string(f.n_train), std::to_string(f.n_test),
                           f.ok ? "ok" : "failed", f.ok ? csv::format_double(f.mae) : "",
                           f.ok ? csv::format_double(f.rmse) : "", f.ok ? csv::format_double(f.r2) : "", f.error});
    }
  return out.str();
}

inline std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::ostringstream out;
  csv::write_row(out, {"imputer", "model", "fold", "stay_id", "t_index", "y_true", "y_pred"});
  for (const auto& r : rows)
    csv::write_row(out, {r.imputer, r.model, std::to_string(r.fold), r.stay_id, std::to_string(r.t_index),
                         csv::format_double(r.y_true), csv::format_double(r.y_pred)});
  return out.str();
}

inline void write_results(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "results.csv", results_csv(r.table));
  detail::write_file(dir / "folds.csv", folds_csv(r.table));
  detail::write_file(dir / "predictions.csv", predictions_csv(r.predictions));
}

/// Rebuilds a ResultTable from folds.csv. Imputer and model order follow
/// first appearance.
inline ResultTable read_results(const std::filesystem::path& dir) {
  const auto path = dir / "folds.csv";
  if (!std::filesystem::exists(path)) throw DataError("no results in " + dir.string() + " (folds.csv missing)");
  const auto rows = csv::read_file(path.string());
  if (rows.empty()) throw DataError(path.string() + ": empty file");
  const auto& h = rows.front();
  auto col = [&](const char* name) {
    const auto c = csv::column_index(h, name);
    if (!c) throw DataError(path.string() + ": missing column '" + name + "'");
    return *c;
  };
  const auto ci = col("imputer"), cm = col("model"), cf = col("fold"), cs = col("status"), ca = col("MAE"),
             cr = col("RMSE"), c2 = col("R2"), ce = col("error"), ctr = col("n_train"), cte = col("n_test");
  ResultTable t;
  std::map<std::pair<std::string, std::string>, Cell> cells;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != h.size()) throw DataError(path.string() + ": row " + std::to_string(r + 1) + " has the wrong width");
    if (std::find(t.imputers.begin(), t.imputers.end(), row[ci]) == t.imputers.end()) t.imputers.push_back(row[ci]);
    if (std::find(t.models.begin(), t.models.end(), row[cm]) == t.models.end()) t.models.push_back(row[cm]);
    auto& cell = cells[{row[ci], row[cm]}];
    cell.imputer = row[ci];
    cell.model = row[cm];
    const auto fold = csv::parse_int(row[cf]);
    if (!fold || *fold < 1) throw DataError(path.string() + ": bad fold index on row " + std::to_string(r + 1));
    if (cell.folds.size() < static_cast<std::size_t>(*fold)) cell.folds.resize(static_cast<std::size_t>(*fold));
    FoldScore& f = cell.folds[static_cast<std::size_t>(*fold - 1)];
    f.ok = row[cs] == "ok";
    f.error = row[ce];
    f.n_train = static_cast<std::size_t>(csv::parse_int(row[ctr]).value_or(0));
    f.n_test = static_cast<std::size_t>(csv::parse_int(row[cte]).value_or(0));
    if (f.ok) {
      const auto a = csv::parse_double(row[ca]), b = csv::parse_double(row[cr]), c = csv::parse_double(row[c2]);
      if (!a || !b || !c) throw DataError(path.string() + ": unparseable metric on row " + std::to_string(r + 1));
      f.mae = *a;
      f.rmse = *b;
      f.r2 = *c;
    }
  }
  for (const auto& i : t.imputers)
    for (const auto& m : t.models) {
      auto it = cells.find({i, m});
      if (it != cells.end()) {
        for (auto& f : it->second.folds)
          if (!f.ok && f.error.empty()) f.error = "missing fold";
        t.cells.push_back(std::move(it->second));
      } else {
        t.cells.push_back(Cell{i, m, {}});
      }
    }
  return t;
}

inline std::string format_cell(double mean, double sd) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << mean << " ± " << sd;
  return s.str();
}

/// Metric-major Markdown tables (imputer rows, model columns). The best
/// successful cell per metric is bold; failed or absent cells show "—" with
/// a note below the table.
inline std::string render_markdown(const ResultTable& t) {
  std::ostringstream out;
  out << "# Results\n\n";
  out << "Mean ± standard deviation over cross-validation folds.\n";
  for (auto metric : kMetrics) {
    const Cell* best = nullptr;
    for (const auto& c : t.cells) {
      if (!c.ok()) continue;
      const double v = c.mean(metric);
      if (!best || (lower_is_better(metric) ? v < best->mean(metric) : v > best->mean(metric))) best = &c;
    }
    out << "\n## " << to_string(metric) << (lower_is_better(metric) ? " (lower is better)" : " (higher is better)")
        << "\n\n| Imputer |";
    for (const auto& m : t.models) out << ' ' << m << " |";
    out << "\n|---|";
    for (std::size_t m = 0; m < t.models.size(); ++m) out << "---|";
    out << '\n';
    std::vector<std::string> notes;
    for (std::size_t i = 0; i < t.imputers.size(); ++i) {
      out << "| " << t.imputers[i] << " |";
      for (std::size_t m = 0; m < t.models.size(); ++m) {
        const Cell& c = t.at(i, m);
        if (!c.ok()) {
          notes.push_back(c.imputer + " + " + c.model + ": " + (c.folds.empty() ? "no results" : c.failure()));
          out << " — [" << notes.size() << "] |";
          continue;
        }
        const auto text = format_cell(c.mean(metric), c.std(metric));
        out << ' ' << (&c == best ? "**" + text + "**" : text) << " |";
      }
      out << '\n';
    }
    if (!notes.empty()) {
      out << '\n';
      for (std::size_t n = 0; n < notes.size(); ++n) out << "[" << n + 1 << "] failed: " << notes[n] << "  \n";
    }
  }
  return out.str();
}

inline std::string plot_csv(const ResultTable& t) {
  std::ostringstream out;
  csv::write_row(out, {"metric", "imputer", "model", "fold", "value"});
  for (auto metric : kMetrics)
    for (const auto& c : t.cells)
      for (std::size_t k = 0; k < c.folds.size(); ++k)
        if (c.folds[k].ok)
          csv::write_row(out, {to_string(metric), c.imputer, c.model, std::to_string(k + 1), csv::format_double(c.folds[k].get(metric))});
  return out.str();
}

inline void write_report(const ResultTable& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "report.md", render_markdown(t));
  detail::write_file(dir / "plot.csv", plot_csv(t));
}

}  // namespace lactate::eval
