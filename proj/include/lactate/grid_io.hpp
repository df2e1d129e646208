#pragma once

// AlignedGrid interchange format:
//   <name>.json  metadata (format version, bin width, feature dictionary, stays)
//   <name>.csv   wide table: stay_id, bin_index, <feature>..., <feature>__mask...
//                (+ <feature>__orig_mask... for imputed grids)
// Values use 17 significant digits; missing cells are empty.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "lactate/csv.hpp"
#include "lactate/datamodel.hpp"

namespace lactate {

inline constexpr int kGridFormatVersion = 1;

namespace detail {

inline nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline double number_or(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const FeatureSpec& f) {
  return {{"name", f.name},
          {"aliases", f.aliases},
          {"valid_min", detail::finite_or_null(f.valid_min)},
          {"valid_max", detail::finite_or_null(f.valid_max)},
          {"kind", f.kind == FeatureKind::Numeric ? "numeric" : "categorical"}};
}

inline FeatureSpec feature_from_json(const nlohmann::json& j) {
  FeatureSpec f;
  f.name = j.at("name").get<std::string>();
  if (j.contains("aliases")) f.aliases = j.at("aliases").get<std::vector<std::string>>();
  f.valid_min = detail::number_or(j, "valid_min", -std::numeric_limits<double>::infinity());
  f.valid_max = detail::number_or(j, "valid_max", std::numeric_limits<double>::infinity());
  const auto kind = j.value("kind", std::string("numeric"));
  if (kind == "numeric") f.kind = FeatureKind::Numeric;
  else if (kind == "categorical") f.kind = FeatureKind::Categorical;
  else throw ConfigError("feature '" + f.name + "': unknown kind '" + kind + "'");
  return f;
}

/// Reads a feature dictionary file: {"features": [...]} or a bare array.
inline FeatureDictionary load_feature_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feature dictionary '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const auto& arr = j.is_array() ? j : j.at("features");
  std::vector<FeatureSpec> specs;
  for (const auto& f : arr) specs.push_back(feature_from_json(f));
  return FeatureDictionary(std::move(specs));
}

inline nlohmann::json to_json(const StayInfo& s, Eigen::Index n_bins) {
  return {{"patient_id", s.patient_id},
          {"stay_id", s.stay_id},
          {"n_bins", n_bins},
          {"age", detail::finite_or_null(s.statics.age)},
          {"gender", s.statics.gender},
          {"ethnicity", s.statics.ethnicity},
          {"admission_weight", detail::finite_or_null(s.statics.admission_weight)},
          {"admission_dx", s.statics.admission_dx}};
}

inline nlohmann::json grid_metadata(const AlignedGrid& grid) {
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : grid.features) feats.push_back(to_json(f));
  nlohmann::json stays = nlohmann::json::array();
  bool imputed = false;
  for (std::size_t i = 0; i < grid.stays.size(); ++i) {
    stays.push_back(to_json(grid.stays[i], grid.data[i].n_bins()));
    imputed = imputed || grid.data[i].original_mask.has_value();
  }
  return {{"format_version", kGridFormatVersion},
          {"bin_width_minutes", grid.bin_width_minutes},
          {"imputed", imputed},
          {"features", feats},
          {"stays", stays}};
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string grid_csv(const AlignedGrid& grid, bool values_only, const std::vector<Matrix>* override_values) {
  std::ostringstream out;
  const auto names = grid.feature_names();
  bool imputed = false;
  for (const auto& d : grid.data) imputed = imputed || d.original_mask.has_value();

  csv::Row header{"stay_id", "bin_index"};
  for (const auto& n : names) header.push_back(n);
  if (!values_only) {
    for (const auto& n : names) header.push_back(n + "__mask");
    if (imputed)
      for (const auto& n : names) header.push_back(n + "__orig_mask");
  }
  csv::write_row(out, header);

  csv::Row row;
  for (std::size_t s = 0; s < grid.data.size(); ++s) {
    const auto& d = grid.data[s];
    const Matrix& vals = override_values ? (*override_values)[s] : d.values;
    for (Eigen::Index b = 0; b < d.n_bins(); ++b) {
      row.clear();
      row.push_back(grid.stays[s].stay_id);
      row.push_back(std::to_string(b));
      for (Eigen::Index f = 0; f < vals.rows(); ++f) row.push_back(csv::format_double(vals(f, b)));
      if (!values_only) {
        for (Eigen::Index f = 0; f < d.mask.rows(); ++f) row.push_back(d.mask(f, b) ? "1" : "0");
        if (imputed) {
          const auto& om = d.observed();
          for (Eigen::Index f = 0; f < om.rows(); ++f) row.push_back(om(f, b) ? "1" : "0");
        }
      }
      csv::write_row(out, row);
    }
  }
  return out.str();
}

}  // namespace detail

/// Writes <dir>/<name>.json and <dir>/<name>.csv.
inline void write_grid(const AlignedGrid& grid, const std::filesystem::path& dir, const std::string& name = "grid") {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / (name + ".json"), grid_metadata(grid).dump(2) + "\n");
  detail::write_text(dir / (name + ".csv"), detail::grid_csv(grid, false, nullptr));
}

/// Ground-truth sidecar: same layout as the values part of the grid CSV.
inline void write_truth(const AlignedGrid& grid, const std::vector<Matrix>& truth, const std::filesystem::path& path) {
  if (truth.size() != grid.data.size()) throw std::invalid_argument("truth/grid stay count mismatch");
  detail::write_text(path, detail::grid_csv(grid, true, &truth));
}

namespace detail {

struct ParsedCsv {
  std::vector<std::string> feature_names;
  std::map<std::string, std::vector<std::pair<long long, csv::Row>>> rows_by_stay;
  csv::Row header;
};

}  // namespace detail

/// Reads <dir>/<name>.json + <dir>/<name>.csv.
inline AlignedGrid read_grid(const std::filesystem::path& dir, const std::string& name = "grid") {
  const auto meta_path = dir / (name + ".json");
  std::ifstream in(meta_path);
  if (!in) throw DataError("cannot open grid metadata '" + meta_path.string() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  if (meta.value("format_version", 0) != kGridFormatVersion)
    throw DataError(meta_path.string() + ": unsupported format_version");

  AlignedGrid grid;
  grid.bin_width_minutes = meta.at("bin_width_minutes").get<int>();
  for (const auto& f : meta.at("features")) grid.features.push_back(feature_from_json(f));
  const auto nf = grid.n_features();

  std::vector<Eigen::Index> n_bins;
  std::map<std::string, std::size_t> stay_pos;
  for (const auto& s : meta.at("stays")) {
    StayInfo info;
    info.patient_id = s.at("patient_id").get<std::string>();
    info.stay_id = s.at("stay_id").get<std::string>();
    info.statics.age = detail::number_or(s, "age", kMissing);
    info.statics.gender = s.value("gender", std::string());
    info.statics.ethnicity = s.value("ethnicity", std::string());
    info.statics.admission_weight = detail::number_or(s, "admission_weight", kMissing);
    info.statics.admission_dx = s.value("admission_dx", std::string());
    if (!stay_pos.emplace(info.stay_id, grid.stays.size()).second)
      throw DataError("duplicate stay_id '" + info.stay_id + "' in grid metadata");
    grid.stays.push_back(std::move(info));
    n_bins.push_back(s.at("n_bins").get<Eigen::Index>());
  }
  const bool imputed = meta.value("imputed", false);
  for (auto nb : n_bins) {
    StayGrid d;
    d.values = Matrix::Constant(nf, nb, kMissing);
    d.mask = MaskMatrix::Constant(nf, nb, false);
    if (imputed) d.original_mask = MaskMatrix::Constant(nf, nb, false);
    grid.data.push_back(std::move(d));
  }

  const auto csv_path = (dir / (name + ".csv")).string();
  auto rows = csv::read_file(csv_path);
  if (rows.empty()) throw DataError(csv_path + ": missing header");
  const auto& header = rows.front();
  const std::size_t expected = 2 + static_cast<std::size_t>(nf) * (imputed ? 3 : 2);
  if (header.size() != expected) throw DataError(csv_path + ": header does not match metadata");
  for (Eigen::Index f = 0; f < nf; ++f) {
    const auto& fname = grid.features[static_cast<std::size_t>(f)].name;
    if (header[2 + f] != fname || header[2 + nf + f] != fname + "__mask")
      throw DataError(csv_path + ": unexpected column order near '" + fname + "'");
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != expected) throw DataError(csv_path + ": row " + std::to_string(r) + " has wrong width");
    auto it = stay_pos.find(row[0]);
    if (it == stay_pos.end()) throw DataError(csv_path + ": unknown stay '" + row[0] + "'");
    auto& d = grid.data[it->second];
    const auto b = csv::parse_int(row[1]);
    if (!b || *b < 0 || *b >= d.n_bins()) throw DataError(csv_path + ": bad bin_index on row " + std::to_string(r));
    for (Eigen::Index f = 0; f < nf; ++f) {
      const auto& cell = row[2 + f];
      if (cell.empty()) {
        d.values(f, *b) = kMissing;
      } else {
        auto v = csv::parse_double(cell);
        if (!v) throw DataError(csv_path + ": unparseable value '" + cell + "'");
        d.values(f, *b) = *v;
      }
      d.mask(f, *b) = row[2 + nf + f] == "1";
      if (imputed) (*d.original_mask)(f, *b) = row[2 + 2 * nf + f] == "1";
    }
  }
  grid.validate();
  return grid;
}

/// Reads a truth sidecar written by write_truth, shaped like `grid`.
inline std::vector<Matrix> read_truth(const AlignedGrid& grid, const std::filesystem::path& path) {
  std::map<std::string, std::size_t> pos;
  std::vector<Matrix> truth;
  for (std::size_t s = 0; s < grid.stays.size(); ++s) {
    pos[grid.stays[s].stay_id] = s;
    truth.push_back(Matrix::Constant(grid.n_features(), grid.data[s].n_bins(), kMissing));
  }
  auto rows = csv::read_file(path.string());
  if (rows.empty() || rows.front().size() != 2 + grid.features.size())
    throw DataError(path.string() + ": header does not match grid");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != rows.front().size()) throw DataError(path.string() + ": ragged row");
    auto it = pos.find(row[0]);
    const auto b = csv::parse_int(row[1]);
    if (it == pos.end() || !b || *b < 0 || *b >= truth[it->second].cols())
      throw DataError(path.string() + ": row " + std::to_string(r) + " does not match grid");
    for (std::size_t f = 0; f < grid.features.size(); ++f) {
      auto v = csv::parse_double(row[2 + f]);
      truth[it->second](static_cast<Eigen::Index>(f), *b) = v ? *v : kMissing;
    }
  }
  return truth;
}

}  // namespace lactate
