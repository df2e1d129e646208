#pragma once

// Raw ICU extracts -> AlignedGrid: schema-driven CSV loading, alias
// canonicalization, cohort selection, admission-anchored binning with
// last-record-wins, and valid-range outlier masking.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lactate/csv.hpp"
#include "lactate/datamodel.hpp"
#include "lactate/grid_io.hpp"

namespace lactate::ingest {

// ---------------------------------------------------------------------------
// Schema

/// Column bindings for one event table. Long tables carry a feature-name
/// column and a value column; wide tables carry one column per source feature.
struct TableBinding {
  std::string table;
  std::string file;
  std::string stay_column;
  std::string patient_column;  // optional
  std::string offset_column;
  std::string feature_column;  // long format
  std::string value_column;    // long format
  std::vector<std::string> value_columns;  // wide format

  bool wide() const { return feature_column.empty(); }
};

struct PatientBinding {
  std::string file = "patient.csv";
  std::string stay_column = "patientunitstayid";
  std::string patient_column = "uniquepid";
  std::string age_column = "age";
  std::string gender_column = "gender";
  std::string ethnicity_column = "ethnicity";
  std::string weight_column = "admissionweight";
  std::string dx_column = "apacheadmissiondx";
  std::string los_column = "unitdischargeoffset";
};

struct SchemaMap {
  PatientBinding patient;
  std::vector<TableBinding> tables;
  /// source name -> canonical name
  std::map<std::string, std::string> aliases;

  void add_alias(const std::string& source, const std::string& canonical) {
    auto [it, inserted] = aliases.emplace(source, canonical);
    if (!inserted && it->second != canonical)
      throw ConfigError("alias '" + source + "' maps to both '" + it->second + "' and '" + canonical + "'");
  }

  /// Folds the dictionary's alias lists into the alias table.
  void merge_aliases(const FeatureDictionary& dict) {
    for (const auto& f : dict.specs()) {
      add_alias(f.name, f.name);
      for (const auto& a : f.aliases) add_alias(a, f.name);
    }
  }

  const TableBinding* table_for_file(const std::string& filename) const {
    for (const auto& t : tables)
      if (t.file == filename) return &t;
    return nullptr;
  }
};

inline SchemaMap schema_from_json(const nlohmann::json& j) {
  SchemaMap s;
  if (j.contains("patient")) {
    const auto& p = j.at("patient");
    auto& b = s.patient;
    b.file = p.value("file", b.file);
    b.stay_column = p.value("stay_column", b.stay_column);
    b.patient_column = p.value("patient_column", b.patient_column);
    b.age_column = p.value("age_column", b.age_column);
    b.gender_column = p.value("gender_column", b.gender_column);
    b.ethnicity_column = p.value("ethnicity_column", b.ethnicity_column);
    b.weight_column = p.value("weight_column", b.weight_column);
    b.dx_column = p.value("dx_column", b.dx_column);
    b.los_column = p.value("los_column", b.los_column);
  }
  for (const auto& t : j.value("tables", nlohmann::json::array())) {
    TableBinding b;
    b.table = t.at("table").get<std::string>();
    b.file = t.value("file", b.table + ".csv");
    b.stay_column = t.at("stay_column").get<std::string>();
    b.patient_column = t.value("patient_column", std::string());
    b.offset_column = t.at("offset_column").get<std::string>();
    b.feature_column = t.value("feature_column", std::string());
    b.value_column = t.value("value_column", std::string());
    if (t.contains("value_columns")) b.value_columns = t.at("value_columns").get<std::vector<std::string>>();
    if (b.wide() && b.value_columns.empty())
      throw ConfigError("table '" + b.table + "': needs feature_column/value_column or value_columns");
    if (!b.wide() && b.value_column.empty())
      throw ConfigError("table '" + b.table + "': long format needs value_column");
    s.tables.push_back(std::move(b));
  }
  // {"canonical": ["source", ...]}
  const auto aliases = j.value("aliases", nlohmann::json::object());
  for (const auto& [canonical, sources] : aliases.items()) {
    s.add_alias(canonical, canonical);
    for (const auto& src : sources) s.add_alias(src.get<std::string>(), canonical);
  }
  return s;
}

inline SchemaMap load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema '" + path.string() + "'");
  try {
    return schema_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Loading

struct TableReport {
  std::string table;
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;       // unparseable offset or value
  std::size_t negative_offsets = 0;   // pre-admission records dropped
  std::size_t events = 0;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::size_t negative_offsets = 0;
  std::vector<TableReport> tables;
};

struct LoadResult {
  std::vector<EventRecord> events;
  LoadReport report;
};

/// Fraction of unparseable rows above which a table is rejected.
inline constexpr double kMaxSkippedFraction = 0.5;

namespace detail {

inline std::size_t require_column(const csv::Row& header, const std::string& name, const std::string& file) {
  auto idx = csv::column_index(header, name);
  if (!idx) throw DataError(file + ": header lacks bound column '" + name + "'");
  return *idx;
}

}  // namespace detail

/// Loads event tables in the order given; records keep file order.
inline LoadResult load_events(const std::vector<std::filesystem::path>& paths, const SchemaMap& schema) {
  LoadResult result;
  for (const auto& path : paths) {
    if (!std::filesystem::exists(path)) throw DataError("missing file '" + path.string() + "'");
    const auto fname = path.filename().string();
    const auto* binding = schema.table_for_file(fname);
    if (!binding) throw ConfigError("no schema binding for file '" + fname + "'");

    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    csv::Row header;
    if (!csv::read_row(in, header)) throw DataError(fname + ": missing header");

    const auto stay_col = detail::require_column(header, binding->stay_column, fname);
    const auto off_col = detail::require_column(header, binding->offset_column, fname);
    std::optional<std::size_t> pat_col;
    if (!binding->patient_column.empty())
      pat_col = detail::require_column(header, binding->patient_column, fname);
    std::size_t feat_col = 0, val_col = 0;
    std::vector<std::size_t> wide_cols;
    if (binding->wide()) {
      for (const auto& c : binding->value_columns) wide_cols.push_back(detail::require_column(header, c, fname));
    } else {
      feat_col = detail::require_column(header, binding->feature_column, fname);
      val_col = detail::require_column(header, binding->value_column, fname);
    }

    TableReport rep;
    rep.table = binding->table;
    csv::Row row;
    while (csv::read_row(in, row)) {
      if (row.size() == 1 && row[0].empty()) continue;
      ++rep.rows_read;
      if (row.size() < header.size()) {
        ++rep.rows_skipped;
        continue;
      }
      const auto offset = csv::parse_int(row[off_col]);
      if (!offset) {
        ++rep.rows_skipped;
        continue;
      }
      if (*offset < 0) {
        ++rep.negative_offsets;
        continue;
      }
      EventRecord ev;
      ev.stay_id = std::string(csv::trim(row[stay_col]));
      ev.patient_id = pat_col ? std::string(csv::trim(row[*pat_col])) : std::string();
      ev.offset_minutes = *offset;
      if (binding->wide()) {
        bool bad = false;
        for (std::size_t k = 0; k < wide_cols.size(); ++k) {
          const auto cell = csv::trim(row[wide_cols[k]]);
          if (cell.empty()) continue;
          auto v = csv::parse_double(cell);
          if (!v) {
            bad = true;
            continue;
          }
          EventRecord e = ev;
          e.feature = binding->value_columns[k];
          e.value = *v;
          result.events.push_back(std::move(e));
          ++rep.events;
        }
        if (bad) ++rep.rows_skipped;
      } else {
        auto v = csv::parse_double(row[val_col]);
        if (!v) {
          ++rep.rows_skipped;
          continue;
        }
        ev.feature = std::string(csv::trim(row[feat_col]));
        ev.value = *v;
        result.events.push_back(std::move(ev));
        ++rep.events;
      }
    }
    if (rep.rows_read > 0 &&
        static_cast<double>(rep.rows_skipped) > kMaxSkippedFraction * static_cast<double>(rep.rows_read))
      throw DataError(fname + ": " + std::to_string(rep.rows_skipped) + " of " + std::to_string(rep.rows_read) +
                      " rows unparseable");
    result.report.rows_read += rep.rows_read;
    result.report.rows_skipped += rep.rows_skipped;
    result.report.negative_offsets += rep.negative_offsets;
    result.report.tables.push_back(std::move(rep));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Static (per-stay) table

struct StayStatic {
  std::string patient_id;
  StaticFeatures statics;
  double los_minutes = kMissing;
};

using StaticTable = std::map<std::string, StayStatic>;

/// eICU stores ages above 89 as "> 89".
inline double parse_age(std::string_view cell) {
  cell = csv::trim(cell);
  if (cell.starts_with(">")) {
    auto v = csv::parse_double(cell.substr(1));
    return v ? *v + 1.0 : kMissing;
  }
  auto v = csv::parse_double(cell);
  return v ? *v : kMissing;
}

inline StaticTable load_statics(const std::filesystem::path& path, const PatientBinding& b) {
  auto rows = csv::read_file(path.string());
  const auto fname = path.filename().string();
  if (rows.empty()) throw DataError(fname + ": missing header");
  const auto& h = rows.front();
  const auto stay = detail::require_column(h, b.stay_column, fname);
  const auto age = detail::require_column(h, b.age_column, fname);
  const auto los = detail::require_column(h, b.los_column, fname);
  auto opt = [&](const std::string& c) { return c.empty() ? std::nullopt : csv::column_index(h, c); };
  const auto pat = opt(b.patient_column), gender = opt(b.gender_column), eth = opt(b.ethnicity_column),
             weight = opt(b.weight_column), dx = opt(b.dx_column);

  StaticTable table;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() < h.size()) throw DataError(fname + ": row " + std::to_string(r) + " is short");
    StayStatic s;
    if (pat) s.patient_id = std::string(csv::trim(row[*pat]));
    s.statics.age = parse_age(row[age]);
    if (gender) s.statics.gender = std::string(csv::trim(row[*gender]));
    if (eth) s.statics.ethnicity = std::string(csv::trim(row[*eth]));
    if (weight) s.statics.admission_weight = csv::parse_double(row[*weight]).value_or(kMissing);
    if (dx) s.statics.admission_dx = std::string(csv::trim(row[*dx]));
    s.los_minutes = csv::parse_double(row[los]).value_or(kMissing);
    const auto id = std::string(csv::trim(row[stay]));
    if (!table.emplace(id, std::move(s)).second) throw DataError(fname + ": duplicate stay '" + id + "'");
  }
  return table;
}

// ---------------------------------------------------------------------------
// Canonicalization

struct CanonicalizeResult {
  std::vector<EventRecord> events;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> dropped_by_name;
};

inline CanonicalizeResult canonicalize(std::vector<EventRecord> events, const SchemaMap& schema) {
  CanonicalizeResult out;
  out.events.reserve(events.size());
  for (auto& e : events) {
    auto it = schema.aliases.find(e.feature);
    if (it == schema.aliases.end()) {
      ++out.dropped;
      ++out.dropped_by_name[e.feature];
      continue;
    }
    e.feature = it->second;
    out.events.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cohort selection

struct CohortCriteria {
  double min_age_years = 18.0;          // exclusive
  std::size_t min_lactate_count = 2;    // inclusive
  double min_los_minutes = 1080.0;      // inclusive

  void validate() const {
    if (!(min_age_years > 0) || min_lactate_count == 0 || !(min_los_minutes > 0))
      throw ConfigError("cohort thresholds must be positive");
  }
};

inline CohortCriteria cohort_from_json(const nlohmann::json& j) {
  CohortCriteria c;
  c.min_age_years = j.value("min_age_years", c.min_age_years);
  c.min_lactate_count = j.value("min_lactate_count", c.min_lactate_count);
  c.min_los_minutes = j.value("min_los_minutes", c.min_los_minutes);
  c.validate();
  return c;
}

struct CohortResult {
  std::set<std::string> retained;
  std::size_t considered = 0;
  std::size_t excluded_age = 0;
  std::size_t excluded_lactate = 0;
  std::size_t excluded_los = 0;
  /// lactate events outside the valid range (not counted toward the minimum)
  std::size_t invalid_lactate_events = 0;
};

/// A stay is kept iff age > min_age AND valid lactate count >= min count AND
/// LoS >= min LoS. Every stay in the static table is considered; the
/// per-criterion counters are not exclusive.
inline CohortResult select_cohort(const std::vector<EventRecord>& events, const CohortCriteria& criteria,
                                  const StaticTable& statics, const FeatureDictionary* dict = nullptr) {
  criteria.validate();
  const FeatureSpec* lac = dict ? dict->find(std::string(kLactate)) : nullptr;
  std::map<std::string, std::size_t> lactate_counts;
  CohortResult out;
  for (const auto& e : events) {
    if (!statics.contains(e.stay_id))
      throw DataError("stay '" + e.stay_id + "' is missing from the static table");
    if (e.feature != kLactate) continue;
    if (!std::isfinite(e.value) || (lac && !lac->in_range(e.value))) {
      ++out.invalid_lactate_events;
      continue;
    }
    ++lactate_counts[e.stay_id];
  }
  for (const auto& [id, s] : statics) {
    ++out.considered;
    const bool age_ok = std::isfinite(s.statics.age) && s.statics.age > criteria.min_age_years;
    auto it = lactate_counts.find(id);
    const bool lac_ok = it != lactate_counts.end() && it->second >= criteria.min_lactate_count;
    const bool los_ok = std::isfinite(s.los_minutes) && s.los_minutes >= criteria.min_los_minutes;
    out.excluded_age += !age_ok;
    out.excluded_lactate += !lac_ok;
    out.excluded_los += !los_ok;
    if (age_ok && lac_ok && los_ok) out.retained.insert(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

/// Bins stay events at `bin_width_minutes`: bin b covers [b*w, (b+1)*w).
/// The record with the largest offset wins; equal offsets go to the later
/// record. Stays are ordered by stay_id; the grid spans bin 0 through the last
/// bin holding any event. Events for features outside `features` are ignored.
inline AlignedGrid resample(const std::vector<EventRecord>& events, const std::vector<FeatureSpec>& features,
                            int bin_width_minutes = kDefaultBinWidthMinutes, const StaticTable* statics = nullptr) {
  if (bin_width_minutes <= 0) throw ConfigError("bin width must be positive");
  std::map<std::string, std::size_t> feat_index;
  for (std::size_t i = 0; i < features.size(); ++i) feat_index.emplace(features[i].name, i);

  struct StayAcc {
    std::string patient_id;
    std::int64_t last_bin = -1;
    // (feature, bin) -> (offset, value)
    std::map<std::pair<std::size_t, std::int64_t>, std::pair<std::int64_t, double>> cells;
  };
  std::map<std::string, StayAcc> acc;
  for (const auto& e : events) {
    if (e.offset_minutes < 0) throw std::invalid_argument("resample: negative offset for stay '" + e.stay_id + "'");
    auto& s = acc[e.stay_id];
    if (s.patient_id.empty()) s.patient_id = e.patient_id;
    const std::int64_t bin = e.offset_minutes / bin_width_minutes;
    s.last_bin = std::max(s.last_bin, bin);
    auto fit = feat_index.find(e.feature);
    if (fit == feat_index.end()) continue;
    auto [cell, inserted] = s.cells.try_emplace({fit->second, bin}, e.offset_minutes, e.value);
    if (!inserted && e.offset_minutes >= cell->second.first) cell->second = {e.offset_minutes, e.value};
  }

  AlignedGrid grid;
  grid.bin_width_minutes = bin_width_minutes;
  grid.features = features;
  const auto nf = static_cast<Eigen::Index>(features.size());
  for (auto& [id, s] : acc) {
    StayInfo info;
    info.stay_id = id;
    info.patient_id = s.patient_id;
    if (statics) {
      auto it = statics->find(id);
      if (it != statics->end()) {
        info.statics = it->second.statics;
        if (info.patient_id.empty()) info.patient_id = it->second.patient_id;
      }
    }
    const auto nb = static_cast<Eigen::Index>(s.last_bin + 1);
    StayGrid d;
    d.values = Matrix::Constant(nf, nb, kMissing);
    d.mask = MaskMatrix::Constant(nf, nb, false);
    for (const auto& [key, cell] : s.cells) {
      const auto f = static_cast<Eigen::Index>(key.first);
      const auto b = static_cast<Eigen::Index>(key.second);
      d.values(f, b) = cell.second;
      d.mask(f, b) = !is_missing(cell.second);
    }
    grid.stays.push_back(std::move(info));
    grid.data.push_back(std::move(d));
  }
  return grid;
}

/// Events that reproduce an observed grid when resampled at the same width
/// (one event per observed cell, at the bin start).
inline std::vector<EventRecord> grid_to_events(const AlignedGrid& grid) {
  std::vector<EventRecord> out;
  for (std::size_t s = 0; s < grid.data.size(); ++s) {
    const auto& d = grid.data[s];
    for (Eigen::Index b = 0; b < d.n_bins(); ++b)
      for (Eigen::Index f = 0; f < d.values.rows(); ++f)
        if (d.mask(f, b))
          out.push_back({grid.stays[s].patient_id, grid.stays[s].stay_id, grid.features[static_cast<std::size_t>(f)].name,
                         static_cast<std::int64_t>(b) * grid.bin_width_minutes, d.values(f, b)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outliers

struct OutlierReport {
  std::map<std::string, std::size_t> per_feature;
  std::size_t total = 0;
};

/// Masks observed numeric values outside [valid_min, valid_max] (closed).
inline std::pair<AlignedGrid, OutlierReport> mask_outliers(AlignedGrid grid, const FeatureDictionary& dict) {
  OutlierReport report;
  std::vector<const FeatureSpec*> specs;
  for (const auto& f : grid.features) {
    const auto* spec = dict.find(f.name);
    if (!spec) throw DataError("feature '" + f.name + "' is absent from the feature dictionary");
    specs.push_back(spec);
    report.per_feature[f.name] = 0;
  }
  for (auto& d : grid.data) {
    for (Eigen::Index f = 0; f < d.values.rows(); ++f) {
      const auto* spec = specs[static_cast<std::size_t>(f)];
      if (spec->kind != FeatureKind::Numeric) continue;
      for (Eigen::Index b = 0; b < d.values.cols(); ++b) {
        if (!d.mask(f, b)) continue;
        if (!spec->in_range(d.values(f, b))) {
          d.mask(f, b) = false;
          d.values(f, b) = kMissing;
          ++report.per_feature[spec->name];
          ++report.total;
        }
      }
    }
  }
  return {std::move(grid), std::move(report)};
}

/// Fraction of observed cells per feature (the Figure-2-style statistic).
inline std::vector<std::pair<std::string, double>> observed_fraction(const AlignedGrid& grid) {
  std::vector<std::pair<std::string, double>> out;
  const auto total = static_cast<double>(grid.total_bins());
  for (Eigen::Index f = 0; f < grid.n_features(); ++f) {
    std::size_t obs = 0;
    for (const auto& d : grid.data) obs += static_cast<std::size_t>(d.observed().row(f).count());
    out.emplace_back(grid.features[static_cast<std::size_t>(f)].name, total > 0 ? static_cast<double>(obs) / total : 0.0);
  }
  return out;
}

/// Numeric features of the dictionary, in dictionary order.
inline std::vector<FeatureSpec> numeric_features(const FeatureDictionary& dict) {
  std::vector<FeatureSpec> out;
  for (const auto& f : dict.specs())
    if (f.kind == FeatureKind::Numeric) out.push_back(f);
  return out;
}

inline nlohmann::json to_json(const LoadReport& r) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& t : r.tables)
    tables.push_back({{"table", t.table},
                      {"rows_read", t.rows_read},
                      {"rows_skipped", t.rows_skipped},
                      {"negative_offsets", t.negative_offsets},
                      {"events", t.events}});
  return {{"rows_read", r.rows_read},
          {"rows_skipped", r.rows_skipped},
          {"negative_offsets", r.negative_offsets},
          {"tables", tables}};
}

// ---------------------------------------------------------------------------
// Pipeline

struct IngestResult {
  AlignedGrid grid;
  LoadReport load;
  std::size_t events_unmapped = 0;
  std::map<std::string, std::size_t> unmapped_by_name;
  CohortResult cohort;
  OutlierReport outliers;
};

/// Steps (1)-(5) over a directory of CSV extracts: load every bound table
/// present, canonicalize names, select the cohort, resample retained stays
/// and mask out-of-range values. Grid features are the dictionary's numeric
/// features in dictionary order.
inline IngestResult ingest_directory(const std::filesystem::path& data_dir, SchemaMap schema, const FeatureDictionary& dict,
                                     const CohortCriteria& criteria, int bin_width_minutes = kDefaultBinWidthMinutes) {
  if (!std::filesystem::is_directory(data_dir)) throw ConfigError("data directory '" + data_dir.string() + "' not found");
  if (!dict.find(std::string(kLactate))) throw ConfigError("feature dictionary has no 'lactate' entry");
  schema.merge_aliases(dict);
  const auto patient_path = data_dir / schema.patient.file;
  if (!std::filesystem::exists(patient_path))
    throw ConfigError("data directory '" + data_dir.string() + "' has no " + schema.patient.file);
  std::vector<std::filesystem::path> paths;
  for (const auto& t : schema.tables)
    if (std::filesystem::exists(data_dir / t.file)) paths.push_back(data_dir / t.file);
  if (paths.empty()) throw ConfigError("data directory '" + data_dir.string() + "' holds none of the schema's event tables");

  IngestResult out;
  auto loaded = load_events(paths, schema);
  out.load = std::move(loaded.report);
  auto canon = canonicalize(std::move(loaded.events), schema);
  out.events_unmapped = canon.dropped;
  out.unmapped_by_name = std::move(canon.dropped_by_name);
  const auto statics = load_statics(patient_path, schema.patient);
  out.cohort = select_cohort(canon.events, criteria, statics, &dict);
  std::vector<EventRecord> kept;
  for (auto& e : canon.events)
    if (out.cohort.retained.contains(e.stay_id)) kept.push_back(std::move(e));
  auto grid = resample(kept, numeric_features(dict), bin_width_minutes, &statics);
  auto [masked, report] = mask_outliers(std::move(grid), dict);
  out.grid = std::move(masked);
  out.outliers = std::move(report);
  return out;
}

inline nlohmann::json to_json(const IngestResult& r) {
  nlohmann::json outliers = nlohmann::json::object();
  for (const auto& [k, v] : r.outliers.per_feature) outliers[k] = v;
  nlohmann::json unmapped = nlohmann::json::object();
  for (const auto& [k, v] : r.unmapped_by_name) unmapped[k] = v;
  return {{"load", to_json(r.load)},
          {"events_unmapped", r.events_unmapped},
          {"unmapped_by_name", unmapped},
          {"cohort",
           {{"considered", r.cohort.considered},
            {"retained", r.cohort.retained.size()},
            {"excluded_age", r.cohort.excluded_age},
            {"excluded_lactate_count", r.cohort.excluded_lactate},
            {"excluded_los", r.cohort.excluded_los},
            {"invalid_lactate_events", r.cohort.invalid_lactate_events}}},
          {"outliers", {{"total", r.outliers.total}, {"per_feature", outliers}}},
          {"grid", {{"stays", r.grid.n_stays()}, {"bins", r.grid.total_bins()}, {"features", r.grid.n_features()}}}};
}

}  // namespace lactate::ingest
