#pragma once

// Synthetic ICU cohorts and missingness corruption.
//
// Each stay carries an AR(1) latent state z_t in R^d. Vitals and labs are
// noisy linear readouts of z_t; lactate is the quantile transform of a
// latent-linked standard normal through a four-component log-normal mixture,
// so every lactate cell has exactly the mixture as its marginal while history
// stays predictive of the future. Features are observed only every
// `period_bins` bins.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "lactate/datamodel.hpp"
#include "lactate/rng.hpp"

namespace lactate::synth {

struct SynthFeature {
  FeatureSpec spec;
  double mean = 0.0;
  double sd = 1.0;
  int period_bins = 1;
  /// Share of variance that is independent noise (the rest is latent-driven).
  double noise_fraction = 0.5;
  double clip_min = -std::numeric_limits<double>::infinity();
  double clip_max = std::numeric_limits<double>::infinity();
};

struct LogNormalComponent {
  double mu_log = 0.0;
  double sigma_log = 1.0;
};

struct SynthConfig {
  std::size_t n_patients = 300;
  double stay_length_mean_bins = 20.0;
  double stay_length_sd_bins = 8.0;
  int min_stay_bins = 9;  // 18 h at 2-hour bins
  int bin_width_minutes = kDefaultBinWidthMinutes;

  int latent_dim = 3;
  double latent_autocorrelation = 0.9;
  /// Share of lactate's normal score explained by the latent state; bounds the
  /// attainable R^2 of the forecasting task.
  double lactate_link = 0.8;
  int lactate_period_bins = 4;
  FeatureSpec lactate_spec{std::string(kLactate), {}, 0.1, 30.0, FeatureKind::Numeric};
  std::array<LogNormalComponent, 4> lactate_components{{{std::log(1.3), 0.28},
                                                         {std::log(2.8), 0.17},
                                                         {std::log(4.9), 0.09},
                                                         {std::log(8.5), 0.3}}};
  /// Target share of lactate readings per severity band (Normal..Severe).
  std::array<double, 4> lactate_category_weights{0.531, 0.265, 0.089, 0.115};

  std::vector<SynthFeature> features;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (n_patients == 0) throw ConfigError("synth: n_patients must be positive");
    if (min_stay_bins < 1 || stay_length_sd_bins < 0) throw ConfigError("synth: invalid stay length");
    if (bin_width_minutes <= 0) throw ConfigError("synth: bin width must be positive");
    if (latent_dim < 0) throw ConfigError("synth: latent_dim must be >= 0");
    if (!(std::abs(latent_autocorrelation) < 1.0)) throw ConfigError("synth: |latent_autocorrelation| must be < 1");
    if (lactate_link < 0 || lactate_link > 1) throw ConfigError("synth: lactate_link must lie in [0, 1]");
    if (lactate_period_bins < 1) throw ConfigError("synth: lactate period must be >= 1");
    double sum = 0.0;
    for (double w : lactate_category_weights) {
      if (w < 0) throw ConfigError("synth: negative category weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("synth: lactate category weights must sum to 1");
    for (const auto& c : lactate_components)
      if (!(c.sigma_log > 0) || !std::isfinite(c.mu_log))
        throw ConfigError("synth: degenerate lactate mixture component (zero variance)");
    for (const auto& f : features) {
      if (f.period_bins < 1) throw ConfigError("synth: feature '" + f.spec.name + "' period must be >= 1");
      if (!(f.sd > 0)) throw ConfigError("synth: feature '" + f.spec.name + "' sd must be positive");
      if (f.noise_fraction < 0 || f.noise_fraction > 1)
        throw ConfigError("synth: feature '" + f.spec.name + "' noise_fraction must lie in [0, 1]");
      if (f.spec.name == kLactate) throw ConfigError("synth: lactate is configured separately");
    }
  }
};

/// Desk-scale default panel: eleven vitals/labs plus lactate.
inline std::vector<SynthFeature> default_features() {
  auto f = [](std::string name, double lo, double hi, double mean, double sd, int period, double noise,
              double cmin = -std::numeric_limits<double>::infinity(),
              double cmax = std::numeric_limits<double>::infinity()) {
    SynthFeature s;
    s.spec = FeatureSpec{std::move(name), {}, lo, hi, FeatureKind::Numeric};
    s.mean = mean;
    s.sd = sd;
    s.period_bins = period;
    s.noise_fraction = noise;
    s.clip_min = cmin;
    s.clip_max = cmax;
    return s;
  };
  return {
      f("heart_rate", 20, 300, 90, 18, 1, 0.5),
      f("resp_rate", 2, 80, 20, 5, 1, 0.6),
      f("sbp", 40, 300, 120, 20, 1, 0.5),
      f("map", 20, 250, 80, 12, 1, 0.5),
      f("spo2", 50, 100, 96, 2.5, 1, 0.6, 50, 100),
      f("temperature", 30, 45, 37, 0.7, 2, 0.6),
      f("ph", 6.5, 8.0, 7.37, 0.07, 3, 0.4),
      f("bicarbonate", 2, 60, 23, 4, 3, 0.4),
      f("base_excess", -40, 40, -1, 4, 3, 0.4),
      f("glucose", 10, 1500, 140, 40, 3, 0.6, 20),
      f("creatinine", 0.1, 25, 1.5, 0.8, 6, 0.5, 0.2),
  };
}

inline SynthConfig default_config() {
  SynthConfig c;
  c.features = default_features();
  return c;
}

// ---------------------------------------------------------------------------
// Lactate mixture

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Four-component log-normal mixture whose component weights are solved so
/// that the mixture's severity-band probabilities equal the targets exactly.
class LactateMixture {
 public:
  LactateMixture(const std::array<LogNormalComponent, 4>& comps, const std::array<double, 4>& category_targets)
      : comps_(comps) {
    for (const auto& c : comps_)
      if (!(c.sigma_log > 0)) throw ConfigError("degenerate lactate mixture component (zero variance)");
    Eigen::Matrix4d p;
    for (int k = 0; k < 4; ++k)
      for (int c = 0; c < 4; ++c) p(c, k) = band_probability(comps_[static_cast<std::size_t>(k)], c);
    Eigen::Vector4d target;
    for (int c = 0; c < 4; ++c) target(c) = category_targets[static_cast<std::size_t>(c)];
    const Eigen::Vector4d w = p.fullPivLu().solve(target);
    if (!((p * w - target).cwiseAbs().maxCoeff() < 1e-9) || (w.array() < -1e-12).any())
      throw ConfigError("lactate mixture cannot reach the target category weights with these components");
    for (int k = 0; k < 4; ++k) weights_[static_cast<std::size_t>(k)] = std::max(0.0, w(k));
  }

  const std::array<double, 4>& weights() const { return weights_; }

  double cdf(double x) const {
    if (x <= 0) return 0.0;
    const double lx = std::log(x);
    double acc = 0.0;
    for (std::size_t k = 0; k < 4; ++k) acc += weights_[k] * normal_cdf((lx - comps_[k].mu_log) / comps_[k].sigma_log);
    return acc;
  }

  /// Probability of severity band c (Normal..Severe) under the mixture.
  double band_probability(int c) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < 4; ++k) acc += weights_[k] * band_probability(comps_[k], c);
    return acc;
  }

  double quantile(double p) const {
    p = std::clamp(p, 1e-15, 1.0 - 1e-15);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : comps_) {
      lo = std::min(lo, c.mu_log - 40.0 * c.sigma_log);
      hi = std::max(hi, c.mu_log + 40.0 * c.sigma_log);
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (cdf(std::exp(mid)) < p) lo = mid;
      else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
  }

 private:
  static double band_probability(const LogNormalComponent& c, int band) {
    static constexpr std::array<double, 5> edges{0.0, 2.0, 4.0, 6.0, std::numeric_limits<double>::infinity()};
    auto cdf = [&](double x) {
      if (x <= 0) return 0.0;
      if (std::isinf(x)) return 1.0;
      return normal_cdf((std::log(x) - c.mu_log) / c.sigma_log);
    };
    return cdf(edges[static_cast<std::size_t>(band) + 1]) - cdf(edges[static_cast<std::size_t>(band)]);
  }

  std::array<LogNormalComponent, 4> comps_;
  std::array<double, 4> weights_{};
};

// ---------------------------------------------------------------------------
// Generation

namespace detail {

template <typename T, std::size_t N>
const T& pick(Rng& rng, const std::array<std::pair<T, double>, N>& table) {
  double u = uniform01(rng);
  for (const auto& [v, w] : table) {
    if (u < w) return v;
    u -= w;
  }
  return table.back().first;
}

inline constexpr std::uint64_t kLoadingStream = 0x4c4f4144ULL;

}  // namespace detail

/// Features of the generated grid: lactate first, then the configured panel.
inline std::vector<FeatureSpec> cohort_features(const SynthConfig& cfg) {
  std::vector<FeatureSpec> out{cfg.lactate_spec};
  for (const auto& f : cfg.features) out.push_back(f.spec);
  return out;
}

/// Deterministic in cfg.rng_seed; each stay uses its own derived stream.
inline AlignedGrid generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  const LactateMixture mixture(cfg.lactate_components, cfg.lactate_category_weights);
  const int d = cfg.latent_dim;
  const auto nf = static_cast<Eigen::Index>(cfg.features.size());

  // Unit-norm loadings: lactate direction plus one row per feature.
  Matrix loadings(nf + 1, d);
  {
    Rng rng(derive_seed(cfg.rng_seed, detail::kLoadingStream));
    for (Eigen::Index r = 0; r < loadings.rows(); ++r) {
      for (int c = 0; c < d; ++c) loadings(r, c) = standard_normal(rng);
      const double n = loadings.row(r).norm();
      if (n > 0) loadings.row(r) /= n;
    }
  }

  static constexpr std::array<std::pair<std::string_view, double>, 2> kGender{{{"Male", 0.55}, {"Female", 0.45}}};
  static constexpr std::array<std::pair<std::string_view, double>, 5> kEthnicity{
      {{"Caucasian", 0.76}, {"African American", 0.11}, {"Hispanic", 0.04}, {"Asian", 0.02}, {"Other/Unknown", 0.07}}};
  static constexpr std::array<std::pair<std::string_view, double>, 8> kDiagnosis{
      {{"Sepsis, pulmonary", 0.121},
       {"Cardiac arrest", 0.085},
       {"Sepsis, renal/UTI", 0.063},
       {"Sepsis, GI", 0.053},
       {"CHF, congestive heart failure", 0.05},
       {"Overdose", 0.04},
       {"Pneumonia, bacterial", 0.04},
       {"Other", 0.548}}};

  AlignedGrid grid;
  grid.bin_width_minutes = cfg.bin_width_minutes;
  grid.features = cohort_features(cfg);
  const double rho = cfg.latent_autocorrelation;
  const double innov = std::sqrt(1.0 - rho * rho);
  const double link = d > 0 ? std::sqrt(cfg.lactate_link) : 0.0;
  const double lac_noise = std::sqrt(1.0 - link * link);
  const int digits = static_cast<int>(std::to_string(cfg.n_patients).size());

  for (std::size_t s = 0; s < cfg.n_patients; ++s) {
    Rng rng(derive_seed(cfg.rng_seed, s));
    StayInfo info;
    auto id = std::to_string(s + 1);
    id.insert(0, static_cast<std::size_t>(std::max(0, digits - static_cast<int>(id.size()))), '0');
    info.patient_id = "P" + id;
    info.stay_id = "S" + id;
    info.statics.age = std::clamp(61.8 + 15.7 * standard_normal(rng), 19.0, 95.0);
    info.statics.gender = std::string(detail::pick(rng, kGender));
    info.statics.ethnicity = std::string(detail::pick(rng, kEthnicity));
    info.statics.admission_weight = std::clamp(84.0 + 22.0 * standard_normal(rng), 35.0, 250.0);
    info.statics.admission_dx = std::string(detail::pick(rng, kDiagnosis));

    const auto n_bins = static_cast<Eigen::Index>(std::max<double>(
        cfg.min_stay_bins, std::round(cfg.stay_length_mean_bins + cfg.stay_length_sd_bins * standard_normal(rng))));

    StayGrid g;
    g.values = Matrix::Constant(nf + 1, n_bins, kMissing);
    g.mask = MaskMatrix::Constant(nf + 1, n_bins, false);
    Vector z(d);
    for (int c = 0; c < d; ++c) z(c) = standard_normal(rng);
    for (Eigen::Index b = 0; b < n_bins; ++b) {
      if (b > 0)
        for (int c = 0; c < d; ++c) z(c) = rho * z(c) + innov * standard_normal(rng);
      // Draw every noise term each bin so streams do not depend on periods.
      const double lac_eps = standard_normal(rng);
      if (b % cfg.lactate_period_bins == 0) {
        const double latent = d > 0 ? loadings.row(0).dot(z) : 0.0;
        const double score = link * latent + lac_noise * lac_eps;
        g.values(0, b) = mixture.quantile(normal_cdf(score));
        g.mask(0, b) = true;
      }
      for (Eigen::Index f = 0; f < nf; ++f) {
        const auto& sf = cfg.features[static_cast<std::size_t>(f)];
        const double eps = standard_normal(rng);
        if (b % sf.period_bins != 0) continue;
        const double latent = d > 0 ? loadings.row(f + 1).dot(z) : 0.0;
        const double signal = d > 0 ? std::sqrt(1.0 - sf.noise_fraction) : 0.0;
        const double noise = d > 0 ? std::sqrt(sf.noise_fraction) : 1.0;
        const double v = sf.mean + sf.sd * (signal * latent + noise * eps);
        g.values(f + 1, b) = std::clamp(v, sf.clip_min, sf.clip_max);
        g.mask(f + 1, b) = true;
      }
    }
    grid.stays.push_back(std::move(info));
    grid.data.push_back(std::move(g));
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Missingness

enum class Mechanism { MCAR, MAR, MNAR };

inline std::string_view to_string(Mechanism m) {
  switch (m) {
    case Mechanism::MCAR: return "MCAR";
    case Mechanism::MAR: return "MAR";
    case Mechanism::MNAR: return "MNAR";
  }
  return "MCAR";
}

struct MissingnessSpec {
  Mechanism mechanism = Mechanism::MCAR;
  double rate = 0.0;
  /// Features to corrupt; empty means every feature (MAR: every feature but
  /// the conditioning one).
  std::vector<std::string> features;
  std::string conditioning_feature;  // MAR
  double mar_slope = 2.0;            // MAR logistic slope per conditioning-feature SD
  /// MNAR: relative masking propensity per severity band (Normal..Severe).
  std::array<double, 4> mnar_multipliers{3.0, 7.0 / 3.0, 5.0 / 3.0, 1.0};
  std::uint64_t seed = 7;

  void validate() const {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("missingness rate must lie in [0, 1)");
    if (mechanism == Mechanism::MAR && conditioning_feature.empty())
      throw ConfigError("MAR missingness needs a conditioning_feature");
    for (double m : mnar_multipliers)
      if (!(m >= 0)) throw ConfigError("MNAR multipliers must be non-negative");
  }
};

struct CorruptedGrid {
  AlignedGrid grid;
  /// Pre-corruption values per stay (missing where never observed).
  std::vector<Matrix> truth;
};

namespace detail {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Bisection for a monotone increasing f with f(lo) <= target <= f(hi).
template <typename F>
double solve_monotone(F f, double target, double lo, double hi) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct Cell {
  std::size_t stay;
  Eigen::Index feature;
  Eigen::Index bin;
};

}  // namespace detail

/// MNAR band of a non-lactate value: quartile of |x - median| over the
/// feature's observed cells (closest quarter = Normal). Lactate uses its
/// clinical bands.
inline std::vector<int> mnar_bands(const AlignedGrid& grid, const std::vector<detail::Cell>& cells) {
  std::vector<int> bands(cells.size(), 0);
  std::map<Eigen::Index, std::vector<std::size_t>> by_feature;
  for (std::size_t i = 0; i < cells.size(); ++i) by_feature[cells[i].feature].push_back(i);
  for (auto& [f, idx] : by_feature) {
    const bool is_lactate = grid.features[static_cast<std::size_t>(f)].name == kLactate;
    auto value = [&](std::size_t i) { return grid.data[cells[i].stay].values(cells[i].feature, cells[i].bin); };
    if (is_lactate) {
      for (auto i : idx) bands[i] = value(i) > 0 ? static_cast<int>(categorize_lactate(value(i))) : 0;
      continue;
    }
    std::vector<double> vals;
    for (auto i : idx) vals.push_back(value(i));
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<double> dev;
    for (double v : vals) dev.push_back(std::abs(v - median));
    std::vector<double> sdev = dev;
    std::sort(sdev.begin(), sdev.end());
    auto q = [&](double p) { return sdev[std::min(sdev.size() - 1, static_cast<std::size_t>(p * static_cast<double>(sdev.size())))]; };
    const double q1 = q(0.25), q2 = q(0.5), q3 = q(0.75);
    for (std::size_t k = 0; k < idx.size(); ++k)
      bands[idx[k]] = dev[k] <= q1 ? 0 : dev[k] <= q2 ? 1 : dev[k] <= q3 ? 2 : 3;
  }
  return bands;
}

/// Masks observed cells per the mechanism; stored values of surviving cells
/// are untouched, masked cells get the missing sentinel. The marginal masking
/// probability over eligible observed cells is calibrated to `spec.rate`.
inline CorruptedGrid apply_missingness(const CorruptedGrid& input, const MissingnessSpec& spec) {
  spec.validate();
  CorruptedGrid out = input;
  auto& grid = out.grid;
  if (spec.rate == 0.0) return out;

  std::vector<bool> eligible_feature(grid.features.size(), spec.features.empty());
  for (const auto& name : spec.features) {
    auto idx = grid.feature_index(name);
    if (!idx) throw ConfigError("missingness: feature '" + name + "' is absent from the grid");
    eligible_feature[static_cast<std::size_t>(*idx)] = true;
  }
  std::optional<Eigen::Index> cond;
  if (spec.mechanism == Mechanism::MAR) {
    cond = grid.feature_index(spec.conditioning_feature);
    if (!cond) throw ConfigError("MAR conditioning feature '" + spec.conditioning_feature + "' is absent from the grid");
    eligible_feature[static_cast<std::size_t>(*cond)] = false;
  }

  std::vector<detail::Cell> cells;
  for (std::size_t s = 0; s < grid.data.size(); ++s) {
    const auto& d = grid.data[s];
    for (Eigen::Index b = 0; b < d.n_bins(); ++b)
      for (Eigen::Index f = 0; f < d.values.rows(); ++f)
        if (eligible_feature[static_cast<std::size_t>(f)] && d.mask(f, b)) cells.push_back({s, f, b});
  }
  if (cells.empty()) return out;
  const double target = spec.rate * static_cast<double>(cells.size());

  std::vector<double> prob(cells.size(), spec.rate);
  if (spec.mechanism == Mechanism::MNAR) {
    const auto bands = mnar_bands(grid, cells);
    std::vector<double> m(cells.size());
    double mmax = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      m[i] = spec.mnar_multipliers[static_cast<std::size_t>(bands[i])];
      mmax = std::max(mmax, m[i]);
    }
    if (mmax <= 0) throw ConfigError("MNAR multipliers are all zero");
    auto total = [&](double scale) {
      double acc = 0.0;
      for (double mi : m) acc += std::min(1.0, scale * mi);
      return acc;
    };
    const double scale = detail::solve_monotone(total, target, 0.0, 1.0 / *std::min_element(
        m.begin(), m.end(), [](double a, double b) { return (a > 0 ? a : 1e300) < (b > 0 ? b : 1e300); }));
    for (std::size_t i = 0; i < cells.size(); ++i) prob[i] = std::min(1.0, scale * m[i]);
  } else if (spec.mechanism == Mechanism::MAR) {
    // Conditioning values standardized over their observed cells.
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (const auto& d : grid.data)
      for (Eigen::Index b = 0; b < d.n_bins(); ++b)
        if (d.mask(*cond, b)) {
          sum += d.values(*cond, b);
          sq += d.values(*cond, b) * d.values(*cond, b);
          ++n;
        }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    const double var = n ? std::max(0.0, sq / static_cast<double>(n) - mean * mean) : 0.0;
    const double sd = var > 0 ? std::sqrt(var) : 1.0;
    std::vector<double> zc(cells.size(), 0.0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& d = grid.data[cells[i].stay];
      if (d.mask(*cond, cells[i].bin)) zc[i] = (d.values(*cond, cells[i].bin) - mean) / sd;
    }
    auto total = [&](double a) {
      double acc = 0.0;
      for (double z : zc) acc += detail::logistic(a + spec.mar_slope * z);
      return acc;
    };
    const double a = detail::solve_monotone(total, target, -60.0, 60.0);
    for (std::size_t i = 0; i < cells.size(); ++i) prob[i] = detail::logistic(a + spec.mar_slope * zc[i]);
  }

  // One stream per stay; cells are visited in (bin, feature) order.
  std::size_t i = 0;
  while (i < cells.size()) {
    const auto s = cells[i].stay;
    Rng rng(derive_seed(spec.seed, s));
    for (; i < cells.size() && cells[i].stay == s; ++i) {
      if (bernoulli(rng, prob[i])) {
        auto& d = grid.data[s];
        d.mask(cells[i].feature, cells[i].bin) = false;
        d.values(cells[i].feature, cells[i].bin) = kMissing;
      }
    }
  }
  return out;
}

inline CorruptedGrid apply_missingness(const AlignedGrid& grid, const MissingnessSpec& spec) {
  CorruptedGrid in{grid, {}};
  for (const auto& d : grid.data) in.truth.push_back(d.values);
  return apply_missingness(in, spec);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline void known_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError(path + "." + k + ": unknown key");
}
}  // namespace detail

inline SynthFeature synth_feature_from_json(const nlohmann::json& j) {
  detail::known_keys(j, "synth.features[]",
                     {"name", "valid_min", "valid_max", "mean", "sd", "period_bins", "noise_fraction", "clip_min", "clip_max"});
  SynthFeature f;
  f.spec.name = j.at("name").get<std::string>();
  f.spec.valid_min = j.value("valid_min", -std::numeric_limits<double>::infinity());
  f.spec.valid_max = j.value("valid_max", std::numeric_limits<double>::infinity());
  f.mean = j.at("mean").get<double>();
  f.sd = j.at("sd").get<double>();
  f.period_bins = j.value("period_bins", 1);
  f.noise_fraction = j.value("noise_fraction", 0.5);
  f.clip_min = j.value("clip_min", -std::numeric_limits<double>::infinity());
  f.clip_max = j.value("clip_max", std::numeric_limits<double>::infinity());
  return f;
}

/// Missing keys keep their defaults; "features" replaces the default panel.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  detail::known_keys(j, "synth",
                     {"n_patients", "stay_length_mean_bins", "stay_length_sd_bins", "min_stay_bins", "bin_width_minutes",
                      "latent_dim", "latent_autocorrelation", "lactate_link", "lactate_period_bins", "rng_seed",
                      "lactate_category_weights", "lactate_components", "features"});
  SynthConfig c = default_config();
  c.n_patients = j.value("n_patients", c.n_patients);
  c.stay_length_mean_bins = j.value("stay_length_mean_bins", c.stay_length_mean_bins);
  c.stay_length_sd_bins = j.value("stay_length_sd_bins", c.stay_length_sd_bins);
  c.min_stay_bins = j.value("min_stay_bins", c.min_stay_bins);
  c.bin_width_minutes = j.value("bin_width_minutes", c.bin_width_minutes);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.latent_autocorrelation = j.value("latent_autocorrelation", c.latent_autocorrelation);
  c.lactate_link = j.value("lactate_link", c.lactate_link);
  c.lactate_period_bins = j.value("lactate_period_bins", c.lactate_period_bins);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  if (j.contains("lactate_category_weights"))
    c.lactate_category_weights = j.at("lactate_category_weights").get<std::array<double, 4>>();
  if (j.contains("lactate_components")) {
    const auto& arr = j.at("lactate_components");
    if (arr.size() != 4) throw ConfigError("synth: lactate_components needs exactly 4 entries");
    for (std::size_t k = 0; k < 4; ++k) {
      c.lactate_components[k].mu_log = arr[k].at("mu_log").get<double>();
      c.lactate_components[k].sigma_log = arr[k].at("sigma_log").get<double>();
    }
  }
  if (j.contains("features")) {
    c.features.clear();
    for (const auto& f : j.at("features")) c.features.push_back(synth_feature_from_json(f));
  }
  c.validate();
  return c;
}

inline Mechanism mechanism_from_string(const std::string& s) {
  if (s == "MCAR") return Mechanism::MCAR;
  if (s == "MAR") return Mechanism::MAR;
  if (s == "MNAR") return Mechanism::MNAR;
  throw ConfigError("unknown missingness mechanism '" + s + "' (expected MCAR, MAR or MNAR)");
}

inline MissingnessSpec missingness_from_json(const nlohmann::json& j) {
  detail::known_keys(j, "missingness[]",
                     {"mechanism", "rate", "features", "conditioning_feature", "mar_slope", "mnar_multipliers", "seed"});
  MissingnessSpec m;
  m.mechanism = mechanism_from_string(j.at("mechanism").get<std::string>());
  m.rate = j.at("rate").get<double>();
  if (j.contains("features")) m.features = j.at("features").get<std::vector<std::string>>();
  m.conditioning_feature = j.value("conditioning_feature", std::string());
  m.mar_slope = j.value("mar_slope", m.mar_slope);
  if (j.contains("mnar_multipliers")) m.mnar_multipliers = j.at("mnar_multipliers").get<std::array<double, 4>>();
  m.seed = j.value("seed", m.seed);
  m.validate();
  return m;
}

inline nlohmann::json to_json(const MissingnessSpec& m) {
  return {{"mechanism", to_string(m.mechanism)}, {"rate", m.rate}, {"features", m.features},
          {"conditioning_feature", m.conditioning_feature}, {"mar_slope", m.mar_slope},
          {"mnar_multipliers", m.mnar_multipliers}, {"seed", m.seed}};
}

}  // namespace lactate::synth
