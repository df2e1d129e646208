#include <gtest/gtest.h>

#include "lactate/grid_io.hpp"
#include "lactate/synth.hpp"
#include "support.hpp"

using namespace lactate;
using namespace lactate::synth;

namespace {

SynthConfig small_config(std::size_t n, std::uint64_t seed = 3) {
  auto c = default_config();
  c.n_patients = n;
  c.rng_seed = seed;
  return c;
}

std::array<double, 4> lactate_shares(const AlignedGrid& g) {
  std::array<double, 4> counts{};
  double n = 0;
  const auto lac = *g.feature_index(kLactate);
  for (const auto& d : g.data)
    for (Eigen::Index b = 0; b < d.n_bins(); ++b)
      if (d.mask(lac, b)) {
        counts[static_cast<std::size_t>(categorize_lactate(d.values(lac, b)))] += 1;
        n += 1;
      }
  for (auto& c : counts) c /= n;
  return counts;
}

double masked_fraction(const AlignedGrid& before, const AlignedGrid& after) {
  double total = 0, masked = 0;
  for (std::size_t s = 0; s < before.data.size(); ++s)
    for (Eigen::Index i = 0; i < before.data[s].mask.size(); ++i)
      if (before.data[s].mask.data()[i]) {
        total += 1;
        masked += !after.data[s].mask.data()[i];
      }
  return masked / total;
}

}  // namespace

TEST(Categorize, BandEdges) {
  EXPECT_EQ(categorize_lactate(2.0), Severity::Normal);
  EXPECT_EQ(categorize_lactate(2.0001), Severity::Mild);
  EXPECT_EQ(categorize_lactate(4.0), Severity::Mild);
  EXPECT_EQ(categorize_lactate(6.0), Severity::Moderate);
  EXPECT_EQ(categorize_lactate(6.5), Severity::Severe);
  EXPECT_THROW(categorize_lactate(0.0), std::domain_error);
  EXPECT_THROW(categorize_lactate(kMissing), std::domain_error);
}

TEST(Generate, Deterministic) {
  const auto a = generate_cohort(small_config(40));
  const auto b = generate_cohort(small_config(40));
  ASSERT_EQ(a.n_stays(), b.n_stays());
  for (std::size_t s = 0; s < a.n_stays(); ++s) {
    ASSERT_EQ(a.data[s].mask, b.data[s].mask);
    for (Eigen::Index i = 0; i < a.data[s].values.size(); ++i)
      if (a.data[s].mask.data()[i]) ASSERT_EQ(a.data[s].values.data()[i], b.data[s].values.data()[i]);
  }
  const auto c = generate_cohort(small_config(40, 4));
  EXPECT_NE(a.data[0].values.row(0).sum(), c.data[0].values.row(0).sum());
}

TEST(Generate, PassesValidationAndRoundTrip) {
  const auto g = generate_cohort(small_config(25));
  EXPECT_NO_THROW(g.validate());
  const auto dir = support::scratch_dir("synth_rt");
  write_grid(g, dir, "grid");
  const auto back = read_grid(dir, "grid");
  ASSERT_EQ(back.n_stays(), g.n_stays());
  EXPECT_EQ(back.feature_names(), g.feature_names());
  for (std::size_t s = 0; s < g.n_stays(); ++s) {
    EXPECT_EQ(back.stays[s].stay_id, g.stays[s].stay_id);
    EXPECT_EQ(back.stays[s].statics.age, g.stays[s].statics.age);
    ASSERT_EQ(back.data[s].mask, g.data[s].mask);
    for (Eigen::Index i = 0; i < g.data[s].values.size(); ++i)
      if (g.data[s].mask.data()[i]) ASSERT_EQ(back.data[s].values.data()[i], g.data[s].values.data()[i]);
  }
}

TEST(Generate, FeaturesOnlyAtTheirPeriod) {
  auto c = small_config(30);
  const auto g = generate_cohort(c);
  for (std::size_t k = 0; k < c.features.size(); ++k) {
    const auto f = static_cast<Eigen::Index>(k + 1);
    const int p = c.features[k].period_bins;
    for (const auto& d : g.data)
      for (Eigen::Index b = 0; b < d.n_bins(); ++b)
        if (d.mask(f, b)) ASSERT_EQ(b % p, 0) << c.features[k].spec.name;
  }
}

TEST(Generate, StayLengthAtLeastMinimum) {
  auto c = small_config(60);
  const auto g = generate_cohort(c);
  for (const auto& d : g.data) EXPECT_GE(d.n_bins(), c.min_stay_bins);
}

TEST(Generate, CategoryProportionsMatchTargets) {
  const auto shares = lactate_shares(generate_cohort(small_config(2000, 11)));
  const std::array<double, 4> target{0.531, 0.265, 0.089, 0.115};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(shares[k], target[k], 0.02) << k;
}

TEST(Generate, NoLatentMeansUncorrelatedFeatures) {
  auto c = small_config(400, 5);
  c.latent_dim = 0;
  const auto g = generate_cohort(c);
  // two hourly features, co-observed cells
  const Eigen::Index a = 1, b = 2;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, n = 0;
  for (const auto& d : g.data)
    for (Eigen::Index t = 0; t < d.n_bins(); ++t)
      if (d.mask(a, t) && d.mask(b, t)) {
        const double x = d.values(a, t), y = d.values(b, t);
        sa += x, sb += y, saa += x * x, sbb += y * y, sab += x * y, n += 1;
      }
  ASSERT_GT(n, 1000);
  const double cov = sab / n - sa / n * sb / n;
  const double r = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  EXPECT_LT(std::abs(r), 0.05);
}

TEST(Generate, LatentInducesCorrelation) {
  const auto g = generate_cohort(small_config(200, 5));
  double best = 0;
  for (Eigen::Index a = 1; a < g.n_features(); ++a)
    for (Eigen::Index b = a + 1; b < g.n_features(); ++b) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, n = 0;
      for (const auto& d : g.data)
        for (Eigen::Index t = 0; t < d.n_bins(); ++t)
          if (d.mask(a, t) && d.mask(b, t)) {
            const double x = d.values(a, t), y = d.values(b, t);
            sa += x, sb += y, saa += x * x, sbb += y * y, sab += x * y, n += 1;
          }
      if (n < 100) continue;
      const double r = (sab / n - sa / n * sb / n) / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
      best = std::max(best, std::abs(r));
    }
  EXPECT_GT(best, 0.2);
}

TEST(SynthConfig, Invalid) {
  auto c = default_config();
  c.lactate_components[2].sigma_log = 0.0;
  EXPECT_THROW(generate_cohort(c), ConfigError);
  c = default_config();
  c.lactate_category_weights = {0.5, 0.5, 0.5, 0.0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config();
  c.features[0].period_bins = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(synth_config_from_json(nlohmann::json{{"n_patients", 0}}), ConfigError);
}

TEST(SynthConfig, JsonOverrides) {
  const auto c = synth_config_from_json(nlohmann::json{{"n_patients", 17}, {"rng_seed", 9}, {"latent_dim", 1}});
  EXPECT_EQ(c.n_patients, 17u);
  EXPECT_EQ(c.rng_seed, 9u);
  EXPECT_EQ(c.latent_dim, 1);
  EXPECT_EQ(c.features.size(), default_config().features.size());
}

// --- missingness ------------------------------------------------------------

TEST(Missingness, RateZeroIsIdentity) {
  const auto g = generate_cohort(small_config(20));
  MissingnessSpec m;
  m.rate = 0.0;
  const auto out = apply_missingness(g, m);
  for (std::size_t s = 0; s < g.n_stays(); ++s) EXPECT_EQ(out.grid.data[s].mask, g.data[s].mask);
}

TEST(Missingness, McarRate) {
  const auto g = support::random_grid(1000, 10, 10, 0.0, 1);  // 10^5 cells
  MissingnessSpec m;
  m.rate = 0.3;
  const auto out = apply_missingness(g, m);
  const double frac = masked_fraction(g, out.grid);
  EXPECT_GE(frac, 0.295);
  EXPECT_LE(frac, 0.305);
}

TEST(Missingness, OnlyMasksAndKeepsTruth) {
  const auto g = generate_cohort(small_config(30));
  MissingnessSpec m;
  m.mechanism = Mechanism::MNAR;
  m.rate = 0.4;
  const auto out = apply_missingness(g, m);
  EXPECT_NO_THROW(out.grid.validate());
  ASSERT_EQ(out.truth.size(), g.n_stays());
  for (std::size_t s = 0; s < g.n_stays(); ++s) {
    const auto& a = g.data[s];
    const auto& b = out.grid.data[s];
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
      if (b.mask.data()[i]) {
        ASSERT_TRUE(a.mask.data()[i]);
        ASSERT_EQ(b.values.data()[i], a.values.data()[i]);
      }
      if (a.mask.data()[i]) ASSERT_EQ(out.truth[s].data()[i], a.values.data()[i]);
    }
  }
}

TEST(Missingness, MnarNormalVsSevereRatio) {
  const auto g = generate_cohort(small_config(4000, 21));
  MissingnessSpec m;
  m.mechanism = Mechanism::MNAR;
  m.rate = 0.3;
  m.features = {"lactate"};
  const auto out = apply_missingness(g, m);
  const auto lac = *g.feature_index(kLactate);
  double n_norm = 0, m_norm = 0, n_sev = 0, m_sev = 0;
  for (std::size_t s = 0; s < g.n_stays(); ++s)
    for (Eigen::Index b = 0; b < g.data[s].n_bins(); ++b) {
      if (!g.data[s].mask(lac, b)) continue;
      const auto band = categorize_lactate(g.data[s].values(lac, b));
      const bool masked = !out.grid.data[s].mask(lac, b);
      if (band == Severity::Normal) n_norm += 1, m_norm += masked;
      if (band == Severity::Severe) n_sev += 1, m_sev += masked;
    }
  ASSERT_GT(n_sev, 2000);
  const double ratio = (m_norm / n_norm) / (m_sev / n_sev);
  EXPECT_NEAR(ratio, 3.0, 0.6);
}

TEST(Missingness, MarDependsOnConditioningFeature) {
  const auto g = support::random_grid(800, 3, 10, 0.0, 2);
  MissingnessSpec m;
  m.mechanism = Mechanism::MAR;
  m.rate = 0.3;
  m.conditioning_feature = "f1";
  const auto out = apply_missingness(g, m);
  double hi_n = 0, hi_m = 0, lo_n = 0, lo_m = 0, total = 0, masked = 0;
  for (std::size_t s = 0; s < g.n_stays(); ++s)
    for (Eigen::Index b = 0; b < 10; ++b) {
      EXPECT_TRUE(out.grid.data[s].mask(1, b));
      const bool mk = !out.grid.data[s].mask(2, b);
      (g.data[s].values(1, b) > 3.0 ? hi_n : lo_n) += 1;
      (g.data[s].values(1, b) > 3.0 ? hi_m : lo_m) += mk;
      total += 2;
      masked += mk + !out.grid.data[s].mask(0, b);
    }
  EXPECT_GT(hi_m / hi_n, 2 * lo_m / lo_n);
  EXPECT_NEAR(masked / total, 0.3, 0.01);
}

TEST(Missingness, ComposesAsProductOfSurvivals) {
  const auto g = support::random_grid(1000, 10, 10, 0.0, 4);
  MissingnessSpec a;
  a.rate = 0.2;
  a.seed = 1;
  MissingnessSpec b;
  b.mechanism = Mechanism::MNAR;
  b.rate = 0.25;
  b.seed = 2;
  const auto first = apply_missingness(g, a);
  const auto second = apply_missingness(first, b);
  for (std::size_t s = 0; s < g.n_stays(); ++s)
    for (Eigen::Index i = 0; i < g.data[s].mask.size(); ++i)
      if (second.grid.data[s].mask.data()[i]) ASSERT_TRUE(first.grid.data[s].mask.data()[i]);
  EXPECT_NEAR(masked_fraction(g, second.grid), 1 - 0.8 * 0.75, 0.01);
  // truth of the composed corruption is the original grid
  EXPECT_EQ(second.truth[0], first.truth[0]);
}

TEST(Missingness, Errors) {
  const auto g = support::random_grid(5, 3, 4, 0.0, 4);
  MissingnessSpec m;
  m.mechanism = Mechanism::MAR;
  m.rate = 0.2;
  m.conditioning_feature = "nope";
  EXPECT_THROW(apply_missingness(g, m), ConfigError);
  m.rate = 1.0;
  EXPECT_THROW(m.validate(), ConfigError);
  EXPECT_THROW(mechanism_from_string("MXAR"), ConfigError);
  EXPECT_EQ(missingness_from_json(nlohmann::json{{"mechanism", "MNAR"}, {"rate", 0.1}}).mechanism, Mechanism::MNAR);
}
