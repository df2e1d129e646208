#include <gtest/gtest.h>

#include <fstream>

#include "lactate/grid_io.hpp"
#include "lactate/ingest.hpp"
#include "support.hpp"

using namespace lactate;
using namespace lactate::ingest;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

SchemaMap lab_schema() {
  return schema_from_json(nlohmann::json::parse(R"({
    "tables": [{"table": "lab", "file": "lab.csv", "stay_column": "stay", "offset_column": "offset",
                "feature_column": "name", "value_column": "value"},
               {"table": "nurse", "file": "nurse.csv", "stay_column": "stay", "offset_column": "offset",
                "feature_column": "name", "value_column": "value"}],
    "aliases": {"resp_rate": ["Respiratory Rate"], "lactate": []}
  })"));
}

EventRecord ev(std::string stay, std::string feature, std::int64_t offset, double value) {
  return EventRecord{"", std::move(stay), std::move(feature), offset, value};
}

StaticTable statics_of(std::initializer_list<std::tuple<std::string, double, double>> rows) {
  StaticTable t;
  for (const auto& [id, age, los] : rows) {
    StayStatic s;
    s.statics.age = age;
    s.los_minutes = los;
    t[id] = s;
  }
  return t;
}

FeatureDictionary small_dict() {
  return FeatureDictionary({FeatureSpec{"lactate", {}, 0.1, 30.0}, FeatureSpec{"heart_rate", {}, 20, 300}});
}

}  // namespace

// --- load_events ------------------------------------------------------------

TEST(LoadEvents, SkipsUnparseableValue) {
  const auto dir = support::scratch_dir("load1");
  write(dir / "lab.csv", "stay,offset,name,value\n1,10,lactate,2.0\n1,20,lactate,n/a\n1,30,lactate,3.5\n");
  const auto r = load_events({dir / "lab.csv"}, lab_schema());
  ASSERT_EQ(r.events.size(), 2u);
  EXPECT_EQ(r.report.rows_read, 3u);
  EXPECT_EQ(r.report.rows_skipped, 1u);
  EXPECT_EQ(r.events[1].offset_minutes, 30);
  EXPECT_EQ(r.events[1].value, 3.5);
}

TEST(LoadEvents, HeaderOnly) {
  const auto dir = support::scratch_dir("load2");
  write(dir / "lab.csv", "stay,offset,name,value\n");
  const auto r = load_events({dir / "lab.csv"}, lab_schema());
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(r.report.rows_read, 0u);
  EXPECT_EQ(r.report.rows_skipped, 0u);
}

TEST(LoadEvents, MissingBoundColumn) {
  const auto dir = support::scratch_dir("load3");
  write(dir / "lab.csv", "stay,time,name,value\n1,10,lactate,2.0\n");
  EXPECT_THROW(load_events({dir / "lab.csv"}, lab_schema()), DataError);
}

TEST(LoadEvents, MissingFile) {
  const auto dir = support::scratch_dir("load4");
  EXPECT_THROW(load_events({dir / "lab.csv"}, lab_schema()), DataError);
}

TEST(LoadEvents, MostlyUnparseableTableRejected) {
  const auto dir = support::scratch_dir("load5");
  write(dir / "lab.csv", "stay,offset,name,value\n1,10,lactate,x\n1,20,lactate,y\n1,30,lactate,3\n");
  EXPECT_THROW(load_events({dir / "lab.csv"}, lab_schema()), DataError);
}

TEST(LoadEvents, NegativeOffsetsDropped) {
  const auto dir = support::scratch_dir("load6");
  write(dir / "lab.csv", "stay,offset,name,value\n1,-10,lactate,2\n1,0,lactate,3\n");
  const auto r = load_events({dir / "lab.csv"}, lab_schema());
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.report.negative_offsets, 1u);
}

// --- canonicalize -----------------------------------------------------------

TEST(Canonicalize, SameFeatureFromTwoTables) {
  const auto dir = support::scratch_dir("canon");
  write(dir / "lab.csv", "stay,offset,name,value\n1,10,Respiratory Rate,20\n");
  write(dir / "nurse.csv", "stay,offset,name,value\n1,20,Respiratory Rate,22\n");
  const auto schema = lab_schema();
  auto loaded = load_events({dir / "lab.csv", dir / "nurse.csv"}, schema);
  const auto c = canonicalize(loaded.events, schema);
  ASSERT_EQ(c.events.size(), 2u);
  EXPECT_EQ(c.events[0].feature, "resp_rate");
  EXPECT_EQ(c.events[1].feature, "resp_rate");
}

TEST(Canonicalize, UnknownDroppedCanonicalKept) {
  const auto c = canonicalize({ev("1", "foo", 0, 1), ev("1", "lactate", 0, 2), ev("1", "foo", 5, 1)}, lab_schema());
  ASSERT_EQ(c.events.size(), 1u);
  EXPECT_EQ(c.events[0].feature, "lactate");
  EXPECT_EQ(c.dropped, 2u);
  EXPECT_EQ(c.dropped_by_name.at("foo"), 2u);
}

TEST(Canonicalize, AliasMustBeInjective) {
  SchemaMap s;
  s.add_alias("HR", "heart_rate");
  EXPECT_THROW(s.add_alias("HR", "resp_rate"), ConfigError);
}

// --- select_cohort ----------------------------------------------------------

TEST(SelectCohort, TypicalStayRetained) {
  const auto st = statics_of({{"a", 61.8, 6.8 * 24 * 60}});
  const auto r = select_cohort({ev("a", "lactate", 0, 2), ev("a", "lactate", 60, 2), ev("a", "lactate", 90, 3)}, {}, st);
  EXPECT_TRUE(r.retained.contains("a"));
}

TEST(SelectCohort, AgeBoundaryIsStrict) {
  const auto st = statics_of({{"a", 18.0, 2000}, {"b", 18.5, 2000}});
  const std::vector<EventRecord> e{ev("a", "lactate", 0, 2), ev("a", "lactate", 9, 2), ev("b", "lactate", 0, 2),
                                   ev("b", "lactate", 9, 2)};
  const auto r = select_cohort(e, {}, st);
  EXPECT_FALSE(r.retained.contains("a"));
  EXPECT_TRUE(r.retained.contains("b"));
  EXPECT_EQ(r.excluded_age, 1u);
}

TEST(SelectCohort, SingleLactateExcluded) {
  const auto st = statics_of({{"a", 40, 2000}});
  const auto r = select_cohort({ev("a", "lactate", 0, 2), ev("a", "heart_rate", 0, 80)}, {}, st);
  EXPECT_TRUE(r.retained.empty());
  EXPECT_EQ(r.excluded_lactate, 1u);
}

TEST(SelectCohort, OutOfRangeLactateNotCounted) {
  const auto st = statics_of({{"a", 40, 2000}});
  const auto dict = small_dict();
  const auto r = select_cohort({ev("a", "lactate", 0, 2), ev("a", "lactate", 10, 45)}, {}, st, &dict);
  EXPECT_TRUE(r.retained.empty());
  EXPECT_EQ(r.invalid_lactate_events, 1u);
}

TEST(SelectCohort, StayMissingFromStatics) {
  const auto st = statics_of({{"a", 40, 2000}});
  try {
    select_cohort({ev("zz", "lactate", 0, 2)}, {}, st);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
}

TEST(SelectCohort, OrderInvariant) {
  auto st = statics_of({{"a", 40, 2000}, {"b", 70, 1080}, {"c", 30, 5000}});
  std::vector<EventRecord> e{ev("a", "lactate", 0, 2), ev("b", "lactate", 5, 3), ev("a", "lactate", 9, 2),
                             ev("c", "lactate", 1, 1), ev("b", "lactate", 7, 3)};
  const auto r1 = select_cohort(e, {}, st);
  std::reverse(e.begin(), e.end());
  const auto r2 = select_cohort(e, {}, st);
  EXPECT_EQ(r1.retained, r2.retained);
  EXPECT_EQ(r1.retained, (std::set<std::string>{"a", "b"}));
}

TEST(SelectCohort, ThresholdsMustBePositive) {
  CohortCriteria c;
  c.min_los_minutes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// --- resample ---------------------------------------------------------------

TEST(Resample, LastRecordWins) {
  const std::vector<FeatureSpec> f{{"lactate", {}}};
  const auto g = resample({ev("s", "lactate", 10, 1.0), ev("s", "lactate", 100, 2.0)}, f);
  ASSERT_EQ(g.data[0].n_bins(), 1);
  EXPECT_EQ(g.data[0].values(0, 0), 2.0);
}

TEST(Resample, HalfOpenBins) {
  const std::vector<FeatureSpec> f{{"lactate", {}}};
  const auto g = resample({ev("s", "lactate", 120, 2.0), ev("s", "lactate", 119, 1.0)}, f);
  ASSERT_EQ(g.data[0].n_bins(), 2);
  EXPECT_EQ(g.data[0].values(0, 0), 1.0);
  EXPECT_EQ(g.data[0].values(0, 1), 2.0);
}

TEST(Resample, EqualOffsetsGoToLaterRecord) {
  const std::vector<FeatureSpec> f{{"lactate", {}}};
  const auto g = resample({ev("s", "lactate", 50, 1.0), ev("s", "lactate", 50, 7.0)}, f);
  EXPECT_EQ(g.data[0].values(0, 0), 7.0);
}

TEST(Resample, UnobservedFeatureRowAllFalse) {
  const std::vector<FeatureSpec> f{{"lactate", {}}, {"heart_rate", {}}};
  const auto g = resample({ev("s", "lactate", 250, 1.0)}, f);
  EXPECT_EQ(g.data[0].n_bins(), 3);
  EXPECT_FALSE(g.data[0].mask.row(1).any());
  EXPECT_NO_THROW(g.validate());
}

TEST(Resample, ReBinningIsIdentity) {
  const auto g = support::random_grid(4, 3, 6, 0.4, 11);
  const auto again = resample(grid_to_events(g), g.features, g.bin_width_minutes);
  ASSERT_EQ(again.n_stays(), g.n_stays());
  for (std::size_t s = 0; s < g.n_stays(); ++s) {
    const auto& a = g.data[s];
    const auto& b = again.data[s];
    // trailing all-missing bins are not represented by events
    ASSERT_LE(b.n_bins(), a.n_bins());
    for (Eigen::Index c = 0; c < a.n_bins(); ++c)
      for (Eigen::Index r = 0; r < 3; ++r) {
        const bool obs = c < b.n_bins() && b.mask(r, c);
        ASSERT_EQ(obs, a.mask(r, c));
        if (obs) ASSERT_EQ(b.values(r, c), a.values(r, c));
      }
  }
}

TEST(Resample, NegativeOffsetRejected) {
  EXPECT_THROW(resample({ev("s", "lactate", -1, 1.0)}, {{"lactate", {}}}), std::invalid_argument);
}

// --- mask_outliers ----------------------------------------------------------

TEST(MaskOutliers, OutOfRangeMaskedBoundaryKept) {
  auto g = resample({ev("s", "lactate", 0, 45.0), ev("s", "lactate", 130, 30.0), ev("s", "lactate", 250, 0.1)},
                    small_dict().specs());
  const auto [out, rep] = mask_outliers(g, small_dict());
  EXPECT_FALSE(out.data[0].mask(0, 0));
  EXPECT_TRUE(is_missing(out.data[0].values(0, 0)));
  EXPECT_TRUE(out.data[0].mask(0, 1));
  EXPECT_TRUE(out.data[0].mask(0, 2));
  EXPECT_EQ(rep.total, 1u);
  EXPECT_EQ(rep.per_feature.at("lactate"), 1u);
}

TEST(MaskOutliers, InRangeUnchanged) {
  auto g = resample({ev("s", "lactate", 0, 2.0), ev("s", "heart_rate", 10, 80)}, small_dict().specs());
  const auto [out, rep] = mask_outliers(g, small_dict());
  EXPECT_EQ(rep.total, 0u);
  EXPECT_EQ(out.data[0].mask, g.data[0].mask);
  EXPECT_EQ(out.data[0].values(0, 0), 2.0);
}

TEST(MaskOutliers, NeverUnmasks) {
  auto g = support::random_grid(3, 2, 5, 0.5, 3);
  g.features = {FeatureSpec{"lactate", {}, 1.0, 3.0}, FeatureSpec{"f1", {}, 0.0, 100.0}};
  const auto [out, rep] = mask_outliers(g, FeatureDictionary(g.features));
  for (std::size_t s = 0; s < g.n_stays(); ++s)
    for (Eigen::Index i = 0; i < g.data[s].mask.size(); ++i)
      if (!g.data[s].mask.data()[i]) EXPECT_FALSE(out.data[s].mask.data()[i]);
}

TEST(MaskOutliers, FeatureAbsentFromDictionary) {
  auto g = resample({ev("s", "lactate", 0, 2.0)}, {{"lactate", {}}, {"mystery", {}}});
  EXPECT_THROW(mask_outliers(g, small_dict()), DataError);
}

// --- pipeline on the shipped fixture ----------------------------------------

TEST(IngestFixture, GoldenGrid) {
  const auto root = support::source_dir();
  const auto r = ingest_directory(root / "tests/fixtures/eicu_toy", load_schema(root / "config/schema_eicu.json"),
                                  load_feature_dictionary(root / "config/features.json"), {});
  const auto& g = r.grid;
  ASSERT_EQ(g.n_stays(), 2u);
  EXPECT_EQ(g.stays[0].stay_id, "101");
  EXPECT_EQ(g.stays[1].stay_id, "102");
  EXPECT_EQ(g.stays[0].patient_id, "P1");
  EXPECT_EQ(g.stays[1].statics.age, 90.0);
  EXPECT_EQ(g.stays[0].statics.admission_dx, "Sepsis");
  EXPECT_NO_THROW(g.validate());

  const auto lac = *g.feature_index("lactate"), hr = *g.feature_index("heart_rate"), rr = *g.feature_index("resp_rate"),
             spo2 = *g.feature_index("spo2"), ph = *g.feature_index("ph"), temp = *g.feature_index("temperature"),
             glu = *g.feature_index("glucose");
  const auto& a = g.data[0];
  ASSERT_EQ(a.n_bins(), 5);
  EXPECT_EQ(a.values(lac, 0), 2.5);
  EXPECT_FALSE(a.mask(lac, 1));
  EXPECT_FALSE(a.mask(lac, 2));
  EXPECT_FALSE(a.mask(lac, 3));  // 45 mmol/L masked as outlier
  EXPECT_EQ(a.values(lac, 4), 3.0);
  EXPECT_EQ(a.values(hr, 0), 90.0);
  EXPECT_EQ(a.values(hr, 1), 95.0);
  EXPECT_EQ(a.values(spo2, 0), 97.0);
  EXPECT_EQ(a.values(ph, 0), 7.31);
  EXPECT_FALSE(a.mask.row(glu).any());
  EXPECT_EQ(a.mask.count(), 6);

  const auto& b = g.data[1];
  ASSERT_EQ(b.n_bins(), 3);
  EXPECT_EQ(b.values(lac, 0), 1.1);
  EXPECT_EQ(b.values(lac, 2), 4.2);
  EXPECT_EQ(b.values(rr, 0), 18.0);
  EXPECT_EQ(b.values(rr, 2), 20.0);
  EXPECT_EQ(b.values(hr, 1), 100.0);
  EXPECT_EQ(b.values(temp, 2), 37.5);
  EXPECT_EQ(b.mask.count(), 6);

  EXPECT_EQ(r.cohort.considered, 5u);
  EXPECT_EQ(r.cohort.excluded_age, 1u);
  EXPECT_EQ(r.cohort.excluded_los, 1u);
  EXPECT_EQ(r.cohort.excluded_lactate, 1u);
  EXPECT_EQ(r.cohort.invalid_lactate_events, 1u);
  EXPECT_EQ(r.outliers.total, 1u);
  EXPECT_EQ(r.load.negative_offsets, 1u);
  EXPECT_EQ(r.load.rows_skipped, 1u);
  EXPECT_EQ(r.events_unmapped, 1u);
}

TEST(IngestFixture, EmptyDirectoryIsConfigError) {
  const auto root = support::source_dir();
  const auto dir = support::scratch_dir("empty_data");
  EXPECT_THROW(ingest_directory(dir, load_schema(root / "config/schema_eicu.json"),
                                load_feature_dictionary(root / "config/features.json"), {}),
               ConfigError);
}
