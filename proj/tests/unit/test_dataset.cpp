#include "inverse_uq/dataset.hpp"
#include "inverse_uq/errors.hpp"
#include "inverse_uq/logging.hpp"
#include "inverse_uq/random.hpp"
#include "inverse_uq/util.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace inverse_uq;
using namespace inverse_uq::data;
using test_support::TempDir;

namespace {

std::string toy(const std::string& name) { return (test_support::data_dir() / "toy" / name).string(); }

// Data lines per basin, counted straight from the file.
std::map<std::string, int> count_lines(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::map<std::string, int> counts;
  while (std::getline(in, line))
    if (!line.empty()) ++counts[line.substr(0, line.find(','))];
  return counts;
}

BasinRecord make_record(const std::string& id, Eigen::Index days, const std::string& first = "2000-01-01",
                        Eigen::Index drivers = 2) {
  BasinRecord r;
  r.basin_id = id;
  const Date start = parse_date(first);
  for (Eigen::Index t = 0; t < days; ++t) r.dates.push_back(start + std::chrono::days(t));
  r.drivers = Matrix::Zero(days, drivers);
  for (Eigen::Index t = 0; t < days; ++t)
    for (Eigen::Index c = 0; c < drivers; ++c) r.drivers(t, c) = std::sin(0.1 * static_cast<double>(t) + c);
  r.response = Vector::LinSpaced(days, 0.0, 1.0);
  return r;
}

Dataset make_dataset(int basins, Eigen::Index days, const std::string& first = "2000-01-01") {
  Dataset ds;
  ds.driver_names = {"a", "b"};
  ds.static_names = {"s"};
  for (int i = 0; i < basins; ++i) {
    BasinRecord r = make_record("basin" + std::to_string(1000 + i), days, first);
    r.statics = Vector::Constant(1, static_cast<double>(i));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

void write(const std::string& path, const std::string& text) { util::write_file(path, text); }

}  // namespace

// ---- load_dataset ------------------------------------------------------------------

TEST(LoadDataset, ToyFixtureHasTwoRecordsOf730Days) {
  const Dataset ds = load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv"));
  const auto expected = count_lines(toy("drivers.csv"));
  ASSERT_EQ(ds.records.size(), 2u);
  ASSERT_EQ(expected.size(), 2u);
  for (const auto& r : ds.records) {
    EXPECT_EQ(r.length(), expected.at(r.basin_id));
    EXPECT_EQ(r.length(), 730);
    EXPECT_EQ(r.drivers.rows(), 730);
    EXPECT_EQ(r.drivers.cols(), 5);
    EXPECT_EQ(r.response.size(), 730);
    ASSERT_TRUE(r.statics.has_value());
    EXPECT_EQ(r.statics->size(), 3);
  }
  EXPECT_EQ(ds.driver_names, (std::vector<std::string>{"d1", "d2", "d3", "d4", "d5"}));
  EXPECT_EQ(ds.static_names, (std::vector<std::string>{"s1", "s2", "s3"}));
  EXPECT_NO_THROW(ds.validate());
}

TEST(LoadDataset, ToyStaticsMatchTheCsvRow) {
  const Dataset ds = load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv"));
  const BasinRecord* b2 = ds.find("b02");
  ASSERT_NE(b2, nullptr);
  EXPECT_EQ(*b2->statics, (Vector(3) << 0.1, 300, 0.75).finished());
}

TEST(LoadDataset, EmptyResponseFileIsAnErrorWithNoPartialDataset) {
  TempDir dir;
  write(dir.str("response.csv"), "");
  EXPECT_THROW(load_dataset(toy("drivers.csv"), dir.str("response.csv"), toy("statics.csv")), ParseError);
  write(dir.str("response.csv"), "basin_id,date,flow\n");
  EXPECT_THROW(load_dataset(toy("drivers.csv"), dir.str("response.csv"), toy("statics.csv")), ParseError);
}

TEST(LoadDataset, MalformedRowReportsItsLine) {
  TempDir dir;
  write(dir.str("d.csv"), "basin_id,date,d1\nb,2000-01-01,1\nb,2000-01-02,oops\n");
  write(dir.str("r.csv"), "basin_id,date,flow\nb,2000-01-01,1\nb,2000-01-02,2\n");
  try {
    load_dataset(dir.str("d.csv"), dir.str("r.csv"), "");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(LoadDataset, DuplicateBasinDateIsAnIntegrityError) {
  TempDir dir;
  write(dir.str("d.csv"), "basin_id,date,d1\nb,2000-01-01,1\nb,2000-01-01,2\n");
  write(dir.str("r.csv"), "basin_id,date,flow\nb,2000-01-01,1\n");
  EXPECT_THROW(load_dataset(dir.str("d.csv"), dir.str("r.csv"), ""), IntegrityError);
}

TEST(LoadDataset, ColumnCountMismatchIsASchemaError) {
  TempDir dir;
  write(dir.str("d.csv"), "basin_id,date,d1,d2\nb,2000-01-01,1\n");
  write(dir.str("r.csv"), "basin_id,date,flow\nb,2000-01-01,1\n");
  EXPECT_THROW(load_dataset(dir.str("d.csv"), dir.str("r.csv"), ""), SchemaError);
}

TEST(LoadDataset, SchemaRejectsUnexpectedColumns) {
  Schema schema;
  schema.drivers = {"p", "e", "x", "y", "z"};
  EXPECT_THROW(load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv"), schema), SchemaError);
}

TEST(LoadDataset, MissingFileIsAnIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/d.csv", toy("response.csv"), ""), IoError);
}

TEST(LoadDataset, BasinWithoutStaticsRowHasAbsentStatics) {
  TempDir dir;
  write(dir.str("s.csv"), "basin_id,s1,s2,s3\nb01,1,2,3\n");
  const Dataset ds = load_dataset(toy("drivers.csv"), toy("response.csv"), dir.str("s.csv"));
  EXPECT_TRUE(ds.find("b01")->statics.has_value());
  EXPECT_FALSE(ds.find("b02")->statics.has_value());
}

TEST(LoadDataset, MissingTokensBecomeNaN) {
  TempDir dir;
  write(dir.str("d.csv"), "basin_id,date,d1\nb,2000-01-01,NA\nb,2000-01-02,\n");
  write(dir.str("r.csv"), "basin_id,date,flow\nb,2000-01-01,1\nb,2000-01-02,NA\n");
  const Dataset ds = load_dataset(dir.str("d.csv"), dir.str("r.csv"), "");
  EXPECT_TRUE(std::isnan(ds.records[0].drivers(0, 0)));
  EXPECT_TRUE(std::isnan(ds.records[0].drivers(1, 0)));
  EXPECT_TRUE(std::isnan(ds.records[0].response(1)));
}

TEST(LoadDataset, WriteThenLoadRoundTrips) {
  TempDir dir;
  const Dataset ds = load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv"));
  write_dataset(ds, dir.str("d.csv"), dir.str("r.csv"), dir.str("s.csv"));
  const Dataset back = load_dataset(dir.str("d.csv"), dir.str("r.csv"), dir.str("s.csv"));
  ASSERT_EQ(back.records.size(), ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    EXPECT_EQ(back.records[i].dates, ds.records[i].dates);
    EXPECT_EQ(back.records[i].drivers, ds.records[i].drivers);
    EXPECT_EQ(back.records[i].response, ds.records[i].response);
    EXPECT_EQ(*back.records[i].statics, *ds.records[i].statics);
  }
}

TEST(Dates, ParseAndFormat) {
  EXPECT_EQ(format_date(parse_date("1996-02-29")), "1996-02-29");
  EXPECT_EQ(year_of(parse_date("1980-12-31")), 1980);
  EXPECT_THROW(parse_date("1997-02-29"), std::invalid_argument);
  EXPECT_THROW(parse_date("1997/02/01"), std::invalid_argument);
}

TEST(DatasetInvariants, NonIncreasingDatesAreRejected) {
  Dataset ds = make_dataset(1, 10);
  std::swap(ds.records[0].dates[3], ds.records[0].dates[4]);
  EXPECT_THROW(ds.validate(), IntegrityError);
}

// ---- make_windows --------------------------------------------------------------------

TEST(MakeWindows, T730GivesStartsAt0_182_364) {
  const auto w = make_windows(make_record("b", 730), 365, 182);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].start_index, 0);
  EXPECT_EQ(w[1].start_index, 182);
  EXPECT_EQ(w[2].start_index, 364);
}

TEST(MakeWindows, ExactLengthGivesOneWindow) { EXPECT_EQ(make_windows(make_record("b", 365), 365, 182).size(), 1u); }

TEST(MakeWindows, ShortRecordGivesNoWindows) { EXPECT_TRUE(make_windows(make_record("b", 364), 365, 182).empty()); }

TEST(MakeWindows, DefaultsAre365And182) {
  EXPECT_EQ(kDefaultLookback, 365);
  EXPECT_EQ(kDefaultStride, 182);
  EXPECT_EQ(make_windows(make_record("b", 730)).size(), 3u);
}

TEST(MakeWindows, NonPositiveArgumentsThrow) {
  const BasinRecord r = make_record("b", 10);
  EXPECT_THROW(make_windows(r, 0, 1), std::invalid_argument);
  EXPECT_THROW(make_windows(r, 1, 0), std::invalid_argument);
}

TEST(MakeWindows, InputsAreDriversThenResponse) {
  BasinRecord r = make_record("b", 20);
  r.statics = Vector::Constant(2, 4.0);
  const auto w = make_windows(r, 5, 3);
  ASSERT_FALSE(w.empty());
  EXPECT_EQ(w[1].inputs.cols(), 3);
  EXPECT_EQ(w[1].inputs.leftCols(2), r.drivers.middleRows(3, 5));
  EXPECT_EQ(w[1].inputs.col(2), r.response.segment(3, 5));
  EXPECT_EQ(*w[1].target_statics, *r.statics);
}

TEST(MakeWindows, WindowsTouchingMissingValuesAreDropped) {
  BasinRecord r = make_record("b", 30);
  r.response(12) = std::nan("");
  const auto w = make_windows(r, 10, 5);
  std::set<Eigen::Index> starts;
  for (const auto& s : w) {
    starts.insert(s.start_index);
    EXPECT_TRUE(s.inputs.allFinite());
  }
  EXPECT_EQ(starts, (std::set<Eigen::Index>{0, 15, 20}));
}

TEST(MakeWindowsProperty, ExhaustiveAndInsideTheRecord) {
  Rng rng(5);
  std::uniform_int_distribution<Eigen::Index> len(1, 400), lb(1, 120), st(1, 60);
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index t = len(rng), l = lb(rng), s = st(rng);
    const auto w = make_windows(make_record("b", t), l, s);
    const Eigen::Index expected = t >= l ? (t - l) / s + 1 : 0;
    ASSERT_EQ(static_cast<Eigen::Index>(w.size()), expected) << t << " " << l << " " << s;
    for (std::size_t k = 0; k < w.size(); ++k) {
      EXPECT_EQ(w[k].start_index, static_cast<Eigen::Index>(k) * s);
      EXPECT_LE(w[k].start_index + w[k].length, t);
      EXPECT_EQ(w[k].length, l);
    }
  }
}

// ---- split -------------------------------------------------------------------------

TEST(Split, DefaultCountOn531BasinsIs400And131) {
  Dataset ds;
  ds.driver_names = {"a"};
  for (int i = 0; i < 531; ++i) {
    BasinRecord r;
    r.basin_id = std::to_string(i);
    r.dates = {parse_date("2001-01-01")};
    r.drivers = Matrix::Zero(1, 1);
    r.response = Vector::Zero(1);
    ds.records.push_back(r);
  }
  const SplitSpec spec = make_split_spec(ds, default_train_count(531), 3);
  EXPECT_EQ(spec.train_basins.size(), 400u);
  EXPECT_EQ(spec.test_basins.size(), 131u);
  const SplitResult parts = split(ds, spec);
  EXPECT_EQ(parts.train_basins.train.records.size(), 400u);
  EXPECT_EQ(parts.test_basins.test.records.size(), 131u);
}

TEST(Split, DefaultYearsFollowTheProtocol) {
  const SplitSpec spec;
  EXPECT_EQ(spec.train_years, (YearRange{1980, 2000}));
  EXPECT_EQ(spec.val_years, (YearRange{2000, 2005}));
  EXPECT_EQ(spec.test_years, (YearRange{2005, 2015}));
}

TEST(Split, EmptyValidationYearsLeaveOtherPartitionsAlone) {
  const Dataset ds = make_dataset(4, 3 * 366, "2000-01-01");
  SplitSpec spec = make_split_spec(ds, 2, 1);
  spec.train_years = {2000, 2001};
  spec.val_years = {};
  spec.test_years = {2001, 2003};
  const SplitResult parts = split(ds, spec);
  for (const auto& r : parts.train_basins.val.records) EXPECT_EQ(r.length(), 0);
  for (const auto& r : parts.train_basins.train.records) EXPECT_EQ(r.length(), 366);
  for (const auto& r : parts.test_basins.test.records) EXPECT_EQ(r.length(), 365 + 365);
}

TEST(Split, SeededAssignmentIsReproducible) {
  const Dataset ds = load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv"));
  const SplitSpec a = make_split_spec(ds, 1, 7);
  const SplitSpec b = make_split_spec(ds, 1, 7);
  EXPECT_EQ(a.train_basins, b.train_basins);
  EXPECT_EQ(a.test_basins, b.test_basins);
  EXPECT_EQ(split_hash(a), split_hash(b));
}

TEST(Split, UnknownBasinIsListedInTheError) {
  const Dataset ds = make_dataset(2, 400);
  SplitSpec spec = make_split_spec(ds, 1, 0);
  spec.test_basins.push_back("ghost1");
  spec.test_basins.push_back("ghost2");
  try {
    split(ds, spec);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("ghost1"), std::string::npos);
    EXPECT_NE(what.find("ghost2"), std::string::npos);
  }
}

TEST(Split, OverlappingYearsOrBasinsAreRejected) {
  const Dataset ds = make_dataset(2, 400);
  SplitSpec spec = make_split_spec(ds, 1, 0);
  spec.val_years = {1990, 2001};
  EXPECT_THROW(split(ds, spec), std::invalid_argument);
  spec = make_split_spec(ds, 1, 0);
  spec.test_basins.push_back(spec.train_basins[0]);
  EXPECT_THROW(split(ds, spec), std::invalid_argument);
}

TEST(SplitProperty, PartitionsAreDisjointAndReconstructTheDataset) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset ds = make_dataset(9, 6 * 365 + 1, "2000-01-01");
    SplitSpec spec = make_split_spec(ds, 6, seed);
    spec.train_years = {2000, 2003};
    spec.val_years = {2003, 2004};
    spec.test_years = {2004, 2006};
    const SplitResult parts = split(ds, spec);

    std::set<std::string> train_ids, test_ids;
    for (const auto& r : parts.train_basins.train.records) train_ids.insert(r.basin_id);
    for (const auto& r : parts.test_basins.train.records) test_ids.insert(r.basin_id);
    std::set<std::string> all;
    std::set_union(train_ids.begin(), train_ids.end(), test_ids.begin(), test_ids.end(),
                   std::inserter(all, all.end()));
    EXPECT_EQ(all.size(), ds.records.size());
    for (const auto& id : train_ids) EXPECT_FALSE(test_ids.contains(id));

    for (const Partition* p : {&parts.train_basins, &parts.test_basins}) {
      for (std::size_t i = 0; i < p->train.records.size(); ++i) {
        const BasinRecord& orig = *ds.find(p->train.records[i].basin_id);
        std::vector<Date> joined;
        for (const Dataset* d : {&p->train, &p->val, &p->test})
          joined.insert(joined.end(), d->records[i].dates.begin(), d->records[i].dates.end());
        EXPECT_EQ(joined, orig.dates);
        EXPECT_EQ(p->val.records[i].response, orig.response.segment(3 * 365 + 1, 365));
      }
    }
    EXPECT_EQ(parts.train_basins.val.period, Period::validation);
    EXPECT_EQ(parts.train_basins.test.period, Period::test);
  }
}

// ---- normalizer ----------------------------------------------------------------------

TEST(Normalizer, Column123HasMean2) {
  Dataset ds;
  ds.driver_names = {"a"};
  BasinRecord r = make_record("b", 3, "2000-01-01", 1);
  r.drivers << 1, 2, 3;
  r.response << 1, 2, 3;
  ds.records.push_back(r);
  const Normalizer n = fit_normalizer(ds);
  EXPECT_DOUBLE_EQ(n.driver_mean(0), 2.0);
  EXPECT_DOUBLE_EQ(n.response_mean, 2.0);
  // Population std, computed here by hand.
  EXPECT_NEAR(n.driver_std(0), std::sqrt(2.0 / 3.0), 1e-15);
}

TEST(Normalizer, RoundTripIsIdentity) {
  const Dataset ds = load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv"));
  const Normalizer n = fit_normalizer(ds);
  const Dataset back = n.invert(n.apply(ds));
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& a = ds.records[i];
    const auto& b = back.records[i];
    EXPECT_LT(((a.drivers - b.drivers).array().abs() / a.drivers.array().abs().max(1.0)).maxCoeff(), 1e-10);
    EXPECT_LT(((a.response - b.response).array().abs() / a.response.array().abs().max(1.0)).maxCoeff(), 1e-10);
    EXPECT_LT(((*a.statics - *b.statics).array().abs() / a.statics->array().abs().max(1.0)).maxCoeff(), 1e-10);
  }
}

TEST(Normalizer, TestDataUsesTrainStatistics) {
  const Dataset train = make_dataset(3, 100);
  Dataset test = make_dataset(3, 100);
  for (auto& r : test.records) r.drivers.col(0).array() += 5.0;
  const Normalizer n = fit_normalizer(train);
  const Dataset z = n.apply(test);
  double mean = 0.0;
  Eigen::Index count = 0;
  for (const auto& r : z.records) {
    mean += r.drivers.col(0).sum();
    count += r.drivers.rows();
  }
  mean /= static_cast<double>(count);
  EXPECT_GT(mean, 1.0);
  EXPECT_NEAR(mean, 5.0 / n.driver_std(0), 1e-9);
}

TEST(Normalizer, ConstantColumnGetsUnitStdAndAWarning) {
  Dataset ds = make_dataset(2, 50);
  for (auto& r : ds.records) r.drivers.col(1).setConstant(3.0);
  std::ostringstream log;
  logging::set_sink(&log);
  const Normalizer n = fit_normalizer(ds);
  logging::set_sink(&std::clog);
  EXPECT_EQ(n.driver_std(1), 1.0);
  ASSERT_EQ(n.flagged.size(), 1u);
  EXPECT_NE(n.flagged[0].find('b'), std::string::npos);
  EXPECT_NE(log.str().find("constant_column"), std::string::npos);
}

TEST(Normalizer, EmptyPartitionThrows) { EXPECT_THROW(fit_normalizer(Dataset{}), std::invalid_argument); }

TEST(Normalizer, JsonRoundTrip) {
  const Normalizer n = fit_normalizer(load_dataset(toy("drivers.csv"), toy("response.csv"), toy("statics.csv")));
  const Normalizer back = nlohmann::json(n).get<Normalizer>();
  EXPECT_EQ(back.driver_mean, n.driver_mean);
  EXPECT_EQ(back.driver_std, n.driver_std);
  EXPECT_EQ(back.static_std, n.static_std);
  EXPECT_EQ(back.response_mean, n.response_mean);
}
