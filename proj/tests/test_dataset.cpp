#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "qrcate/csv.hpp"
#include "qrcate/dataset.hpp"

using namespace qrcate;

namespace {

Dataset tiny() {
  Dataset d;
  d.x = Matrix(4, 2);
  d.x << 0.5, 1.0, -1.25, 2.0, 3.0, 1e-17, 0.1, -7.0;
  d.s = IntVector(4);
  d.s << 1, 1, 0, 0;
  d.a = IntVector(4);
  d.a << 0, 1, 1, 0;
  d.y = Vector(4);
  d.y << 1.0 / 3.0, -2.0, 4.5, 0.0;
  d.e = Vector::Constant(4, 0.5);
  d.feature_names = {"u", "v"};
  return d;
}

}  // namespace

TEST(Folds, ExhaustiveSmallSizes) {
  for (int k : {2, 3}) {
    for (int n = 2; n <= 200; ++n) {
      std::vector<int> strata(static_cast<std::size_t>(n));
      // Two strata; the smaller is empty or has at least k rows.
      const int trial = (n % 5 == 0 || n < 2 * k) ? n : std::max(k, n / 3);
      for (int i = 0; i < n; ++i) strata[static_cast<std::size_t>(i)] = (i * 7) % n < trial ? 1 : 0;
      int counts[2] = {0, 0};
      for (int s : strata) ++counts[s];
      if ((counts[0] > 0 && counts[0] < k) || (counts[1] > 0 && counts[1] < k)) {
        EXPECT_THROW(make_folds(strata, k, 11), DataError);
        continue;
      }
      const FoldPlan plan = make_folds(strata, k, 11);
      ASSERT_EQ(plan.assignment.size(), static_cast<std::size_t>(n));
      std::map<std::pair<int, int>, int> size;
      for (int i = 0; i < n; ++i) {
        const int f = plan.assignment[static_cast<std::size_t>(i)];
        ASSERT_GE(f, 0);
        ASSERT_LT(f, k);
        ++size[{strata[static_cast<std::size_t>(i)], f}];
      }
      for (int s : {0, 1}) {
        if (counts[s] == 0) continue;
        int lo = n;
        int hi = 0;
        for (int f = 0; f < k; ++f) {
          lo = std::min(lo, size[{s, f}]);
          hi = std::max(hi, size[{s, f}]);
        }
        EXPECT_LE(hi - lo, 1) << "n=" << n << " k=" << k << " stratum " << s;
      }
      EXPECT_EQ(plan.assignment, make_folds(strata, k, 11).assignment);
      std::size_t total = 0;
      for (int f = 0; f < k; ++f) total += plan.rows_in(f).size();
      EXPECT_EQ(total, static_cast<std::size_t>(n));
    }
  }
}

TEST(Folds, RejectsSingleFold) {
  std::vector<int> strata(10, 1);
  EXPECT_THROW(make_folds(strata, 1, 0), ConfigError);
}

TEST(Dataset, ValidateCatchesEachInvariant) {
  EXPECT_NO_THROW(validate(tiny()));
  Dataset d = tiny();
  d.s(0) = 2;
  EXPECT_THROW(validate(d), DataError);
  d = tiny();
  d.a(1) = -1;
  EXPECT_THROW(validate(d), DataError);
  d = tiny();
  d.y(2) = std::nan("");
  EXPECT_THROW(validate(d), DataError);
  d = tiny();
  d.e(0) = 1.0;
  EXPECT_THROW(validate(d), DataError);
  d = tiny();
  d.e(2) = 1.0;  // external e is informational
  EXPECT_NO_THROW(validate(d));
  try {
    d = tiny();
    d.x(3, 1) = INFINITY;
    validate(d);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), "non_finite");
    EXPECT_EQ(e.row(), 3);
  }
}

TEST(Dataset, SubsetAndConcat) {
  const Dataset d = tiny();
  const RowList rows = {3, 1};
  const Dataset s = d.subset(rows);
  EXPECT_EQ(s.n(), 2);
  EXPECT_EQ(s.y(0), 0.0);
  EXPECT_EQ(s.a(1), 1);
  const Dataset c = Dataset::concat(d, s);
  EXPECT_EQ(c.n(), 6);
  EXPECT_EQ(c.x(5, 0), -1.25);
  EXPECT_EQ(d.trial_rows(), (RowList{0, 1}));
  EXPECT_EQ(d.rows_where(0, 1), (RowList{2}));
}

TEST(Csv, RoundTripIsBitExact) {
  const Dataset d = tiny();
  std::stringstream buffer;
  write_csv(buffer, d);
  const Dataset back = table_to_dataset(parse_csv(buffer), written_schema(d));
  EXPECT_EQ(back.x, d.x);
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(back.s, d.s);
  EXPECT_EQ(back.a, d.a);
  EXPECT_EQ(back.e, d.e);
  EXPECT_EQ(back.feature_names, d.feature_names);
}

TEST(Csv, CategoricalOneHotLexicographic) {
  std::stringstream in("c,x,a,y\nb,1,0,1\na,2,1,2\nc,3,1,3\n\"b\",4,0,4\n");
  CsvSchema schema;
  schema.x = {"x"};
  schema.categorical = {"c"};
  const Dataset d = table_to_dataset(parse_csv(in), schema);
  ASSERT_EQ(d.d(), 4);
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"x", "c=a", "c=b", "c=c"}));
  Matrix expected(4, 4);
  expected << 1, 0, 1, 0, 2, 1, 0, 0, 3, 0, 0, 1, 4, 0, 1, 0;
  EXPECT_EQ(d.x, expected);
  EXPECT_EQ(d.s, IntVector::Ones(4));
  EXPECT_EQ(d.e, Vector::Constant(4, 0.5));
}

TEST(Csv, MissingColumnIsNamed) {
  std::stringstream in("x,a\n1,0\n");
  CsvSchema schema;
  schema.x = {"x"};
  try {
    table_to_dataset(parse_csv(in), schema);
    FAIL();
  } catch (const MissingColumnError& e) {
    EXPECT_EQ(e.column(), "y");
  }
}

TEST(Csv, BadCellsAndShapes) {
  std::stringstream ragged("x,a,y\n1,0\n");
  EXPECT_THROW(parse_csv(ragged), DataError);
  std::stringstream text("x,a,y\n1,0,abc\n");
  CsvSchema schema;
  schema.x = {"x"};
  EXPECT_THROW(table_to_dataset(parse_csv(text), schema), ParseError);
  std::stringstream nonbinary("x,a,y\n1,0.5,1\n");
  EXPECT_THROW(table_to_dataset(parse_csv(nonbinary), schema), DataError);
  EXPECT_THROW(read_csv_table("/nonexistent/file.csv"), FileError);
}
