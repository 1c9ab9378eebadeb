#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ecoglab/stats.hpp"

using namespace ecoglab;

// Expected values below were frozen from an independent reference
// implementation (double precision, printed to 15 significant digits).

TEST_CASE("mean, variance and median basics", "[stats]") {
  const std::vector<double> v{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
  CHECK(mean(v) == Catch::Approx(5.0));
  CHECK(sample_variance(v) == Catch::Approx(32.0 / 7.0));
  CHECK(median(v) == Catch::Approx(4.5));
  const std::vector<double> odd{3.0, 1.0, 2.0};
  CHECK(median(odd) == Catch::Approx(2.0));
  CHECK_THROWS_AS(mean(std::vector<double>{}), ContractViolation);
  CHECK_THROWS_AS(sample_variance(std::vector<double>{1.0}), ContractViolation);
}

TEST_CASE("regularized incomplete beta at frozen points", "[stats]") {
  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.4) == Catch::Approx(0.5248).epsilon(1e-10));
  CHECK(regularized_incomplete_beta(0.5, 0.5, 0.3) ==
        Catch::Approx(0.369010119565545).epsilon(1e-10));
  CHECK(regularized_incomplete_beta(5.0, 2.0, 0.8) == Catch::Approx(0.65536).epsilon(1e-10));
  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
}

TEST_CASE("two-sided student t tail probabilities", "[stats]") {
  CHECK(student_t_two_sided_p(2.0, 10) == Catch::Approx(0.0733880347707404).epsilon(1e-10));
  CHECK(student_t_two_sided_p(1.5, 5) == Catch::Approx(0.193903680242473).epsilon(1e-10));
  CHECK(student_t_two_sided_p(3.2, 20) == Catch::Approx(0.00449621555471812).epsilon(1e-10));
  CHECK(student_t_two_sided_p(0.7, 8) == Catch::Approx(0.503771052018545).epsilon(1e-10));
  // Symmetry in the sign of t.
  CHECK(student_t_two_sided_p(-2.0, 10) == Catch::Approx(student_t_two_sided_p(2.0, 10)));
}

TEST_CASE("pearson correlation and p-value at frozen points", "[stats]") {
  const std::vector<double> x1{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  const std::vector<double> y1{2.1, 2.9, 4.2, 3.8, 5.1, 5.9, 6.8, 7.4};
  CHECK(pearson_r(x1, y1) == Catch::Approx(0.985709112910356).epsilon(1e-12));
  CHECK(pearson_p_value(pearson_r(x1, y1), x1.size()) ==
        Catch::Approx(7.21856805659535e-06).epsilon(1e-8));

  const std::vector<double> x2{0.5, 1.5, 0.9, 2.2, 3.1, 2.7, 4.0, 3.3, 5.1, 4.4};
  const std::vector<double> y2{3.0, 1.1, 2.4, 2.0, 0.8, 1.9, 0.5, 1.2, 0.2, 0.9};
  CHECK(pearson_r(x2, y2) == Catch::Approx(-0.86661458192811).epsilon(1e-12));
  CHECK(pearson_p_value(pearson_r(x2, y2), x2.size()) ==
        Catch::Approx(0.0011752957450298).epsilon(1e-8));

  const std::vector<double> x3{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  const std::vector<double> y3{2.0, 1.0, 3.0, 1.5, 2.5, 1.8};
  CHECK(pearson_r(x3, y3) == Catch::Approx(0.150187852296528).epsilon(1e-12));
  CHECK(pearson_p_value(pearson_r(x3, y3), x3.size()) ==
        Catch::Approx(0.77641206951344).epsilon(1e-8));
}

TEST_CASE("pearson correlation degenerate conventions", "[stats]") {
  // A zero-variance series carries no correlation signal: r = 0, p = 1.
  const std::vector<double> flat{1.0, 1.0, 1.0, 1.0};
  const std::vector<double> y{1.0, 2.0, 3.0, 4.0};
  CHECK(pearson_r(flat, y) == 0.0);
  CHECK(pearson_r(y, flat) == 0.0);
  CHECK(pearson_p_value(0.0, 4) == Catch::Approx(1.0));
  CHECK_THROWS_AS(pearson_r(std::vector<double>{1.0}, std::vector<double>{2.0}),
                  ContractViolation);
}

TEST_CASE("spearman rho via ranks", "[stats]") {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0};
  const std::vector<double> y{1.2, 3.4, 2.2, 5.6, 4.4, 7.0, 6.1};
  CHECK(spearman_rho(x, y) == Catch::Approx(0.892857142857143).epsilon(1e-12));

  const std::vector<double> xt{1.0, 2.0, 2.0, 3.0, 4.0};
  const std::vector<double> yt{5.0, 4.0, 4.5, 2.0, 1.0};
  CHECK(spearman_rho(xt, yt) == Catch::Approx(-0.974679434480896).epsilon(1e-12));
}

TEST_CASE("average ranks handle ties", "[stats]") {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0, 3.0};
  const std::vector<double> r = ranks_with_ties(v);
  CHECK(r[0] == Catch::Approx(4.0));
  CHECK(r[1] == Catch::Approx(1.0));
  CHECK(r[2] == Catch::Approx(4.0));
  CHECK(r[3] == Catch::Approx(2.0));
  CHECK(r[4] == Catch::Approx(4.0));
}

TEST_CASE("linear trend fit matches the reference regression", "[stats]") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<double> y{0.31, 0.45, 0.42, 0.58, 0.60, 0.71, 0.65, 0.82, 0.88, 0.91};
  const TrendFit fit = linear_trend(x, y);
  CHECK(fit.slope == Catch::Approx(0.065030303030303).epsilon(1e-12));
  CHECK(fit.intercept == Catch::Approx(0.275333333333333).epsilon(1e-12));
  CHECK(fit.r == Catch::Approx(0.976329195650887).epsilon(1e-12));
  CHECK(fit.p_value == Catch::Approx(1.33487374742245e-06).epsilon(1e-8));
}

TEST_CASE("paired one-sided t-test matches the reference", "[stats]") {
  const std::vector<double> a{5.1, 4.8, 5.6, 5.3, 4.9, 5.7, 5.2, 5.5};
  const std::vector<double> b{4.6, 4.9, 5.1, 4.8, 4.4, 5.0, 4.9, 5.1};
  const TTestResult res = paired_t_test_greater(a, b);
  CHECK(res.t == Catch::Approx(4.95088416540849).epsilon(1e-10));
  CHECK(res.p_value == Catch::Approx(0.000827295995728741).epsilon(1e-8));
  CHECK(res.n == 8);
}

TEST_CASE("paired t-test degenerate cases", "[stats]") {
  CHECK_THROWS_AS(paired_t_test_greater({1.0}, {2.0}), ContractViolation);
  CHECK_THROWS_AS(paired_t_test_greater({1.0, 2.0}, {2.0}), ContractViolation);
  // Identical samples: zero variance, zero mean difference -> no evidence.
  const std::vector<double> same{1.0, 2.0, 3.0};
  const TTestResult res = paired_t_test_greater(same, same);
  CHECK(res.p_value == Catch::Approx(1.0));
}
