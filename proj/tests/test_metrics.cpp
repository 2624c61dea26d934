#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "nanotile/metrics.hpp"

using namespace nanotile;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("regression") {
  const std::vector<double> y{0.1, -0.4, 0.3, 0.9, -0.2};
  CHECK(explained_variance(y, y) == doctest::Approx(1.0));
  CHECK(rmse(y, y) == 0.0);

  double mean = 0;
  for (double v : y) mean += v / y.size();
  const std::vector<double> flat(y.size(), mean);
  CHECK(explained_variance(y, flat) == doctest::Approx(0.0).epsilon(1e-12));

  // A constant offset leaves the residual variance at zero.
  std::vector<double> shifted;
  for (double v : y) shifted.push_back(v + 0.5);
  CHECK(explained_variance(y, shifted) == doctest::Approx(1.0));
  CHECK(rmse(y, shifted) == doctest::Approx(0.5));

  const std::vector<double> constant(4, 0.2), other{0.1, 0.2, 0.3, 0.4};
  CHECK_THROWS_AS(explained_variance(constant, other), MetricsError);
  CHECK_THROWS_AS(rmse(y, other), MetricsError);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), MetricsError);
}

TEST_CASE("classification") {
  const std::vector<double> labels{1, 0, 1, 1, 0, 0};
  const std::vector<double> prob{0.9, 0.5, 0.2, 0.7, 0.1, 0.49};
  // Predictions 1,1,0,1,0,0: tp 2, fp 1, fn 1, tn 2.
  CHECK(accuracy(labels, prob) == doctest::Approx(4.0 / 6));
  CHECK(f1_score(labels, prob) == doctest::Approx(4.0 / 6));

  const std::vector<double> zeros(3, 0.0), low(3, 0.1);
  CHECK(f1_score(zeros, low) == 1.0);
  CHECK(accuracy(zeros, low) == 1.0);
  const std::vector<double> ones(3, 1.0);
  CHECK(f1_score(ones, low) == 0.0);
  CHECK(accuracy(labels, prob, 0.95) == doctest::Approx(0.5));

  const std::vector<double> bad{0, 2, 1};
  CHECK_THROWS_AS(accuracy(bad, low), MetricsError);
  CHECK_THROWS_AS(f1_score(labels, low), MetricsError);
}

TEST_CASE("evaluation from files") {
  const auto pred = write_file("nanotile_pred.csv", "steering,collision\n0.1,0.8\n0.2,0.3\n-0.3,0.6\n");
  const auto lab = write_file("nanotile_lab.csv", "steering,collision\n0.1,1\n0.3,0\n-0.2,0\n");
  const auto m = evaluate_metrics(pred, lab);
  REQUIRE(m.steering.has_value());
  REQUIRE(m.collision.has_value());
  CHECK(m.steering->rmse == doctest::Approx(std::sqrt(0.02 / 3)));
  CHECK(m.collision->accuracy == doctest::Approx(2.0 / 3));
  CHECK(m.collision->f1 == doctest::Approx(2.0 / 3));

  const auto only_coll = write_file("nanotile_lab2.csv", "collision\n1\n0\n0\n");
  const auto m2 = evaluate_metrics(pred, only_coll);
  CHECK_FALSE(m2.steering.has_value());
  CHECK(m2.collision.has_value());

  const auto short_lab = write_file("nanotile_lab3.csv", "steering,collision\n0.1,1\n");
  CHECK_THROWS_AS(evaluate_metrics(pred, short_lab), MetricsError);
  const auto unrelated = write_file("nanotile_lab4.csv", "speed\n1\n2\n3\n");
  CHECK_THROWS_AS(evaluate_metrics(pred, unrelated), MetricsError);
  CHECK_THROWS(evaluate_metrics(pred, std::filesystem::temp_directory_path() / "nanotile_none.csv"));
}

}
