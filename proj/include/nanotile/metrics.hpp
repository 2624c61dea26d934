#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>

namespace nanotile {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 1 - Var[truth - pred] / Var[truth]
double explained_variance(std::span<const double> truth, std::span<const double> pred);
double rmse(std::span<const double> truth, std::span<const double> pred);

inline constexpr double kClassThreshold = 0.5;

// Labels in {0, 1}; a probability at or above the threshold predicts 1.
double accuracy(std::span<const double> labels, std::span<const double> prob, double threshold = kClassThreshold);
// 1 when there are no positives at all, predicted or true.
double f1_score(std::span<const double> labels, std::span<const double> prob, double threshold = kClassThreshold);

struct RegressionMetrics {
  double eva = 0.0;
  double rmse = 0.0;
};
struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
};
struct Metrics {
  std::optional<RegressionMetrics> steering;
  std::optional<ClassificationMetrics> collision;
};

// Both CSVs carry a `steering` column, a `collision` column, or both; a
// metric group is computed for each column present in both files.
Metrics evaluate_metrics(const std::filesystem::path& predictions, const std::filesystem::path& labels);

}  // namespace nanotile
