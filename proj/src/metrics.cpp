#include "nanotile/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "nanotile/csv.hpp"

namespace nanotile {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw MetricsError("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw MetricsError("empty input");
}

double variance(std::span<const double> x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size());
}

struct Confusion {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(std::span<const double> labels, std::span<const double> prob, double threshold) {
  check_pair(labels, prob);
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw MetricsError("collision label not in {0, 1}");
    const bool pos = prob[i] >= threshold;
    if (labels[i] == 1.0)
      pos ? ++c.tp : ++c.fn;
    else
      pos ? ++c.fp : ++c.tn;
  }
  return c;
}

std::vector<double> column(const CsvTable& t, const std::string& name) {
  std::vector<double> v;
  for (std::size_t i = 0; i < t.rows.size(); ++i) v.push_back(t.number(i, name));
  return v;
}

}  // namespace

double explained_variance(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred);
  const double vt = variance(truth);
  if (vt == 0.0) throw MetricsError("explained variance undefined for constant ground truth");
  std::vector<double> res(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) res[i] = truth[i] - pred[i];
  return 1.0 - variance(res) / vt;
}

double rmse(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double accuracy(std::span<const double> labels, std::span<const double> prob, double threshold) {
  const auto c = confusion(labels, prob, threshold);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(labels.size());
}

double f1_score(std::span<const double> labels, std::span<const double> prob, double threshold) {
  const auto c = confusion(labels, prob, threshold);
  const int denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return 2.0 * c.tp / denom;
}

Metrics evaluate_metrics(const std::filesystem::path& predictions, const std::filesystem::path& labels) {
  const auto p = read_csv(predictions);
  const auto l = read_csv(labels);
  if (p.rows.size() != l.rows.size())
    throw MetricsError("length mismatch: " + std::to_string(p.rows.size()) + " predictions vs " +
                       std::to_string(l.rows.size()) + " labels");
  if (p.rows.empty()) throw MetricsError("empty input");

  Metrics m;
  auto has = [](const CsvTable& t, const char* name) {
    return std::find(t.header.begin(), t.header.end(), name) != t.header.end();
  };
  auto both = [&](const char* name) { return has(p, name) && has(l, name); };
  if (both("steering")) {
    const auto y = column(l, "steering"), yh = column(p, "steering");
    m.steering = RegressionMetrics{explained_variance(y, yh), rmse(y, yh)};
  }
  if (both("collision")) {
    const auto y = column(l, "collision"), yh = column(p, "collision");
    m.collision = ClassificationMetrics{accuracy(y, yh), f1_score(y, yh)};
  }
  if (!m.steering && !m.collision) throw MetricsError("no steering or collision column shared by both files");
  return m;
}

}  // namespace nanotile
