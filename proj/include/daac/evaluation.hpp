#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daac/data.hpp"
#include "json.hpp"

namespace daac::eval {

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;  // macro over classes present in labels or predictions
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auroc;  // empty when labels hold a single class
  std::optional<double> auprc;
  std::size_t n_test = 0;
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t n_negative = 0, n_positive = 0;

  nlohmann::json to_json() const;
};

// Rank statistic with mid-ranks (ties count one half). Throws ContractError
// when either class is absent.
double auroc(std::span<const double> scores, std::span<const int> labels);
// Step-wise average precision over distinct score thresholds, no interpolation.
double auprc(std::span<const double> scores, std::span<const int> labels);

// labels/predictions in {0,1}; scores are positive-class probabilities.
MetricsReport classification_metrics(std::span<const int> labels, std::span<const int> predictions,
                                     std::span<const double> scores);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};
Summary summarize(std::span<const double> values);

// Aggregates reports of several seeds into {metric: {mean, std, n}}.
nlohmann::json aggregate(const std::vector<MetricsReport>& reports);

// Equal-frequency bin index per value; tied values always share a bin.
std::vector<std::size_t> equal_frequency_bins(std::span<const double> feature, std::size_t bins);

// Plug-in mutual information (nats) between the binned feature and labels.
double mutual_information(std::span<const double> feature, std::span<const int> labels,
                          std::size_t bins = 16);

struct MiRow {
  std::size_t channel = 0;
  double mi = 0.0;
  bool discrepancy = false;
};
// Channel MI against labels using each channel's time-mean as the feature;
// sorted by MI descending (ties by channel index).
std::vector<MiRow> mi_ranking(const data::Corpus& corpus, std::size_t bins = 16);
std::string mi_table_csv(const std::vector<MiRow>& rows);

struct ErrorHistogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> normal, abnormal;  // per-bin counts by label
};
ErrorHistogram error_histogram(std::span<const double> errors, std::span<const int> labels,
                               std::size_t bins = 50);
std::string error_histogram_csv(const ErrorHistogram& h);

}  // namespace daac::eval
