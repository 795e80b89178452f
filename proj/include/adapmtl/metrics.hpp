#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adapmtl/common.hpp"
#include "adapmtl/io.hpp"
#include "adapmtl/model.hpp"
#include "adapmtl/pruner.hpp"

// Relative-performance scoring against a dense baseline, plus FLOP estimates
// derived from nonzero counts.
namespace adapmtl {

// With Sum, per-metric percentage changes are added up; Mean divides the sum
// by the number of metrics. Published tables in this area typically add.
enum class DeltaConvention { Mean, Sum };

inline DeltaConvention parse_delta_convention(const std::string& s) {
  if (s == "mean") return DeltaConvention::Mean;
  if (s == "sum") return DeltaConvention::Sum;
  throw ConfigError("unknown delta convention: " + s);
}

inline const char* delta_convention_name(DeltaConvention c) {
  return c == DeltaConvention::Mean ? "mean" : "sum";
}

class MetricTable {
 public:
  MetricTable(std::vector<std::string> metric_names,
              std::vector<bool> lower_is_better, std::string baseline)
      : metric_names_(std::move(metric_names)),
        lower_is_better_(std::move(lower_is_better)),
        baseline_(std::move(baseline)) {
    if (metric_names_.empty()) throw DataError("metric table has no metrics");
    if (metric_names_.size() != lower_is_better_.size())
      throw DataError("metric direction count does not match metric count");
    for (std::size_t i = 0; i < metric_names_.size(); ++i)
      if (!index_.emplace(metric_names_[i], i).second)
        throw DataError("duplicate metric name: " + metric_names_[i]);
  }

  void add_row(const std::string& model, std::vector<double> values) {
    if (values.size() != metric_names_.size())
      throw DataError("row " + model + " has " +
                      std::to_string(values.size()) + " values, expected " +
                      std::to_string(metric_names_.size()));
    if (!rows_.emplace(model, std::move(values)).second)
      throw DataError("duplicate model row: " + model);
    row_order_.push_back(model);
  }

  const std::vector<std::string>& metric_names() const { return metric_names_; }
  const std::vector<std::string>& row_names() const { return row_order_; }
  const std::string& baseline() const { return baseline_; }

  bool has_row(const std::string& model) const { return rows_.count(model) > 0; }

  std::size_t metric_index(const std::string& metric) const {
    auto it = index_.find(metric);
    if (it == index_.end()) throw DataError("missing metric: " + metric);
    return it->second;
  }

  bool lower_is_better(const std::string& metric) const {
    return lower_is_better_[metric_index(metric)];
  }

  double value(const std::string& model, const std::string& metric) const {
    auto it = rows_.find(model);
    if (it == rows_.end()) throw DataError("missing model row: " + model);
    return it->second[metric_index(metric)];
  }

  void validate() const {
    if (rows_.find(baseline_) == rows_.end())
      throw DataError("baseline row not present: " + baseline_);
  }

 private:
  std::vector<std::string> metric_names_;
  std::vector<bool> lower_is_better_;
  std::string baseline_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<double>> rows_;
  std::vector<std::string> row_order_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace detail

// CSV layout: header row "model,<metric names...>", then a row labelled
// "direction" holding lower/higher per metric, then one row per model.
inline MetricTable load_metric_table_csv(const std::string& path,
                                         const std::string& baseline) {
  std::istringstream in(io::read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty metric table: " + path);
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "model")
    throw DataError("metric table header must start with 'model': " + path);
  std::vector<std::string> metrics(header.begin() + 1, header.end());

  if (!std::getline(in, line))
    throw DataError("metric table missing direction row: " + path);
  auto dir_cells = detail::split_csv_line(line);
  if (dir_cells.size() != header.size() || dir_cells[0] != "direction")
    throw DataError("second row must be the direction row: " + path);
  std::vector<bool> lower;
  for (std::size_t i = 1; i < dir_cells.size(); ++i) {
    if (dir_cells[i] == "lower") {
      lower.push_back(true);
    } else if (dir_cells[i] == "higher") {
      lower.push_back(false);
    } else {
      throw DataError("direction must be lower or higher, got '" +
                      dir_cells[i] + "': " + path);
    }
  }

  MetricTable table(std::move(metrics), std::move(lower), baseline);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("ragged row '" + cells[0] + "' in " + path);
    std::vector<double> values;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cells[i], &used));
        if (used != cells[i].size()) throw std::invalid_argument(cells[i]);
      } catch (const std::exception&) {
        throw DataError("bad number '" + cells[i] + "' in row " + cells[0] +
                        ": " + path);
      }
    }
    table.add_row(cells[0], std::move(values));
  }
  table.validate();
  return table;
}

// Signed percentage change of one task's metrics against the baseline row.
// A lower-is-better metric that went down contributes positively.
inline double delta_task(const MetricTable& table, const std::string& model,
                         const std::vector<std::string>& task_metrics,
                         DeltaConvention convention) {
  if (task_metrics.empty()) throw DataError("task has no metrics");
  double acc = 0.0;
  for (const auto& metric : task_metrics) {
    const double base = table.value(table.baseline(), metric);
    if (base == 0.0)
      throw DataError("baseline value is zero for metric " + metric);
    const double cur = table.value(model, metric);
    const double sgn = table.lower_is_better(metric) ? -1.0 : 1.0;
    acc += sgn * (cur - base) / base * 100.0;
  }
  if (convention == DeltaConvention::Mean)
    acc /= static_cast<double>(task_metrics.size());
  return acc;
}

inline double delta_overall(const std::vector<double>& per_task_deltas) {
  if (per_task_deltas.empty()) throw DataError("no task deltas to average");
  double acc = 0.0;
  for (double d : per_task_deltas) acc += d;
  return acc / static_cast<double>(per_task_deltas.size());
}

struct FlopsEstimate {
  std::uint64_t dense_flops = 0;
  std::uint64_t sparse_flops = 0;
};

// Two FLOPs per multiply-add; biases are excluded, matching the sparsity
// accounting. Dense counts every weight, sparse counts surviving weights.
inline FlopsEstimate flops_estimate(const MultitaskModel& model,
                                    const SparsitySnapshot& snapshot) {
  FlopsEstimate est;
  auto comps = model.components();
  if (snapshot.rows.size() != comps.size())
    throw StateError("snapshot does not match model components");
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const auto& row = snapshot.rows[i];
    if (row.component != comps[i]->name)
      throw StateError("snapshot row order does not match model");
    if (row.total != comps[i]->weight_count())
      throw StateError("snapshot totals are stale for " + row.component);
    est.dense_flops += 2 * static_cast<std::uint64_t>(row.total);
    est.sparse_flops += 2 * static_cast<std::uint64_t>(row.nnz);
  }
  return est;
}

struct RunReport {
  std::vector<std::pair<std::string, double>> task_deltas;
  double overall_delta = 0.0;
  SparsitySnapshot sparsity;
  std::size_t param_count = 0;
  FlopsEstimate flops;
};

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["task_deltas"] = nlohmann::json::object();
  for (const auto& [task, d] : r.task_deltas) j["task_deltas"][task] = d;
  j["overall_delta"] = r.overall_delta;
  j["sparsity"] = nlohmann::json::object();
  j["sparsity"]["overall"] = r.sparsity.overall;
  j["sparsity"]["epoch"] = r.sparsity.epoch;
  j["sparsity"]["components"] = nlohmann::json::array();
  for (const auto& row : r.sparsity.rows)
    j["sparsity"]["components"].push_back({{"name", row.component},
                                           {"nnz", row.nnz},
                                           {"total", row.total},
                                           {"sparsity", row.sparsity}});
  j["param_count"] = r.param_count;
  j["flops"] = {{"dense", r.flops.dense_flops},
                {"sparse", r.flops.sparse_flops}};
  return j;
}

}  // namespace adapmtl
