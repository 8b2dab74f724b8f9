#pragma once

// JSON-lines metrics: one object per line with the fields
//   step, epoch, split, loss, accuracy, tau_s, tau_t, lr, meta_grad_norm, wall_ms
// Fields that do not apply to a record are null. Lines are buffered and
// written out at every flush (once per epoch).

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mkd/errors.hpp"

namespace mkd {

struct MetricRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string split;
  std::optional<double> loss;
  std::optional<double> accuracy;
  std::optional<double> tau_s;
  std::optional<double> tau_t;
  std::optional<double> lr;
  std::optional<double> meta_grad_norm;
  double wall_ms = 0.0;
  // Additional numeric fields, appended after the fixed ones.
  std::vector<std::pair<std::string, double>> extra;

  nlohmann::ordered_json to_json() const {
    auto opt = [](const std::optional<double>& v) {
      return v && std::isfinite(*v) ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["split"] = split;
    j["loss"] = opt(loss);
    j["accuracy"] = opt(accuracy);
    j["tau_s"] = opt(tau_s);
    j["tau_t"] = opt(tau_t);
    j["lr"] = opt(lr);
    j["meta_grad_norm"] = opt(meta_grad_norm);
    j["wall_ms"] = wall_ms;
    for (const auto& [k, v] : extra) j[k] = opt(v);
    return j;
  }
};

class MetricsWriter {
 public:
  /// Creates (truncates) the file immediately, so an empty run leaves an empty
  /// file. With `append` set, existing lines are kept (resumed runs).
  explicit MetricsWriter(const std::string& path, bool append = false)
      : path_(path), out_(path, append ? std::ios::app : std::ios::trunc), start_(std::chrono::steady_clock::now()) {
    if (!out_) throw IoError("cannot write metrics file '" + path + "'");
  }

  /// A writer that only counts records (used by in-memory runs).
  MetricsWriter() : start_(std::chrono::steady_clock::now()) {}

  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

  void emit(MetricRecord r) {
    r.wall_ms = elapsed_ms();
    lines_.push_back(r.to_json().dump());
    records_.push_back(std::move(r));
  }

  void flush() {
    if (out_.is_open()) {
      for (std::size_t i = flushed_; i < lines_.size(); ++i) out_ << lines_[i] << '\n';
      out_.flush();
      if (!out_) throw IoError("error while writing metrics file '" + path_ + "'");
    }
    flushed_ = lines_.size();
  }

  const std::vector<MetricRecord>& records() const { return records_; }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> lines_;
  std::vector<MetricRecord> records_;
  std::size_t flushed_ = 0;
};

/// Parses a metrics file back, dropping wall_ms (the only non-deterministic
/// field) and, optionally, records of the given splits.
inline std::vector<nlohmann::ordered_json> read_metrics(const std::string& path,
                                                       const std::vector<std::string>& drop_splits = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path + "'");
  std::vector<nlohmann::ordered_json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::ordered_json::parse(line);
    std::string split = j.value("split", "");
    bool drop = false;
    for (const auto& s : drop_splits) drop = drop || s == split;
    if (drop) continue;
    j.erase("wall_ms");
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace mkd
