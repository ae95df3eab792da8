// SPDX-License-Identifier: Apache-2.0
//
// Training signals and balance-factor analyses.
//
// CSV schemas (header row first, stable column order):
//   telemetry.csv  step,loss,grad_norm,lr      grad_norm is the pre-clip norm
//   alpha.csv      step,layer,head,alpha
//   heatmap        layer,head_0,...,head_{H-1} one row per layer

#ifndef INFINI_TELEMETRY_HPP_
#define INFINI_TELEMETRY_HPP_

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "infini/attention.hpp"
#include "infini/model.hpp"

namespace infini {

struct BalanceSnapshot {
  std::size_t step = 0;
  std::vector<std::vector<double>> alpha;  // [layers][heads]

  std::size_t layers() const { return alpha.size(); }
  std::size_t heads() const { return alpha.empty() ? 0 : alpha.front().size(); }

  void validate() const {
    for (const auto& row : alpha) {
      if (row.size() != heads()) throw std::invalid_argument("balance snapshot: ragged layer x head matrix");
      for (double a : row) {
        if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("balance snapshot: alpha outside [0, 1]");
      }
    }
  }
};

template <class T>
BalanceSnapshot snapshot_balance(std::size_t step, const DecoderWeights<T>& w) {
  return {step, balance_factors(w)};
}

inline double mean_alpha(const BalanceSnapshot& s) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& row : s.alpha) {
    for (double a : row) {
      total += a;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("mean_alpha: empty snapshot");
  return total / static_cast<double>(n);
}

/// Equal-width bins over [0, 1]; alpha == 1 lands in the last bin.
inline std::vector<std::size_t> alpha_histogram(const BalanceSnapshot& s, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("alpha_histogram: need at least one bin");
  std::vector<std::size_t> counts(bins, 0);
  for (const auto& row : s.alpha) {
    for (double a : row) {
      auto b = static_cast<std::size_t>(a * static_cast<double>(bins));
      counts[std::min(b, bins - 1)] += 1;
    }
  }
  return counts;
}

/// Per layer, the fraction of heads with alpha > threshold.
inline std::vector<double> layer_memory_preference(const BalanceSnapshot& s, double threshold = 0.5) {
  std::vector<double> out;
  for (const auto& row : s.alpha) {
    std::size_t above = 0;
    for (double a : row) above += a > threshold ? 1 : 0;
    out.push_back(row.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(row.size()));
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string alpha_heatmap_csv(const BalanceSnapshot& s) {
  std::ostringstream os;
  os << "layer";
  for (std::size_t h = 0; h < s.heads(); ++h) os << ",head_" << h;
  os << '\n';
  for (std::size_t l = 0; l < s.layers(); ++l) {
    os << l;
    for (double a : s.alpha[l]) os << ',' << format_double(a);
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  return out;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline BalanceSnapshot parse_alpha_heatmap_csv(const std::string& text, std::size_t step = 0) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("layer", 0) != 0) throw std::invalid_argument("heatmap csv: missing header");
  const std::size_t heads = detail::split_csv(line).size() - 1;
  BalanceSnapshot s;
  s.step = step;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != heads + 1) throw std::invalid_argument("heatmap csv: row width mismatch");
    std::vector<double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(detail::parse_double(cells[i]));
    s.alpha.push_back(std::move(row));
  }
  return s;
}

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

/// Append-only writer for one run directory.
class TelemetryWriter {
 public:
  TelemetryWriter() = default;
  TelemetryWriter(const std::filesystem::path& steps_csv, const std::filesystem::path& alpha_csv)
      : steps_(open(steps_csv, "step,loss,grad_norm,lr")), alpha_(open(alpha_csv, "step,layer,head,alpha")) {}

  void log_step(const StepRecord& r) {
    if (!steps_) return;
    std::fprintf(steps_.get(), "%zu,%s,%s,%s\n", r.step, format_double(r.loss).c_str(),
                 format_double(r.grad_norm).c_str(), format_double(r.lr).c_str());
    std::fflush(steps_.get());
  }

  void log_balance(const BalanceSnapshot& s) {
    if (!alpha_) return;
    for (std::size_t l = 0; l < s.layers(); ++l) {
      for (std::size_t h = 0; h < s.heads(); ++h) {
        std::fprintf(alpha_.get(), "%zu,%zu,%zu,%s\n", s.step, l, h, format_double(s.alpha[l][h]).c_str());
      }
    }
    std::fflush(alpha_.get());
  }

 private:
  struct Closer {
    void operator()(std::FILE* f) const { std::fclose(f); }
  };
  using File = std::unique_ptr<std::FILE, Closer>;

  static File open(const std::filesystem::path& p, const char* header) {
    const bool fresh = !std::filesystem::exists(p) || std::filesystem::file_size(p) == 0;
    File f(std::fopen(p.string().c_str(), "a"));
    if (!f) throw std::runtime_error("cannot open telemetry file " + p.string());
    if (fresh) std::fprintf(f.get(), "%s\n", header);
    return f;
  }

  File steps_;
  File alpha_;
};

inline std::vector<StepRecord> read_step_log(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,loss,grad_norm,lr") throw std::runtime_error(p.string() + ": unexpected header '" + line + "'");
  std::vector<StepRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = detail::split_csv(line);
    if (c.size() != 4) throw std::runtime_error(p.string() + ": malformed row '" + line + "'");
    out.push_back({std::stoul(c[0]), detail::parse_double(c[1]), detail::parse_double(c[2]), detail::parse_double(c[3])});
  }
  return out;
}

/// Groups alpha.csv rows back into snapshots, ordered by step.
inline std::vector<BalanceSnapshot> read_alpha_log(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,layer,head,alpha") throw std::runtime_error(p.string() + ": unexpected header '" + line + "'");
  std::map<std::size_t, std::map<std::size_t, std::map<std::size_t, double>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = detail::split_csv(line);
    if (c.size() != 4) throw std::runtime_error(p.string() + ": malformed row '" + line + "'");
    rows[std::stoul(c[0])][std::stoul(c[1])][std::stoul(c[2])] = detail::parse_double(c[3]);
  }
  std::vector<BalanceSnapshot> out;
  for (auto& [step, layers] : rows) {
    BalanceSnapshot s;
    s.step = step;
    for (auto& [l, heads] : layers) {
      std::vector<double> row;
      for (auto& [h, a] : heads) row.push_back(a);
      s.alpha.push_back(std::move(row));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace infini

#endif  // INFINI_TELEMETRY_HPP_
