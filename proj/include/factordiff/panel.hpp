#pragma once

// Fixed-shape monthly panels of firm characteristics and next-month returns.
//
// A RawPanel mirrors the CSV file: one realized return and one characteristic
// vector per (month, asset), NaN where missing. preprocess() turns it into a
// Panel whose row t pairs the characteristics observed in month t with the
// return realized in month t+1, so the final raw month is consumed by the shift.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "factordiff/csv.hpp"
#include "factordiff/errors.hpp"
#include "factordiff/random.hpp"

namespace factordiff {

class Panel {
 public:
  Panel() = default;

  Panel(std::vector<std::string> months, std::vector<std::string> assets,
        std::vector<std::string> characteristic_names, std::vector<Eigen::MatrixXd> characteristics,
        Eigen::MatrixXd returns)
      : months_(std::move(months)),
        assets_(std::move(assets)),
        names_(std::move(characteristic_names)),
        characteristics_(std::move(characteristics)),
        returns_(std::move(returns)) {
    const auto T = static_cast<Eigen::Index>(months_.size());
    const auto N = static_cast<Eigen::Index>(assets_.size());
    const auto K = static_cast<Eigen::Index>(names_.size());
    if (T == 0 || N == 0 || K == 0) throw ShapeError("panel must have at least one month, asset and characteristic");
    if (static_cast<Eigen::Index>(characteristics_.size()) != T)
      throw ShapeError("characteristics tensor has " + std::to_string(characteristics_.size()) + " months, expected " +
                       std::to_string(T));
    for (const auto& x : characteristics_) {
      if (x.rows() != N || x.cols() != K) throw ShapeError("characteristic slice is not N x K");
      if (!x.allFinite()) throw NumericError("non-finite characteristic value in panel");
    }
    if (returns_.rows() != T || returns_.cols() != N) throw ShapeError("returns matrix is not T x N");
    if (!returns_.allFinite()) throw NumericError("non-finite return in panel");
  }

  int num_months() const noexcept { return static_cast<int>(months_.size()); }
  int num_assets() const noexcept { return static_cast<int>(assets_.size()); }
  int num_characteristics() const noexcept { return static_cast<int>(names_.size()); }

  const std::vector<std::string>& months() const noexcept { return months_; }
  const std::vector<std::string>& assets() const noexcept { return assets_; }
  const std::vector<std::string>& characteristic_names() const noexcept { return names_; }

  /// N x K characteristics observed in month t.
  const Eigen::MatrixXd& characteristics(int t) const { return characteristics_.at(static_cast<std::size_t>(t)); }
  const std::vector<Eigen::MatrixXd>& characteristics() const noexcept { return characteristics_; }

  /// T x N; row t holds the return realized over month t+1.
  const Eigen::MatrixXd& returns() const noexcept { return returns_; }

  friend bool operator==(const Panel& a, const Panel& b) {
    if (a.months_ != b.months_ || a.assets_ != b.assets_ || a.names_ != b.names_) return false;
    if (a.returns_ != b.returns_) return false;
    for (std::size_t t = 0; t < a.characteristics_.size(); ++t)
      if (a.characteristics_[t] != b.characteristics_[t]) return false;
    return true;
  }

 private:
  std::vector<std::string> months_;
  std::vector<std::string> assets_;
  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> characteristics_;
  Eigen::MatrixXd returns_;
};

/// File-level view of a panel before shifting and cleaning.
struct RawPanel {
  std::vector<std::string> months;  // M, strictly consecutive calendar months
  std::vector<std::string> assets;  // sorted identifiers
  std::vector<std::string> characteristic_names;
  std::vector<Eigen::MatrixXd> characteristics;              // M slices of N x K, NaN = missing
  Eigen::MatrixXd returns;                                   // M x N realized returns, NaN = missing
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> present;  // M x N, row exists in the file
};

struct PreprocessSpec {
  double winsor_low_q = 0.01;
  double winsor_high_q = 0.99;
  double clip_bound = 5.0;
  int target_N = 200;

  void validate() const {
    if (!(winsor_low_q > 0.0 && winsor_low_q < 0.5)) throw DomainError("winsor_low_q must lie in (0, 0.5)");
    if (!(winsor_high_q > 0.5 && winsor_high_q < 1.0)) throw DomainError("winsor_high_q must lie in (0.5, 1)");
    if (!(clip_bound > 0.0)) throw DomainError("clip_bound must be positive");
    if (target_N < 1) throw DomainError("target_N must be positive");
  }
};

enum class Nonlinearity { linear, tanh_saturating };

struct SyntheticSpec {
  int T = 60;
  int N = 20;
  int K = 30;
  int k_true = 5;
  double signal_scale = 0.02;
  double noise_scale = 0.05;
  Nonlinearity nonlinearity = Nonlinearity::linear;
  std::uint64_t seed = 0;

  void validate() const {
    if (T < 1 || N < 1 || K < 1) throw DomainError("T, N and K must be positive");
    if (k_true < 1 || k_true > K) throw DomainError("k_true must lie in [1, K]");
    if (!(signal_scale >= 0.0) || !std::isfinite(signal_scale)) throw DomainError("signal_scale must be non-negative");
    if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) throw DomainError("noise_scale must be positive");
  }
};

// ---------------------------------------------------------------------------
// Cross-sectional transforms

/// Empirical quantile with linear interpolation between order statistics:
/// Q(q) = x_(j) + (h - j) (x_(j+1) - x_(j)), h = (n - 1) q, j = floor(h), on the sorted sample.
inline double empirical_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto j = static_cast<std::size_t>(std::floor(h));
  if (j + 1 >= sorted.size()) return sorted.back();
  return sorted[j] + (h - static_cast<double>(j)) * (sorted[j + 1] - sorted[j]);
}

inline Eigen::VectorXd winsorize_cross_section(const Eigen::VectorXd& values, double low_q, double high_q) {
  if (values.size() == 0) throw DomainError("winsorize: empty vector");
  if (!(low_q > 0.0 && low_q < high_q && high_q < 1.0)) throw DomainError("winsorize: need 0 < low_q < high_q < 1");
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  const double lo = empirical_quantile(sorted, low_q);
  const double hi = empirical_quantile(sorted, high_q);
  return values.cwiseMax(lo).cwiseMin(hi);
}

/// z-scores with the population standard deviation (divisor n), clipped to +-clip_bound.
/// A column whose spread is zero up to rounding maps to all zeros.
inline Eigen::VectorXd standardize_clip_cross_section(const Eigen::VectorXd& values, double clip_bound) {
  if (values.size() == 0) throw DomainError("standardize: empty vector");
  const double mean = values.mean();
  const Eigen::VectorXd centered = values.array() - mean;
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(values.size()));
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (!(sd > 1e-12 * scale)) return Eigen::VectorXd::Zero(values.size());
  return (centered / sd).cwiseMax(-clip_bound).cwiseMin(clip_bound);
}

// ---------------------------------------------------------------------------
// Month identifiers

/// Parses "yyyy-mm" into a month ordinal (12 * year + month - 1); -1 if malformed.
inline long month_ordinal(std::string_view s) {
  if (s.size() != 7 || s[4] != '-') return -1;
  long year = 0;
  for (int i = 0; i < 4; ++i) {
    if (s[static_cast<std::size_t>(i)] < '0' || s[static_cast<std::size_t>(i)] > '9') return -1;
    year = 10 * year + (s[static_cast<std::size_t>(i)] - '0');
  }
  if (s[5] < '0' || s[5] > '9' || s[6] < '0' || s[6] > '9') return -1;
  const int month = 10 * (s[5] - '0') + (s[6] - '0');
  if (month < 1 || month > 12) return -1;
  return 12 * year + month - 1;
}

inline std::string month_label(long ordinal) {
  const long year = ordinal / 12;
  const int month = static_cast<int>(ordinal % 12) + 1;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04ld-%02d", year, month);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV input

inline RawPanel parse_panel_csv(const std::string& text) {
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      lines.emplace_back(text.substr(start, end - start));
      start = end + 1;
    }
  }
  while (!lines.empty() && csv::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError("empty file", 1);

  auto header = csv::split_line(lines[0], 1);
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
  if (header.size() < 4 || header[0] != "month" || header[1] != "asset_id" || header[2] != "ret")
    throw ParseError("header must be: month,asset_id,ret,<characteristics...> with at least one characteristic", 1);
  const std::size_t K = header.size() - 3;

  struct Row {
    long month;
    std::string asset;
    double ret;
    std::vector<double> chars;
    std::size_t line;
  };
  std::vector<Row> rows;
  rows.reserve(lines.size());
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (csv::trim(lines[li]).empty()) continue;
    auto fields = csv::split_line(lines[li], line_no);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       line_no);
    Row r;
    r.line = line_no;
    r.month = month_ordinal(fields[0]);
    if (r.month < 0) throw ParseError("month must be yyyy-mm, got '" + fields[0] + "'", line_no);
    if (fields[1].empty()) throw ParseError("empty asset_id", line_no);
    r.asset = fields[1];
    r.ret = csv::parse_number(fields[2], line_no, "ret").value_or(nan);
    r.chars.resize(K);
    for (std::size_t j = 0; j < K; ++j) r.chars[j] = csv::parse_number(fields[3 + j], line_no, header[3 + j]).value_or(nan);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("no data rows", lines.size());

  std::vector<long> month_ids;
  std::vector<std::string> assets;
  for (const auto& r : rows) {
    month_ids.push_back(r.month);
    assets.push_back(r.asset);
  }
  std::sort(month_ids.begin(), month_ids.end());
  month_ids.erase(std::unique(month_ids.begin(), month_ids.end()), month_ids.end());
  std::sort(assets.begin(), assets.end());
  assets.erase(std::unique(assets.begin(), assets.end()), assets.end());
  for (std::size_t i = 1; i < month_ids.size(); ++i) {
    if (month_ids[i] != month_ids[i - 1] + 1)
      throw OrderingError("months are not consecutive: " + month_label(month_ids[i - 1]) + " is followed by " +
                          month_label(month_ids[i]));
  }

  const auto M = static_cast<Eigen::Index>(month_ids.size());
  const auto N = static_cast<Eigen::Index>(assets.size());
  RawPanel raw;
  for (long m : month_ids) raw.months.push_back(month_label(m));
  raw.assets = assets;
  raw.characteristic_names.assign(header.begin() + 3, header.end());
  raw.characteristics.assign(static_cast<std::size_t>(M),
                             Eigen::MatrixXd::Constant(N, static_cast<Eigen::Index>(K), nan));
  raw.returns = Eigen::MatrixXd::Constant(M, N, nan);
  raw.present = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(M, N, false);

  std::map<std::string, Eigen::Index> asset_index;
  for (Eigen::Index i = 0; i < N; ++i) asset_index.emplace(assets[static_cast<std::size_t>(i)], i);
  for (const auto& r : rows) {
    const Eigen::Index m = r.month - month_ids.front();
    const Eigen::Index i = asset_index.at(r.asset);
    if (raw.present(m, i)) throw ParseError("duplicate row for (" + month_label(r.month) + ", " + r.asset + ")", r.line);
    raw.present(m, i) = true;
    raw.returns(m, i) = r.ret;
    for (std::size_t j = 0; j < K; ++j) raw.characteristics[static_cast<std::size_t>(m)](i, static_cast<Eigen::Index>(j)) = r.chars[j];
  }
  return raw;
}

/// Cleans a raw panel into the fixed (T, N, K) shape.
///
/// An asset is usable in month m if it has a row there and, for every month but
/// the first (whose return is consumed by the shift), a non-missing return. The
/// retained assets are the target_N usable-in-every-month assets with the fewest
/// missing characteristic cells, ties broken by identifier. Returns are
/// winsorized per month over the retained cross-section; characteristics are
/// mean-imputed, standardized and clipped per (month, characteristic).
inline Panel preprocess(const RawPanel& raw, const PreprocessSpec& spec) {
  spec.validate();
  const auto M = static_cast<Eigen::Index>(raw.months.size());
  const auto N = static_cast<Eigen::Index>(raw.assets.size());
  const auto K = static_cast<Eigen::Index>(raw.characteristic_names.size());
  if (M < 2) throw ShapeError("need at least two months: the final month only supplies next-month returns");

  auto usable = [&](Eigen::Index m, Eigen::Index i) {
    return raw.present(m, i) && (m == 0 || std::isfinite(raw.returns(m, i)));
  };
  std::vector<char> in_all(static_cast<std::size_t>(N), 1);
  for (Eigen::Index m = 0; m < M; ++m) {
    Eigen::Index count = 0, still = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
      const bool u = usable(m, i);
      count += u;
      in_all[static_cast<std::size_t>(i)] = in_all[static_cast<std::size_t>(i)] && u;
      still += in_all[static_cast<std::size_t>(i)];
    }
    if (count < spec.target_N)
      throw ShapeError("month " + raw.months[static_cast<std::size_t>(m)] + " has " + std::to_string(count) +
                       " assets with valid returns, need " + std::to_string(spec.target_N));
    if (still < spec.target_N)
      throw ShapeError("only " + std::to_string(still) + " assets are valid in every month through " +
                       raw.months[static_cast<std::size_t>(m)] + ", need " + std::to_string(spec.target_N));
  }

  struct Candidate {
    Eigen::Index missing;
    Eigen::Index index;
  };
  std::vector<Candidate> candidates;
  for (Eigen::Index i = 0; i < N; ++i) {
    if (!in_all[static_cast<std::size_t>(i)]) continue;
    Eigen::Index missing = 0;
    for (Eigen::Index m = 0; m + 1 < M; ++m)
      missing += (!raw.characteristics[static_cast<std::size_t>(m)].row(i).array().isFinite()).count();
    candidates.push_back({missing, i});
  }
  // Assets are sorted by identifier already, so index order is identifier order.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.missing < b.missing; });
  candidates.resize(static_cast<std::size_t>(spec.target_N));
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.index < b.index; });

  const Eigen::Index T = M - 1;
  const Eigen::Index n = spec.target_N;
  std::vector<std::string> assets;
  for (const auto& c : candidates) assets.push_back(raw.assets[static_cast<std::size_t>(c.index)]);

  Eigen::MatrixXd returns(T, n);
  std::vector<Eigen::MatrixXd> chars(static_cast<std::size_t>(T), Eigen::MatrixXd(n, K));
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::VectorXd r(n);
    for (Eigen::Index a = 0; a < n; ++a) r[a] = raw.returns(t + 1, candidates[static_cast<std::size_t>(a)].index);
    returns.row(t) = winsorize_cross_section(r, spec.winsor_low_q, spec.winsor_high_q).transpose();

    const auto& src = raw.characteristics[static_cast<std::size_t>(t)];
    for (Eigen::Index j = 0; j < K; ++j) {
      Eigen::VectorXd col(n);
      double sum = 0.0;
      Eigen::Index seen = 0;
      for (Eigen::Index a = 0; a < n; ++a) {
        col[a] = src(candidates[static_cast<std::size_t>(a)].index, j);
        if (std::isfinite(col[a])) {
          sum += col[a];
          ++seen;
        }
      }
      const double fill = seen > 0 ? sum / static_cast<double>(seen) : 0.0;
      for (Eigen::Index a = 0; a < n; ++a)
        if (!std::isfinite(col[a])) col[a] = fill;
      chars[static_cast<std::size_t>(t)].col(j) = standardize_clip_cross_section(col, spec.clip_bound);
    }
  }
  std::vector<std::string> months(raw.months.begin(), raw.months.end() - 1);
  return Panel(std::move(months), std::move(assets), raw.characteristic_names, std::move(chars), std::move(returns));
}

inline Panel load_panel(const std::filesystem::path& path, const PreprocessSpec& spec) {
  if (!std::filesystem::exists(path)) throw IoError("panel file not found: " + path.string());
  return preprocess(parse_panel_csv(csv::read_file(path)), spec);
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string raw_panel_csv(const RawPanel& raw) {
  std::string out = "month,asset_id,ret";
  for (const auto& name : raw.characteristic_names) out += "," + csv::quote_if_needed(name);
  out += '\n';
  for (std::size_t m = 0; m < raw.months.size(); ++m) {
    for (std::size_t i = 0; i < raw.assets.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (!raw.present(static_cast<Eigen::Index>(m), ii)) continue;
      out += raw.months[m];
      out += ',';
      out += csv::quote_if_needed(raw.assets[i]);
      out += ',';
      out += csv::format_double(raw.returns(static_cast<Eigen::Index>(m), ii));
      for (Eigen::Index j = 0; j < raw.characteristics[m].cols(); ++j) {
        out += ',';
        out += csv::format_double(raw.characteristics[m](ii, j));
      }
      out += '\n';
    }
  }
  return out;
}

inline void write_raw_panel(const RawPanel& raw, const std::filesystem::path& path) {
  csv::write_file(path, raw_panel_csv(raw));
}

// ---------------------------------------------------------------------------
// Factor selection

/// Column indices kept for a k-factor ablation: the first k entries of a seeded
/// permutation of {0, ..., K-1}, returned in ascending order. Subsets are nested in k.
inline std::vector<int> factor_subset(int K, int k, std::uint64_t seed) {
  if (k < 1 || k > K) throw DomainError("factor count k=" + std::to_string(k) + " outside [1, " + std::to_string(K) + "]");
  if (k == K) {
    std::vector<int> all(static_cast<std::size_t>(K));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  auto perm = RandomStream(seed, StreamTag::factor_permutation, {static_cast<std::uint64_t>(K)}).permutation(K);
  perm.resize(static_cast<std::size_t>(k));
  std::sort(perm.begin(), perm.end());
  return perm;
}

inline Panel select_columns(const Panel& panel, const std::vector<int>& columns) {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chars;
  for (int c : columns) {
    if (c < 0 || c >= panel.num_characteristics()) throw DomainError("characteristic column out of range");
    names.push_back(panel.characteristic_names()[static_cast<std::size_t>(c)]);
  }
  for (int t = 0; t < panel.num_months(); ++t) {
    Eigen::MatrixXd x(panel.num_assets(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = panel.characteristics(t).col(columns[j]);
    chars.push_back(std::move(x));
  }
  return Panel(panel.months(), panel.assets(), std::move(names), std::move(chars), panel.returns());
}

inline Panel select_factors(const Panel& panel, int k, std::uint64_t seed) {
  const int K = panel.num_characteristics();
  if (k == K) return panel;
  return select_columns(panel, factor_subset(K, k, seed));
}

/// Selects characteristic columns by name, in the given order.
inline Panel select_named(const Panel& panel, const std::vector<std::string>& names) {
  std::vector<int> columns;
  for (const auto& name : names) {
    const auto& all = panel.characteristic_names();
    auto it = std::find(all.begin(), all.end(), name);
    if (it == all.end()) throw ShapeError("panel has no characteristic named '" + name + "'");
    columns.push_back(static_cast<int>(it - all.begin()));
  }
  return select_columns(panel, columns);
}

/// Restricts a panel to a set of month rows (in the given order).
inline Panel slice_months(const Panel& panel, std::span<const int> rows) {
  std::vector<std::string> months;
  std::vector<Eigen::MatrixXd> chars;
  Eigen::MatrixXd returns(static_cast<Eigen::Index>(rows.size()), panel.num_assets());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int t = rows[r];
    if (t < 0 || t >= panel.num_months()) throw DomainError("month index out of range");
    months.push_back(panel.months()[static_cast<std::size_t>(t)]);
    chars.push_back(panel.characteristics(t));
    returns.row(static_cast<Eigen::Index>(r)) = panel.returns().row(t);
  }
  return Panel(std::move(months), panel.assets(), panel.characteristic_names(), std::move(chars), std::move(returns));
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Conditional mean index of the synthetic model before scaling:
/// s_i = sum_{j < k_true} x_ij / sqrt(k_true), passed through tanh when saturating.
inline Eigen::VectorXd synthetic_signal(const Eigen::MatrixXd& characteristics, int k_true, Nonlinearity g) {
  const double w = 1.0 / std::sqrt(static_cast<double>(k_true));
  Eigen::VectorXd s = characteristics.leftCols(k_true).rowwise().sum() * w;
  if (g == Nonlinearity::tanh_saturating) s = s.array().tanh();
  return s;
}

/// T+1 raw months: characteristics i.i.d. N(0, 1); the return realized in month
/// m >= 1 is signal_scale * g(X_{m-1}) + noise_scale * shock. Month 0 carries a
/// pure-noise return that the shift discards.
inline RawPanel generate_synthetic_raw(const SyntheticSpec& spec) {
  spec.validate();
  const Eigen::Index M = spec.T + 1, N = spec.N, K = spec.K;
  RawPanel raw;
  for (Eigen::Index m = 0; m < M; ++m) raw.months.push_back(month_label(12 * 2000 + m));
  for (Eigen::Index i = 0; i < N; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "A%04ld", static_cast<long>(i));
    raw.assets.emplace_back(buf);
  }
  for (Eigen::Index j = 0; j < K; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "c%03ld", static_cast<long>(j));
    raw.characteristic_names.emplace_back(buf);
  }
  raw.present = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(M, N, true);
  raw.returns.resize(M, N);
  for (Eigen::Index m = 0; m < M; ++m) {
    RandomStream xs(spec.seed, StreamTag::synthetic_characteristics, {static_cast<std::uint64_t>(m)});
    Eigen::MatrixXd x(N, K);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < K; ++j) x(i, j) = xs.normal();
    raw.characteristics.push_back(std::move(x));
  }
  for (Eigen::Index m = 0; m < M; ++m) {
    RandomStream shocks(spec.seed, StreamTag::synthetic_shocks, {static_cast<std::uint64_t>(m)});
    Eigen::VectorXd r = spec.noise_scale * shocks.normal_vector(N);
    if (m > 0)
      r += spec.signal_scale *
           synthetic_signal(raw.characteristics[static_cast<std::size_t>(m - 1)], spec.k_true, spec.nonlinearity);
    raw.returns.row(m) = r.transpose();
  }
  return raw;
}

/// Shifts a complete raw panel into a Panel without any cleaning.
inline Panel shift_raw(const RawPanel& raw) {
  const auto M = static_cast<Eigen::Index>(raw.months.size());
  if (M < 2) throw ShapeError("need at least two months");
  std::vector<Eigen::MatrixXd> chars(raw.characteristics.begin(), raw.characteristics.end() - 1);
  std::vector<std::string> months(raw.months.begin(), raw.months.end() - 1);
  return Panel(std::move(months), raw.assets, raw.characteristic_names, std::move(chars),
               raw.returns.bottomRows(M - 1));
}

inline Panel generate_synthetic(const SyntheticSpec& spec) { return shift_raw(generate_synthetic_raw(spec)); }

}  // namespace factordiff
