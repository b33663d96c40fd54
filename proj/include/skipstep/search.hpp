// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skipstep {

// ---- report ---------------------------------------------------------------------

struct Probe {
  /// sign, greedy, flip, refine, depth, multi.
  std::string phase;
  double value = 0.0;
  double metric = 0.0;
  std::uint64_t cumulative_sampler_calls = 0;
};

struct SearchReport {
  std::vector<Probe> probes;
  double chosen = 0.0;
  std::uint64_t sampler_calls = 0;
  /// Closed-form call count for the configuration and probe count.
  std::uint64_t analytic_calls = 0;
  bool warning = false;
  std::string note;
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> config;

  static constexpr const char* kCsvHeader = "probe_index,phase,value,metric,cumulative_sampler_calls";

  std::string csv() const {
    std::string s = std::string(kCsvHeader) + "\n";
    char buf[160];
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const auto& p = probes[i];
      std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%llu\n", i, p.phase.c_str(), p.value, p.metric,
                    static_cast<unsigned long long>(p.cumulative_sampler_calls));
      s += buf;
    }
    return s;
  }
};

// ---- time-step search ---------------------------------------------------------------

enum class DirectionMode { Reference, UniformLiteral };

struct TsSearchConfig {
  std::size_t n = 10;
  std::size_t N = 50;
  double eta_step = 0.05;
  double eps_probe = 0.1;
  std::size_t batch = 64;
  DirectionMode direction_mode = DirectionMode::Reference;
  bool refine = false;
  double alpha = 30.0;
  double t_max = 999.0;
  double guidance = 1.0;
  double eta_ddim = 0.0;
  /// Safety stop for the greedy walk.
  std::size_t max_probes = 400;

  void validate() const {
    if (!(eta_step > 0.0)) throw std::invalid_argument("ts search: eta_step must be > 0");
    if (!(eps_probe > 0.0)) throw std::invalid_argument("ts search: eps_probe must be > 0");
    if (n >= N) throw std::invalid_argument("ts search: n must be smaller than N");
    if (n < 2) throw std::invalid_argument("ts search: n must be >= 2");
    if (batch < 1) throw std::invalid_argument("ts search: batch must be >= 1");
  }
};

/// A sampler seen through the search: reference samples, gamma-schedule
/// samples, a distance between samples, and call accounting.
template <class O>
concept TsObjective = requires(O& o, const O& co, double g, const typename O::Sample& a) {
  typename O::Sample;
  { o.reference() } -> std::same_as<typename O::Sample>;
  { o.sample(g) } -> std::same_as<typename O::Sample>;
  { co.distance(a, a) } -> std::convertible_to<double>;
  { co.sampler_calls() } -> std::convertible_to<std::uint64_t>;
  /// Sampler calls per schedule step for the whole batch (batch x passes).
  { co.calls_per_step() } -> std::convertible_to<std::uint64_t>;
  /// Smallest usable gamma (scale-down bound); walks stop before it.
  { co.min_gamma() } -> std::convertible_to<double>;
};

struct TsResult {
  double gamma = 1.0;
  int sign = 1;
  SearchReport report;
};

namespace detail {

inline int sign_of(double diff) { return diff >= 0.0 ? 1 : -1; }

}  // namespace detail

/// s = +1 when gamma = 1 + eps is the better direction. Reference mode
/// compares both probes against the reference; literal mode anchors on the
/// uniform-schedule sample. Ties resolve to +1.
template <TsObjective O>
int ts_direction_sign(O& o, const TsSearchConfig& cfg) {
  const auto ref = cfg.direction_mode == DirectionMode::Reference ? o.reference() : o.sample(1.0);
  const auto pos = o.sample(1.0 + cfg.eps_probe);
  const auto neg = o.sample(1.0 / (1.0 + cfg.eps_probe));
  return detail::sign_of(o.distance(ref, neg) - o.distance(ref, pos));
}

/// Sign probe plus greedy walk over p = 1, 1 + eta, 1 + 2 eta, ... with
/// gamma = p^s, stopping at the first probe that does not improve. If the first
/// step is already worse the opposite direction is tried; if that is worse
/// too, gamma = 1 is returned with a warning.
template <TsObjective O>
TsResult ts_optimize(O& o, const TsSearchConfig& cfg) {
  cfg.validate();
  TsResult res;
  SearchReport& rep = res.report;
  const std::uint64_t calls0 = o.sampler_calls();
  std::uint64_t fresh = 0;

  const auto push = [&](const char* phase, double value, double metric) {
    rep.probes.push_back({phase, value, metric, o.sampler_calls() - calls0});
  };

  const auto ref = o.reference();
  const auto x_uni = o.sample(1.0);
  const auto x_pos = o.sample(1.0 + cfg.eps_probe);
  const auto x_neg = o.sample(1.0 / (1.0 + cfg.eps_probe));
  const double m_uni = o.distance(ref, x_uni);
  const double m_pos = o.distance(ref, x_pos);
  const double m_neg = o.distance(ref, x_neg);
  push("sign", 1.0, m_uni);
  push("sign", 1.0 + cfg.eps_probe, m_pos);
  push("sign", 1.0 / (1.0 + cfg.eps_probe), m_neg);
  res.sign = cfg.direction_mode == DirectionMode::Reference
                 ? detail::sign_of(m_neg - m_pos)
                 : detail::sign_of(o.distance(x_uni, x_neg) - o.distance(x_uni, x_pos));

  // p on a grid of eta/5 so refine probes can reuse greedy ones.
  constexpr int kSub = 5;
  const double dp = cfg.eta_step / kSub;
  std::map<std::pair<int, int>, double> cache;
  const auto gamma_at = [&](int s, int idx) { return std::pow(1.0 + idx * dp, s); };
  const auto metric_at = [&](int s, int idx, const char* phase) -> std::optional<double> {
    if (idx == 0) return m_uni;
    const double g = gamma_at(s, idx);
    if (g <= o.min_gamma()) return std::nullopt;
    if (auto it = cache.find({s, idx}); it != cache.end()) {
      push(phase, g, it->second);
      return it->second;
    }
    if (fresh >= cfg.max_probes) return std::nullopt;
    const double m = o.distance(ref, o.sample(g));
    ++fresh;
    cache[{s, idx}] = m;
    push(phase, g, m);
    return m;
  };
  // Returns the last improving grid index (start_idx if none).
  const auto walk = [&](int s, int start_idx, double m_start, int stride, int limit, const char* phase) {
    int best = start_idx;
    double m_prev = m_start;
    for (int idx = start_idx + stride; idx <= limit; idx += stride) {
      const auto m = metric_at(s, idx, phase);
      if (!m || *m >= m_prev) break;
      m_prev = *m;
      best = idx;
    }
    return best;
  };

  constexpr int kNoLimit = std::numeric_limits<int>::max() / 2;
  int s = res.sign;
  int best = walk(s, 0, m_uni, kSub, kNoLimit, "greedy");
  if (best == 0) {
    s = -s;
    best = walk(s, 0, m_uni, kSub, kNoLimit, "flip");
    if (best == 0) {
      rep.warning = true;
      rep.note = "uniform schedule not improved in either direction";
    }
  }
  if (cfg.refine && best > 0) {
    const int lo = best - kSub;
    const double m_lo = lo == 0 ? m_uni : cache.at({s, lo});
    best = walk(s, lo, m_lo, 1, best + kSub, "refine");
  }
  res.sign = best > 0 ? s : res.sign;
  res.gamma = best > 0 ? gamma_at(s, best) : 1.0;
  rep.chosen = res.gamma;
  rep.sampler_calls = o.sampler_calls() - calls0;
  rep.analytic_calls = o.calls_per_step() * (cfg.N + 3 * cfg.n + cfg.n * fresh);
  return res;
}

/// Synthetic objective for tests: distance to the reference is f(gamma).
struct SyntheticTsObjective {
  struct Sample {
    bool is_reference = false;
    double gamma = 1.0;
  };
  std::function<double(double)> f;
  std::size_t batch = 1;
  std::size_t n = 10;
  std::size_t N = 50;
  std::uint64_t calls = 0;

  Sample reference() {
    calls += batch * N;
    return {true, 0.0};
  }
  Sample sample(double g) {
    calls += batch * n;
    return {false, g};
  }
  double distance(const Sample& a, const Sample& b) const {
    if (a.is_reference) return f(b.gamma);
    if (b.is_reference) return f(a.gamma);
    return std::abs(f(a.gamma) - f(b.gamma));
  }
  std::uint64_t sampler_calls() const { return calls; }
  std::uint64_t calls_per_step() const { return batch; }
  double min_gamma() const { return 0.0; }
};

// ---- depth search -----------------------------------------------------------------

template <class Q>
concept DepthQuality = requires(Q& q, std::size_t d) {
  { q.quality(d) } -> std::convertible_to<double>;
};

struct DepthSearchResult {
  std::size_t depth = 0;
  bool no_compression = false;
  SearchReport report;
};

/// Walks d = d_max - 1, d_max - 2, ... and stops at the first depth whose
/// quality falls below `threshold`; returns the depth above it (the
/// shallowest passing one). All depths passing gives 1.
template <DepthQuality Q>
DepthSearchResult depth_search(Q& q, std::size_t d_max, double threshold,
                               const std::function<std::uint64_t()>& calls = {}) {
  if (d_max < 1) throw std::invalid_argument("depth_search: d_max must be >= 1");
  if (std::isnan(threshold)) throw std::invalid_argument("depth_search: threshold is NaN");
  DepthSearchResult res;
  const std::uint64_t c0 = calls ? calls() : 0;
  std::size_t d = d_max;
  while (d > 1) {
    --d;
    const double m = q.quality(d);
    res.report.probes.push_back({"depth", static_cast<double>(d), m, calls ? calls() - c0 : 0});
    if (m < threshold) {
      res.depth = d + 1;
      break;
    }
  }
  if (res.depth == 0) res.depth = 1;
  if (res.depth == d_max) {
    res.no_compression = true;
    res.report.warning = true;
    res.report.note = "quality below threshold already at depth " + std::to_string(d_max - 1);
  }
  res.report.chosen = static_cast<double>(res.depth);
  res.report.sampler_calls = calls ? calls() - c0 : 0;
  return res;
}

// ---- multi-depth enumeration ---------------------------------------------------------

struct MultiDepthConfig {
  std::vector<std::size_t> depths;
  std::size_t n = 6;
  std::size_t group = 2;
  std::size_t max_configs = 10'000;

  std::size_t groups() const { return n / group; }

  std::size_t count() const {
    std::size_t c = 1;
    for (std::size_t i = 0; i < groups(); ++i) {
      if (c > max_configs) break;
      c *= depths.size();
    }
    return c;
  }

  void validate() const {
    if (depths.empty()) throw std::invalid_argument("multi-depth: empty depth set");
    if (group == 0 || n % group != 0) {
      throw std::invalid_argument("multi-depth: group size " + std::to_string(group) + " must divide n = " +
                                  std::to_string(n));
    }
    const std::size_t c = count();
    if (c > max_configs) {
      throw std::invalid_argument("multi-depth: " + std::to_string(depths.size()) + "^" + std::to_string(groups()) +
                                  " configurations exceed the guard of " + std::to_string(max_configs));
    }
  }
};

struct MultiDepthRow {
  /// One depth per step group, first group = largest timesteps.
  std::vector<std::size_t> group_depths;
  double quality = 0.0;
  /// Fractions of the full model: parameters at the deepest depth used and
  /// MACs summed over steps.
  double param_fraction = 0.0;
  double mac_fraction = 0.0;

  std::size_t max_depth() const { return *std::max_element(group_depths.begin(), group_depths.end()); }
  bool uniform() const {
    return std::all_of(group_depths.begin(), group_depths.end(),
                       [&](std::size_t d) { return d == group_depths.front(); });
  }
};

/// Expands group depths to one depth per step.
inline std::vector<std::size_t> per_step_depths(const std::vector<std::size_t>& groups, std::size_t group) {
  std::vector<std::size_t> out;
  out.reserve(groups.size() * group);
  for (auto d : groups) out.insert(out.end(), group, d);
  return out;
}

/// Rows in lexicographic order of group depths (taken in the order of
/// cfg.depths). `quality` receives per-step depths; `param_fraction(d)` and
/// `mac_fraction(d)` are full-model fractions for one step at depth d.
inline std::vector<MultiDepthRow> multi_depth_enumerate(
    const MultiDepthConfig& cfg, const std::function<double(const std::vector<std::size_t>&)>& quality,
    const std::function<double(std::size_t)>& param_fraction, const std::function<double(std::size_t)>& mac_fraction) {
  cfg.validate();
  const std::size_t G = cfg.groups();
  const std::size_t total = cfg.count();
  std::vector<MultiDepthRow> rows;
  rows.reserve(total);
  std::vector<std::size_t> idx(G, 0);
  for (std::size_t r = 0; r < total; ++r) {
    MultiDepthRow row;
    for (std::size_t g = 0; g < G; ++g) row.group_depths.push_back(cfg.depths[idx[g]]);
    const auto steps = per_step_depths(row.group_depths, cfg.group);
    row.quality = quality(steps);
    row.param_fraction = param_fraction(row.max_depth());
    for (auto d : steps) row.mac_fraction += mac_fraction(d);
    row.mac_fraction /= static_cast<double>(steps.size());
    rows.push_back(std::move(row));
    for (std::size_t g = G; g-- > 0;) {
      if (++idx[g] < cfg.depths.size()) break;
      idx[g] = 0;
    }
  }
  return rows;
}

// ---- single- vs multi-depth comparison --------------------------------------------------

struct RegimeChoice {
  bool empty = true;
  std::size_t row = 0;
  double d_quality = 0.0;
  /// Percentage points of the full model.
  double d_param = 0.0;
  double d_mac = 0.0;
};

struct ParetoLine {
  std::size_t depth = 0;
  double quality = 0.0;
  double param_fraction = 0.0;
  double mac_fraction = 0.0;
  /// (a) parameters <= baseline, quality loss under the tolerance, min MACs.
  RegimeChoice fix_param_min_time;
  /// (b) MAC increase under the tolerance, max quality.
  RegimeChoice fix_time_max_quality;
  /// (c) quality loss under the tolerance, any size, min MACs.
  RegimeChoice fix_quality_min_time;
};

struct ParetoTolerances {
  double quality_db = 0.2;
  double mac_points = 1.0;
};

/// One line per uniform-depth row in the table, in table order.
inline std::vector<ParetoLine> pareto_report(const std::vector<MultiDepthRow>& rows, ParetoTolerances tol = {}) {
  std::vector<ParetoLine> out;
  for (const auto& base : rows) {
    if (!base.uniform()) continue;
    ParetoLine line;
    line.depth = base.group_depths.front();
    line.quality = base.quality;
    line.param_fraction = base.param_fraction;
    line.mac_fraction = base.mac_fraction;
    const auto choice = [&](std::size_t i) {
      RegimeChoice c;
      c.empty = false;
      c.row = i;
      c.d_quality = rows[i].quality - base.quality;
      c.d_param = 100.0 * (rows[i].param_fraction - base.param_fraction);
      c.d_mac = 100.0 * (rows[i].mac_fraction - base.mac_fraction);
      return c;
    };
    // Ties: higher quality, then earlier row.
    const auto better_time = [&](const RegimeChoice& cur, std::size_t i) {
      if (cur.empty) return true;
      const auto& a = rows[i];
      const auto& b = rows[cur.row];
      if (a.mac_fraction != b.mac_fraction) return a.mac_fraction < b.mac_fraction;
      return a.quality > b.quality;
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      const double dq = r.quality - base.quality;
      const double dmac = 100.0 * (r.mac_fraction - base.mac_fraction);
      if (r.param_fraction <= base.param_fraction && dq > -tol.quality_db &&
          better_time(line.fix_param_min_time, i)) {
        line.fix_param_min_time = choice(i);
      }
      if (dmac < tol.mac_points &&
          (line.fix_time_max_quality.empty || r.quality > rows[line.fix_time_max_quality.row].quality)) {
        line.fix_time_max_quality = choice(i);
      }
      if (dq > -tol.quality_db && better_time(line.fix_quality_min_time, i)) line.fix_quality_min_time = choice(i);
    }
    out.push_back(line);
  }
  return out;
}

inline std::string pareto_csv(const std::vector<ParetoLine>& lines) {
  std::string s =
      "depth,psnr,mac_pct,param_pct,a_dmac,b_dpsnr,b_dparam,c_dmac,c_dparam\n";
  char buf[256];
  const auto cell = [](const RegimeChoice& c, double v) {
    if (c.empty) return std::string("empty");
    char b[32];
    std::snprintf(b, sizeof b, "%+.2f", v);
    return std::string(b);
  };
  for (const auto& l : lines) {
    std::snprintf(buf, sizeof buf, "%zu,%.2f,%.2f,%.2f,", l.depth, l.quality, 100.0 * l.mac_fraction,
                  100.0 * l.param_fraction);
    s += buf;
    s += cell(l.fix_param_min_time, l.fix_param_min_time.d_mac) + ",";
    s += cell(l.fix_time_max_quality, l.fix_time_max_quality.d_quality) + ",";
    s += cell(l.fix_time_max_quality, l.fix_time_max_quality.d_param) + ",";
    s += cell(l.fix_quality_min_time, l.fix_quality_min_time.d_mac) + ",";
    s += cell(l.fix_quality_min_time, l.fix_quality_min_time.d_param) + "\n";
  }
  return s;
}

}  // namespace skipstep
