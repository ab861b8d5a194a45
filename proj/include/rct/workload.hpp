#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace rct {

// Distribution of task (or bundle) execution times, in seconds.
//
// The long-tailed kind is a lognormal whose samples are clamped into
// [min_clip, max_clip]. Only min/max/mean are known for the docking
// workloads, so the log-location is pinned at the geometric midpoint of the
// clip range and sigma is solved so that the clamped mean hits the target.
// If sigma is given instead, the log-location is solved.
struct DurationModel {
  enum class Kind { constant, lognormal, empirical };

  Kind kind = Kind::constant;
  double value = 0.0;
  double mean = 0.0;
  double min_clip = 0.0;
  double max_clip = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<double> table;
  std::uint64_t seed = 0;

  static DurationModel constant(double seconds);
  static DurationModel lognormal(double mean, double min_clip, double max_clip,
                                 std::optional<double> sigma = std::nullopt);
  static DurationModel empirical(std::vector<double> samples);

  // Model mean (clamped mean for the lognormal kind).
  double expected() const;

  // Same shape with every time multiplied by k.
  DurationModel scaled(double k) const;

  double draw(Rng& rng) const;
};

namespace detail {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace detail

// E[clamp(X, a, b)] for X ~ LogNormal(mu, sigma).
inline double clamped_lognormal_mean(double mu, double sigma, double a, double b) {
  using detail::std_normal_cdf;
  if (sigma <= 0.0) return std::clamp(std::exp(mu), a, b);
  const double alpha = (std::log(a) - mu) / sigma;
  const double beta = (std::log(b) - mu) / sigma;
  return a * std_normal_cdf(alpha) + b * (1.0 - std_normal_cdf(beta)) +
         std::exp(mu + 0.5 * sigma * sigma) * (std_normal_cdf(beta - sigma) - std_normal_cdf(alpha - sigma));
}

inline DurationModel DurationModel::constant(double seconds) {
  if (!(seconds >= 0.0) || !std::isfinite(seconds))
    throw InvalidSpec("constant duration must be finite and >= 0");
  DurationModel m;
  m.kind = Kind::constant;
  m.value = seconds;
  m.mean = seconds;
  return m;
}

inline DurationModel DurationModel::lognormal(double mean, double min_clip, double max_clip,
                                              std::optional<double> sigma) {
  if (!(min_clip > 0.0) || !(mean > 0.0) || !(max_clip > 0.0))
    throw InvalidSpec("lognormal duration parameters must be positive");
  if (!(min_clip <= mean && mean <= max_clip))
    throw InvalidSpec("lognormal duration requires min_clip <= mean <= max_clip");
  DurationModel m;
  m.kind = Kind::lognormal;
  m.mean = mean;
  m.min_clip = min_clip;
  m.max_clip = max_clip;

  constexpr int kIterations = 200;
  constexpr double kRelTol = 1e-6;

  if (sigma) {
    if (!(*sigma > 0.0)) throw InvalidSpec("lognormal sigma must be > 0");
    m.sigma = *sigma;
    double lo = std::log(min_clip) - 12.0 * m.sigma;
    double hi = std::log(max_clip) + 12.0 * m.sigma;
    for (int i = 0; i < kIterations && hi - lo > kRelTol * std::max(1.0, std::abs(hi)); ++i) {
      const double mid = 0.5 * (lo + hi);
      (clamped_lognormal_mean(mid, m.sigma, min_clip, max_clip) < mean ? lo : hi) = mid;
    }
    m.mu = 0.5 * (lo + hi);
    return m;
  }

  m.mu = 0.5 * (std::log(min_clip) + std::log(max_clip));
  // Clamped mean rises monotonically from exp(mu) (sigma -> 0) towards
  // (min+max)/2 (sigma -> inf).
  if (mean == min_clip && mean == max_clip) return m;
  if (mean <= std::exp(m.mu) || mean >= 0.5 * (min_clip + max_clip))
    throw InvalidSpec("lognormal mean " + std::to_string(mean) +
                      " is not reachable with the location pinned at the clip midpoint; give sigma");
  double lo = 0.0;
  double hi = 1.0;
  while (clamped_lognormal_mean(m.mu, hi, min_clip, max_clip) < mean) hi *= 2.0;
  for (int i = 0; i < kIterations && hi - lo > kRelTol * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (clamped_lognormal_mean(m.mu, mid, min_clip, max_clip) < mean ? lo : hi) = mid;
  }
  m.sigma = 0.5 * (lo + hi);
  return m;
}

inline DurationModel DurationModel::empirical(std::vector<double> samples) {
  if (samples.empty()) throw InvalidSpec("empirical duration table is empty");
  for (double s : samples)
    if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidSpec("empirical durations must be finite and >= 0");
  DurationModel m;
  m.kind = Kind::empirical;
  m.table = std::move(samples);
  double sum = 0.0;
  for (double s : m.table) sum += s;
  m.mean = sum / static_cast<double>(m.table.size());
  m.min_clip = *std::min_element(m.table.begin(), m.table.end());
  m.max_clip = *std::max_element(m.table.begin(), m.table.end());
  return m;
}

inline double DurationModel::expected() const {
  if (kind == Kind::lognormal) return clamped_lognormal_mean(mu, sigma, min_clip, max_clip);
  return mean;
}

inline DurationModel DurationModel::scaled(double k) const {
  if (!(k > 0.0)) throw InvalidSpec("duration scale must be > 0");
  DurationModel m = *this;
  m.value *= k;
  m.mean *= k;
  m.min_clip *= k;
  m.max_clip *= k;
  m.mu += std::log(k);
  for (double& s : m.table) s *= k;
  return m;
}

inline double DurationModel::draw(Rng& rng) const {
  switch (kind) {
    case Kind::constant:
      return value;
    case Kind::lognormal: {
      std::normal_distribution<double> z;
      return std::clamp(std::exp(mu + sigma * z(rng)), min_clip, max_clip);
    }
    case Kind::empirical: {
      std::uniform_int_distribution<std::size_t> pick(0, table.size() - 1);
      return table[pick(rng)];
    }
  }
  return value;
}

inline std::vector<double> sample_durations(const DurationModel& model, std::size_t n) {
  if (n == 0) throw InvalidSpec("sample_durations needs n >= 1");
  Rng rng = make_stream(model.seed, stream::durations);
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(model.draw(rng));
  return out;
}

// Per-task resource shape of a workload.
struct TaskShape {
  int cpu_cores_per_rank = 1;
  int ranks = 1;
  int gpus = 0;

  bool operator==(const TaskShape&) const = default;
};

struct WorkloadPreset {
  std::string name;
  std::uint64_t item_count = 1;
  DurationModel durations;
  int bundle_size = 1;
  TaskShape shape;
};

// Docking use cases: clip ranges and means of the measured docking times.
// wf3/wf4 durations are short stand-ins for the reduced-runtime test runs.
inline WorkloadPreset make_preset(std::string_view name) {
  WorkloadPreset p;
  p.name = std::string(name);
  if (name == "wf1-uc1") {
    p.item_count = 205'000'000;
    p.durations = DurationModel::lognormal(28.8, 0.1, 3582.6);
    p.shape = {1, 1, 0};
  } else if (name == "wf1-uc2") {
    p.item_count = 125'000'000;
    p.durations = DurationModel::lognormal(25.1, 0.1, 833.1);
    p.shape = {1, 1, 0};
  } else if (name == "wf1-uc3") {
    p.item_count = 57'000'000;
    p.durations = DurationModel::lognormal(36.2, 0.1, 263.9);
    p.bundle_size = 16;
    p.shape = {1, 1, 1};
  } else if (name == "wf3") {
    p.item_count = 6000;
    p.durations = DurationModel::constant(60.0);
    p.shape = {1, 1, 1};
  } else if (name == "wf4") {
    p.item_count = 260;
    p.durations = DurationModel::constant(180.0);
    p.shape = {1, 36, 0};
  } else {
    throw InvalidSpec("unknown workload preset '" + std::string(name) + "'");
  }
  return p;
}

inline constexpr std::string_view kWorkloadPresets[] = {"wf1-uc1", "wf1-uc2", "wf1-uc3", "wf3", "wf4"};

}  // namespace rct
