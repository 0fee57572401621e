// Copyright 2026 The Epihawkes Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EPIHAWKES_RNG_HPP_
#define EPIHAWKES_RNG_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace epihawkes {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a substream seed from a master seed plus up to four stream keys.
// Samplers are keyed by (purpose, attempt, interval, particle), never by
// worker thread, so runs are reproducible at any thread count.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t k0,
                                 std::uint64_t k1 = 0, std::uint64_t k2 = 0,
                                 std::uint64_t k3 = 0) {
  std::uint64_t s = master;
  std::uint64_t out = splitmix64(s);
  s ^= k0 * 0x9e3779b97f4a7c15ULL;
  out ^= splitmix64(s);
  s ^= k1 * 0xc2b2ae3d27d4eb4fULL;
  out ^= splitmix64(s);
  s ^= k2 * 0x165667b19e3779f9ULL;
  out ^= splitmix64(s);
  s ^= k3 * 0xd6e8feb86659fd93ULL;
  out ^= splitmix64(s);
  return out;
}

// Stream purposes. Values are part of each run's reproducibility contract:
// changing them changes sampled trajectories for a given seed.
namespace stream {
inline constexpr std::uint64_t kInitParams = 1;
inline constexpr std::uint64_t kInitGamma = 2;
inline constexpr std::uint64_t kInitSim = 3;
inline constexpr std::uint64_t kLookaheadGamma = 4;
inline constexpr std::uint64_t kLookaheadSim = 5;
inline constexpr std::uint64_t kResample = 6;
inline constexpr std::uint64_t kRegenerate = 7;
inline constexpr std::uint64_t kPropagateGamma = 8;
inline constexpr std::uint64_t kPropagateSim = 9;
inline constexpr std::uint64_t kRescue = 10;
inline constexpr std::uint64_t kIntensitySubsample = 11;
inline constexpr std::uint64_t kForecastResample = 12;
inline constexpr std::uint64_t kForecastGamma = 13;
inline constexpr std::uint64_t kForecastSim = 14;
inline constexpr std::uint64_t kForecastObs = 15;
inline constexpr std::uint64_t kSynthSim = 16;
inline constexpr std::uint64_t kSynthObs = 17;
inline constexpr std::uint64_t kLineageDraw = 18;
}  // namespace stream

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean, double sd) {
    if (sd == 0.0) return mean;
    return std::normal_distribution<double>(mean, sd)(engine_);
  }

  double gamma_rate(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }

  std::int64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<std::int64_t>(mean)(engine_);
  }

  // Negative binomial with mean mu and dispersion v (variance mu + v*mu^2),
  // sampled as a gamma-Poisson mixture.
  std::int64_t negative_binomial(double mu, double v) {
    if (mu <= 0.0) return 0;
    if (v <= 0.0) throw std::invalid_argument("negative_binomial: v must be > 0");
    const double r = 1.0 / v;
    const double lambda = std::gamma_distribution<double>(r, mu * v)(engine_);
    return poisson(lambda);
  }

  // Index draw proportional to the (non-negative, not necessarily
  // normalized) weights. Caller guarantees a positive total.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("categorical: non-positive total weight");
    double u = uniform() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace epihawkes

#endif  // EPIHAWKES_RNG_HPP_
