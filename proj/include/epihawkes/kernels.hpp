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

#ifndef EPIHAWKES_KERNELS_HPP_
#define EPIHAWKES_KERNELS_HPP_

#include <boost/math/distributions/gamma.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "epihawkes/rng.hpp"

namespace epihawkes {

// Gamma transition kernel given by its mean and standard deviation in days.
// Moment matching: shape = mean^2/sd^2, rate = mean/sd^2.
struct KernelSpec {
  double mean = 0.0;
  double sd = 0.0;

  double shape() const { return mean * mean / (sd * sd); }
  double rate() const { return mean / (sd * sd); }

  void validate() const {
    if (!(mean > 0.0) || !(sd > 0.0)) {
      throw std::invalid_argument("KernelSpec: mean and sd must be > 0");
    }
  }
};

class UnsampleableRegionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Evaluated gamma kernel. Construction computes the upper tail cutoff (the
// point beyond which less than 1e-12 of the mass remains); simulation fast
// paths may skip parents older than that, likelihood code always uses exact
// CDFs.
class GammaKernel {
 public:
  explicit GammaKernel(KernelSpec spec)
      : spec_(spec), dist_(spec.shape(), 1.0 / spec.rate()) {
    spec.validate();
    tail_cutoff_ = boost::math::quantile(dist_, 1.0 - 1e-12);
  }

  const KernelSpec& spec() const { return spec_; }
  double mean() const { return spec_.mean; }
  double sd() const { return spec_.sd; }
  double shape() const { return spec_.shape(); }
  double rate() const { return spec_.rate(); }
  double tail_cutoff() const { return tail_cutoff_; }

  double density(double s) const {
    if (s < 0.0) return 0.0;
    if (s == 0.0) {
      // Boundary of the support: 0 above shape 1, rate at shape 1.
      if (shape() > 1.0) return 0.0;
      if (shape() == 1.0) return rate();
      return std::numeric_limits<double>::infinity();
    }
    return boost::math::pdf(dist_, s);
  }

  double cdf(double s) const {
    if (s <= 0.0) return 0.0;
    if (std::isinf(s)) return 1.0;
    return boost::math::cdf(dist_, s);
  }

  // Mass on [lo, hi): CDF(hi) - CDF(lo), clamped to [0, 1].
  double interval_mass(double lo, double hi) const {
    if (lo > hi) throw std::invalid_argument("interval_mass: lo > hi");
    if (hi <= 0.0) return 0.0;
    const double mass = cdf(hi) - cdf(std::max(lo, 0.0));
    return std::min(1.0, std::max(0.0, mass));
  }

  // Inverse-CDF draw from the kernel conditioned on [lo, hi).
  double sample_truncated(double lo, double hi, RngStream& rng) const {
    lo = std::max(lo, 0.0);
    const double p_lo = cdf(lo);
    const double p_hi = cdf(hi);
    if (!(p_hi > p_lo)) {
      throw UnsampleableRegionError("sample_truncated: zero mass on [lo, hi)");
    }
    const double u = rng.uniform();  // [0, 1)
    const double p = p_lo + u * (p_hi - p_lo);
    double x = boost::math::quantile(dist_, std::min(p, 1.0 - 1e-16));
    if (x < lo) x = lo;
    if (std::isfinite(hi) && x >= hi) x = std::nextafter(hi, lo);
    return x;
  }

 private:
  KernelSpec spec_;
  boost::math::gamma_distribution<double> dist_;
  double tail_cutoff_ = 0.0;
};

inline double density(const KernelSpec& k, double s) { return GammaKernel(k).density(s); }

inline double interval_mass(const KernelSpec& k, double lo, double hi) {
  return GammaKernel(k).interval_mass(lo, hi);
}

inline double sample_truncated(const KernelSpec& k, double lo, double hi, RngStream& rng) {
  return GammaKernel(k).sample_truncated(lo, hi, rng);
}

}  // namespace epihawkes

#endif  // EPIHAWKES_KERNELS_HPP_
