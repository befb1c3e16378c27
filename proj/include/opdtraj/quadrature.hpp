// Copyright 2026 The opdtraj Authors
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

#pragma once

#include <cmath>
#include <queue>
#include <string>
#include <vector>

#include "opdtraj/errors.hpp"
#include "opdtraj/operator.hpp"

namespace opdtraj {

struct QuadratureResult {
  Matrix value;
  double error = 0.0;
  int evaluations = 0;
};

struct QuadratureOptions {
  double rtol = 1e-8;
  double atol = 1e-13;
  int max_intervals = 2000;
};

namespace detail {

// 15-point Kronrod nodes on [0,1] (positive half) with the embedded 7-point
// Gauss rule at the odd positions.
inline constexpr double kKronrodNodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
inline constexpr double kKronrodWeights[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kGaussWeights[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Interval {
  double a, b;
  Matrix value;
  double error;
  bool operator<(const Interval& o) const { return error < o.error; }
};

template <class F>
Interval kronrod_interval(const F& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  const Matrix fc = f(c);
  Matrix k = kKronrodWeights[7] * fc;
  Matrix g = kGaussWeights[3] * fc;
  for (int i = 0; i < 7; ++i) {
    const Matrix s = f(c - h * kKronrodNodes[i]) + f(c + h * kKronrodNodes[i]);
    k += kKronrodWeights[i] * s;
    if (i % 2 == 1) g += kGaussWeights[i / 2] * s;
  }
  k *= h;
  g *= h;
  return {a, b, k, (k - g).cwiseAbs().maxCoeff()};
}

}  // namespace detail

// Globally adaptive G7-K15 for matrix-valued integrands. The error is the
// max-entry difference between the Kronrod and Gauss estimates, summed over
// intervals.
template <class F>
QuadratureResult integrate_matrix(const F& f, double a, double b, const QuadratureOptions& opts = {}) {
  QuadratureResult out;
  if (a == b) {
    out.value = f(a) * 0.0;
    return out;
  }
  std::priority_queue<detail::Interval> heap;
  heap.push(detail::kronrod_interval(f, a, b));
  out.evaluations = 15;
  Matrix total = heap.top().value;
  double err = heap.top().error;
  while (err > std::max(opts.atol, opts.rtol * total.cwiseAbs().maxCoeff())) {
    if (static_cast<int>(heap.size()) >= opts.max_intervals) {
      throw NumericalError("integrate_matrix: no convergence, estimated error " +
                           std::to_string(err));
    }
    const detail::Interval worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    detail::Interval left = detail::kronrod_interval(f, worst.a, mid);
    detail::Interval right = detail::kronrod_interval(f, mid, worst.b);
    out.evaluations += 30;
    total += left.value + right.value - worst.value;
    err += left.error + right.error - worst.error;
    heap.push(std::move(left));
    heap.push(std::move(right));
  }
  // re-sum to shed the accumulated cancellation in the running totals
  out.value = Matrix::Zero(total.rows(), total.cols());
  out.error = 0.0;
  while (!heap.empty()) {
    out.value += heap.top().value;
    out.error += heap.top().error;
    heap.pop();
  }
  return out;
}

}  // namespace opdtraj
