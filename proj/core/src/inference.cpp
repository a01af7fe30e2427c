#include "ebmprop/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ebmprop {

WeightedSamples snis_weights(Tensor samples, std::vector<double> f_vals,
                             std::vector<double> logq_vals) {
  const size_t M = f_vals.size();
  if (M == 0) throw std::invalid_argument("snis_weights: M = 0");
  if (logq_vals.size() != M)
    throw std::invalid_argument("snis_weights: f and log q length mismatch");
  if (samples.rows() != static_cast<int>(M))
    throw std::invalid_argument("snis_weights: sample count mismatch");

  WeightedSamples ws;
  ws.samples = std::move(samples);
  ws.log_f = std::move(f_vals);
  ws.log_q = std::move(logq_vals);
  ws.weights.resize(M);

  double mx = -1e308;
  for (size_t m = 0; m < M; ++m) {
    ws.weights[m] = ws.log_f[m] - ws.log_q[m];
    mx = std::max(mx, ws.weights[m]);
  }
  double s = 0.0;
  for (size_t m = 0; m < M; ++m) {
    ws.weights[m] = std::exp(ws.weights[m] - mx);
    s += ws.weights[m];
  }
  double sq = 0.0;
  for (size_t m = 0; m < M; ++m) {
    ws.weights[m] /= s;
    sq += ws.weights[m] * ws.weights[m];
  }
  ws.ess = 1.0 / sq;
  return ws;
}

double snis_expectation(const WeightedSamples& ws,
                        const std::function<double(std::span<const double>)>& xi) {
  const int D = ws.samples.cols();
  double acc = 0.0;
  for (int m = 0; m < ws.size(); ++m) {
    std::span<const double> y{ws.samples.data() + static_cast<size_t>(m) * D,
                              static_cast<size_t>(D)};
    acc += ws.weights[static_cast<size_t>(m)] * xi(y);
  }
  return acc;
}

MomentEstimate snis_mean_var(const WeightedSamples& ws) {
  const int D = ws.samples.cols();
  MomentEstimate est;
  est.mean.assign(static_cast<size_t>(D), 0.0);
  est.variance.assign(static_cast<size_t>(D), 0.0);
  for (int m = 0; m < ws.size(); ++m) {
    const double w = ws.weights[static_cast<size_t>(m)];
    for (int d = 0; d < D; ++d) {
      const double y = ws.samples(m, d);
      est.mean[static_cast<size_t>(d)] += w * y;
      est.variance[static_cast<size_t>(d)] += w * y * y;
    }
  }
  for (int d = 0; d < D; ++d)
    est.variance[static_cast<size_t>(d)] -=
        est.mean[static_cast<size_t>(d)] * est.mean[static_cast<size_t>(d)];
  return est;
}

Tensor ebm_resample(const WeightedSamples& ws, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("ebm_resample: n must be >= 1");
  const int D = ws.samples.cols();
  std::vector<double> cum(ws.weights.size());
  double acc = 0.0;
  for (size_t m = 0; m < ws.weights.size(); ++m) {
    acc += ws.weights[m];
    cum[m] = acc;
  }
  Tensor out = Tensor::matrix(n, D);
  for (int i = 0; i < n; ++i) {
    const int m = rng.categorical_from_cumulative(cum);
    for (int d = 0; d < D; ++d) out(i, d) = ws.samples(m, d);
  }
  return out;
}

}  // namespace ebmprop
