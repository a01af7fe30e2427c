#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ebmprop/inference.hpp"
#include "ebmprop/rng.hpp"

using namespace ebmprop;

namespace {

Tensor column(const std::vector<double>& vals) {
  Tensor t = Tensor::matrix(static_cast<int>(vals.size()), 1);
  for (size_t i = 0; i < vals.size(); ++i) t[static_cast<int64_t>(i)] = vals[i];
  return t;
}

WeightedSamples gaussian_snis(double ebm_mean, double ebm_sigma, int M, Rng& rng) {
  // proposal N(0,1), energy -(y-mean)^2 / (2 sigma^2)
  std::vector<double> ys(static_cast<size_t>(M)), f(static_cast<size_t>(M)),
      lq(static_cast<size_t>(M));
  for (int m = 0; m < M; ++m) {
    const double y = rng.normal();
    ys[static_cast<size_t>(m)] = y;
    const double z = (y - ebm_mean) / ebm_sigma;
    f[static_cast<size_t>(m)] = -0.5 * z * z;
    lq[static_cast<size_t>(m)] = -0.5 * std::log(2.0 * 3.14159265358979323846) -
                                 0.5 * y * y;
  }
  return snis_weights(column(ys), std::move(f), std::move(lq));
}

}  // namespace

TEST_CASE("constant score gives uniform weights and full ess") {
  const int M = 64;
  std::vector<double> f(M, 2.5), lq(M, -0.5);
  WeightedSamples ws = snis_weights(Tensor::matrix(M, 1), std::move(f), std::move(lq));
  for (double w : ws.weights) CHECK(w == doctest::Approx(1.0 / M).epsilon(1e-14));
  CHECK(ws.ess == doctest::Approx(static_cast<double>(M)).epsilon(1e-12));
}

TEST_CASE("a dominating sample takes all the weight") {
  std::vector<double> f = {100.0, 0.0, 0.0};
  std::vector<double> lq = {0.0, 0.0, 0.0};
  WeightedSamples ws = snis_weights(Tensor::matrix(3, 1), std::move(f), std::move(lq));
  CHECK(ws.weights[0] >= 1.0 - 1e-40);
  CHECK(ws.weights[1] < 1e-40);
  CHECK(ws.ess == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weights match direct exponentiation at safe magnitudes") {
  Rng rng(7);
  const int M = 16;
  std::vector<double> f(M), lq(M);
  for (int m = 0; m < M; ++m) {
    f[static_cast<size_t>(m)] = rng.uniform(-2, 2);
    lq[static_cast<size_t>(m)] = rng.uniform(-2, 2);
  }
  WeightedSamples ws = snis_weights(Tensor::matrix(M, 1), f, lq);
  double denom = 0.0;
  for (int m = 0; m < M; ++m)
    denom += std::exp(f[static_cast<size_t>(m)] - lq[static_cast<size_t>(m)]);
  for (int m = 0; m < M; ++m)
    CHECK(ws.weights[static_cast<size_t>(m)] ==
          doctest::Approx(std::exp(f[static_cast<size_t>(m)] -
                                   lq[static_cast<size_t>(m)]) /
                          denom)
              .epsilon(1e-12));
}

TEST_CASE("empty sample set is rejected") {
  CHECK_THROWS_AS(snis_weights(Tensor::matrix(0, 1), {}, {}), std::invalid_argument);
}

TEST_CASE("expectation with unit function is one; uniform weights give sample mean") {
  Rng rng(9);
  const int M = 32;
  std::vector<double> ys(M);
  for (int m = 0; m < M; ++m) ys[static_cast<size_t>(m)] = rng.uniform(-3, 3);
  std::vector<double> f(M, 0.0), lq(M, 0.0);
  WeightedSamples ws = snis_weights(column(ys), std::move(f), std::move(lq));
  CHECK(std::abs(snis_expectation(ws, [](std::span<const double>) { return 1.0; }) -
                 1.0) < 1e-12);
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= M;
  CHECK(snis_expectation(ws, [](std::span<const double> y) { return y[0]; }) ==
        doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("mean and variance of an analytic energy model via importance sampling") {
  // energy model N(1, 0.5^2) under a N(0,1) proposal; average estimates over
  // 100 independent seeds
  const int M = 1024, S = 100;
  double mean_avg = 0.0, var_avg = 0.0;
  for (int s = 0; s < S; ++s) {
    Rng rng(1000 + static_cast<uint64_t>(s));
    WeightedSamples ws = gaussian_snis(1.0, 0.5, M, rng);
    MomentEstimate est = snis_mean_var(ws);
    mean_avg += est.mean[0];
    var_avg += est.variance[0];
  }
  mean_avg /= S;
  var_avg /= S;
  CHECK(std::abs(mean_avg - 1.0) < 0.02);
  CHECK(std::abs(var_avg - 0.25) < 0.02);
}

TEST_CASE("resampling: a single live weight repeats its sample") {
  std::vector<double> f = {0.0, 200.0, 0.0};
  std::vector<double> lq = {0.0, 0.0, 0.0};
  Tensor samples = column({-1.0, 0.5, 2.0});
  WeightedSamples ws = snis_weights(samples, std::move(f), std::move(lq));
  Rng rng(11);
  Tensor out = ebm_resample(ws, 50, rng);
  for (int i = 0; i < 50; ++i) CHECK(out(i, 0) == 0.5);
}

TEST_CASE("resampling with uniform weights is a plain bootstrap") {
  const int M = 8;
  std::vector<double> ys = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<double> f(M, 0.0), lq(M, 0.0);
  WeightedSamples ws = snis_weights(column(ys), std::move(f), std::move(lq));
  Rng rng(13);
  Tensor out = ebm_resample(ws, 4000, rng);
  std::vector<int> counts(M, 0);
  for (int i = 0; i < 4000; ++i) counts[static_cast<size_t>(out(i, 0))]++;
  for (int m = 0; m < M; ++m) CHECK(counts[static_cast<size_t>(m)] > 350);
}

TEST_CASE("resampled points match the quadrature distribution of the energy model") {
  // Kolmogorov-Smirnov statistic of 1e4 resampled points against the
  // quadrature CDF of the analytic energy density
  Rng rng(17);
  const int M = 100000;
  WeightedSamples ws = gaussian_snis(1.0, 0.5, M, rng);
  Tensor out = ebm_resample(ws, 10000, rng);
  std::vector<double> pts(out.data(), out.data() + 10000);
  std::sort(pts.begin(), pts.end());
  // CDF of N(1, 0.5^2) by quadrature over a dense grid
  auto cdf = [](double y) {
    return 0.5 * std::erfc(-(y - 1.0) / (0.5 * std::sqrt(2.0)));
  };
  double ks = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    const double f_emp_hi = static_cast<double>(i + 1) / pts.size();
    const double f_emp_lo = static_cast<double>(i) / pts.size();
    const double f_true = cdf(pts[i]);
    ks = std::max(ks, std::max(std::abs(f_emp_hi - f_true), std::abs(f_emp_lo - f_true)));
  }
  CHECK(ks < 0.03);
}

TEST_CASE("weights are invariant to constant energy shifts") {
  Rng rng(19);
  const int M = 32;
  std::vector<double> f(M), lq(M);
  for (int m = 0; m < M; ++m) {
    f[static_cast<size_t>(m)] = rng.uniform(-1, 1);
    lq[static_cast<size_t>(m)] = rng.uniform(-1, 1);
  }
  WeightedSamples a = snis_weights(Tensor::matrix(M, 1), f, lq);
  for (double& v : f) v += 123.0;
  WeightedSamples b = snis_weights(Tensor::matrix(M, 1), f, lq);
  for (int m = 0; m < M; ++m)
    CHECK(a.weights[static_cast<size_t>(m)] ==
          doctest::Approx(b.weights[static_cast<size_t>(m)]).epsilon(1e-12));
}

TEST_CASE("ess reaches M only for constant scores") {
  const int M = 16;
  std::vector<double> f(M, 1.0), lq(M, 0.5);
  WeightedSamples eq = snis_weights(Tensor::matrix(M, 1), f, lq);
  CHECK(eq.ess == doctest::Approx(static_cast<double>(M)).epsilon(1e-12));
  f[3] += 0.5;
  WeightedSamples neq = snis_weights(Tensor::matrix(M, 1), f, lq);
  CHECK(neq.ess < M - 1e-6);
  CHECK(neq.ess >= 1.0);
}

TEST_CASE("estimator variance shrinks as the proposal approaches the energy model") {
  // proposal N(mu_t, 1) interpolating mu_t: 2 -> 0 toward the energy model
  // N(0,1); variance of the mean estimate across seeds is non-increasing
  const int M = 256, S = 200;
  std::vector<double> variances;
  for (int t = 0; t < 5; ++t) {
    const double mu_q = 2.0 * (1.0 - t / 4.0);
    double sum = 0.0, sumsq = 0.0;
    for (int s = 0; s < S; ++s) {
      Rng rng(500 + static_cast<uint64_t>(t) * 1000 + s);
      std::vector<double> ys(M), f(M), lq(M);
      for (int m = 0; m < M; ++m) {
        const double y = rng.normal(mu_q, 1.0);
        ys[static_cast<size_t>(m)] = y;
        f[static_cast<size_t>(m)] = -0.5 * y * y;
        const double z = y - mu_q;
        lq[static_cast<size_t>(m)] = -0.9189385332046727 - 0.5 * z * z;
      }
      WeightedSamples ws = snis_weights(column(ys), std::move(f), std::move(lq));
      MomentEstimate est = snis_mean_var(ws);
      sum += est.mean[0];
      sumsq += est.mean[0] * est.mean[0];
    }
    variances.push_back(sumsq / S - (sum / S) * (sum / S));
  }
  for (size_t t = 1; t < variances.size(); ++t)
    CHECK(variances[t] <= variances[t - 1] * 1.05);
  CHECK(variances.back() < variances.front() * 0.2);
}
