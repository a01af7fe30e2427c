#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ebmprop/mdn.hpp"
#include "ebmprop/rng.hpp"

using namespace ebmprop;

namespace {

double normal_pdf(double y, double mu, double sigma) {
  const double z = (y - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

MixtureParams single_batch(std::vector<double> w, std::vector<double> mu,
                           std::vector<double> sigma) {
  MixtureParams p;
  p.K = static_cast<int>(w.size());
  p.D = 1;
  p.weights = Tensor::matrix(1, p.K);
  p.means = Tensor::matrix(1, p.K);
  p.sigmas = Tensor::matrix(1, p.K);
  for (int k = 0; k < p.K; ++k) {
    p.weights[k] = w[static_cast<size_t>(k)];
    p.means[k] = mu[static_cast<size_t>(k)];
    p.sigmas[k] = sigma[static_cast<size_t>(k)];
  }
  return p;
}

Tensor one_point(double y) {
  Tensor t = Tensor::matrix(1, 1);
  t[0] = y;
  return t;
}

}  // namespace

TEST_CASE("zero raw weight logits map to uniform mixture weights") {
  for (int K : {1, 3, 4, 16}) {
    Tensor logits = Tensor::matrix(2, K);
    Tensor means = Tensor::matrix(2, K, 0.5);
    Tensor logs2 = Tensor::matrix(2, K, 0.0);
    MixtureParams p = mixture_params_from_raw(logits, means, logs2);
    for (int b = 0; b < 2; ++b)
      for (int k = 0; k < K; ++k)
        CHECK(p.weights(b, k) == doctest::Approx(1.0 / K).epsilon(1e-14));
    p.validate();
  }
}

TEST_CASE("raw sigma head output s maps to exp(s/2)") {
  Tensor logits = Tensor::matrix(1, 2);
  Tensor means = Tensor::matrix(1, 2);
  Tensor logs2 = Tensor::matrix(1, 2);
  logs2[0] = 1.3;
  logs2[1] = -0.7;
  MixtureParams p = mixture_params_from_raw(logits, means, logs2);
  CHECK(p.sigmas[0] == std::exp(0.5 * 1.3));
  CHECK(p.sigmas[1] == std::exp(0.5 * -0.7));
}

TEST_CASE("sigma floor clamps collapsed scales") {
  Tensor logits = Tensor::matrix(1, 1);
  Tensor means = Tensor::matrix(1, 1);
  Tensor logs2 = Tensor::matrix(1, 1, -100.0);
  MixtureParams p = mixture_params_from_raw(logits, means, logs2);
  CHECK(p.sigmas[0] == kSigmaFloor);
}

TEST_CASE("head parameters are batch invariant") {
  MdnHead head({10, 10, 4, 1, Activation::kRelu, 77, kSigmaFloor});
  Rng rng(5);
  Tensor h2 = Tensor::matrix(2, 10);
  for (int64_t i = 0; i < h2.numel(); ++i) h2[i] = rng.uniform(-1, 1);
  MixtureParams both = mdn_params(head, h2);
  for (int b = 0; b < 2; ++b) {
    Tensor h1 = Tensor::matrix(1, 10);
    for (int j = 0; j < 10; ++j) h1[j] = h2(b, j);
    MixtureParams one = mdn_params(head, h1);
    for (int k = 0; k < 4; ++k) {
      CHECK(one.weights(0, k) == both.weights(b, k));
      CHECK(one.means(0, k) == both.means(b, k));
      CHECK(one.sigmas(0, k) == both.sigmas(b, k));
    }
  }
}

TEST_CASE("log-density of a standard normal component at its mode") {
  MixtureParams p = single_batch({1.0}, {0.0}, {1.0});
  Tensor lp = mdn_log_prob(p, one_point(0.0), 1);
  CHECK(lp[0] == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-13));
  CHECK(lp[0] == doctest::Approx(-0.91894).epsilon(1e-4));
}

TEST_CASE("mixture of identical components equals the single component") {
  MixtureParams dup = single_batch({0.25, 0.75}, {1.2, 1.2}, {0.6, 0.6});
  MixtureParams one = single_batch({1.0}, {1.2}, {0.6});
  for (double y : {-1.0, 0.3, 1.2, 4.0}) {
    CHECK(mdn_log_prob(dup, one_point(y), 1)[0] ==
          doctest::Approx(mdn_log_prob(one, one_point(y), 1)[0]).epsilon(1e-14));
  }
}

TEST_CASE("two-component log-density matches direct summation") {
  // independent oracle: direct density arithmetic, no logsumexp
  MixtureParams p = single_batch({0.3, 0.7}, {-1.0, 2.0}, {0.5, 1.5});
  const double y = 0.4;
  const double direct =
      std::log(0.3 * normal_pdf(y, -1.0, 0.5) + 0.7 * normal_pdf(y, 2.0, 1.5));
  CHECK(mdn_log_prob(p, one_point(y), 1)[0] == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("categorical draws resolve boundary ties toward the lower index") {
  const std::vector<double> cum = {0.5, 0.75, 1.0};
  CHECK(Rng::categorical_index(cum, 0.2) == 0);
  CHECK(Rng::categorical_index(cum, 0.5) == 0);   // exact boundary
  CHECK(Rng::categorical_index(cum, 0.75) == 1);  // exact boundary
  CHECK(Rng::categorical_index(cum, 0.9) == 2);
  CHECK(Rng::categorical_index(cum, 1.0) == 2);
  // float residue above the last cumulative value still lands in range
  CHECK(Rng::categorical_index({cum.data(), 2}, 0.99) == 1);
}

TEST_CASE("degenerate weights draw only the live component") {
  MixtureParams p = single_batch({1.0, 0.0}, {5.0, -5.0}, {0.01, 0.01});
  Rng rng(11);
  MdnSamples s = mdn_sample(p, 200, rng);
  for (int m = 0; m < 200; ++m) CHECK(s.y(m, 0) > 4.0);
}

TEST_CASE("sample mean obeys the CLT bound") {
  MixtureParams p = single_batch({1.0}, {5.0}, {0.1});
  Rng rng(13);
  const int M = 100000;
  MdnSamples s = mdn_sample(p, M, rng);
  double mean = 0.0;
  for (int m = 0; m < M; ++m) mean += s.y(m, 0);
  mean /= M;
  CHECK(std::abs(mean - 5.0) < 5.0 * 0.1 / std::sqrt(static_cast<double>(M)));
}

TEST_CASE("component frequencies pass a chi-square test against the weights") {
  MixtureParams p = single_batch({0.2, 0.5, 0.3}, {-10.0, 0.0, 10.0}, {0.5, 0.5, 0.5});
  Rng rng(17);
  const int M = 100000;
  MdnSamples s = mdn_sample(p, M, rng);
  int counts[3] = {0, 0, 0};
  for (int m = 0; m < M; ++m) {
    const double y = s.y(m, 0);
    counts[y < -5.0 ? 0 : (y < 5.0 ? 1 : 2)]++;
  }
  double chi2 = 0.0;
  const double expect[3] = {0.2 * M, 0.5 * M, 0.3 * M};
  for (int k = 0; k < 3; ++k) {
    const double d = counts[k] - expect[k];
    chi2 += d * d / expect[k];
  }
  // df = 2, p > 0.001 <=> chi2 below the 0.999 quantile
  CHECK(chi2 < 13.8155);
}

TEST_CASE("density normalizes to 1 by quadrature for random parameters") {
  Rng rng(23);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor logits = Tensor::matrix(1, 4);
    Tensor means = Tensor::matrix(1, 4);
    Tensor logs2 = Tensor::matrix(1, 4);
    for (int k = 0; k < 4; ++k) {
      logits[k] = rng.uniform(-1.5, 1.5);
      means[k] = rng.uniform(-2.0, 2.0);
      logs2[k] = rng.uniform(-1.5, 1.0);
    }
    MixtureParams p = mixture_params_from_raw(logits, means, logs2);
    const int n = 8000;
    const double lo = -14.0, hi = 14.0, h = (hi - lo) / n;
    double integral = 0.0;
    Tensor pts = Tensor::matrix(n, 1);
    for (int g = 0; g < n; ++g) pts[g] = lo + (g + 0.5) * h;
    Tensor lp = mdn_log_prob(p, pts, n);
    for (int g = 0; g < n; ++g) {
      const double dens = std::exp(lp(0, g));
      CHECK(dens >= 0.0);
      CHECK(std::isfinite(dens));
      integral += dens * h;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("sampling is reproducible given the seed") {
  MixtureParams p = single_batch({0.4, 0.6}, {-1.0, 2.0}, {0.3, 0.8});
  Rng a(31), b(31), c(32);
  MdnSamples sa = mdn_sample(p, 64, a);
  MdnSamples sb = mdn_sample(p, 64, b);
  MdnSamples sc = mdn_sample(p, 64, c);
  bool all_equal = true, any_diff = false;
  for (int m = 0; m < 64; ++m) {
    all_equal = all_equal && sa.y(m, 0) == sb.y(m, 0);
    any_diff = any_diff || sa.y(m, 0) != sc.y(m, 0);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("sampled log q agrees with the density evaluated at the samples") {
  MixtureParams p = single_batch({0.5, 0.5}, {0.0, 3.0}, {1.0, 0.5});
  Rng rng(41);
  MdnSamples s = mdn_sample(p, 32, rng);
  Tensor lp = mdn_log_prob(p, s.y, 32);
  for (int m = 0; m < 32; ++m) CHECK(s.log_q(0, m) == lp(0, m));
}

TEST_CASE("full mixture network produces valid parameters for any input") {
  MdnNet net(MdnNetConfig::standard(1, 10, 10, 4, 1, Activation::kRelu, 3));
  Tensor x = Tensor::matrix(3, 1);
  x[0] = -2.7;
  x[1] = 0.0;
  x[2] = 3.3;
  MixtureParams p = mdn_params(net, x);
  p.validate();
  CHECK(p.batch() == 3);
}
