#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ebmprop/bench.hpp"

using namespace ebmprop;

namespace {

// test-local analytic ground truth wrapping a fixed mixture
class FixedMixtureDensity final : public GroundTruthDensity {
 public:
  explicit FixedMixtureDensity(GaussianMixture1D mix) : mix_(std::move(mix)) {}
  std::string id() const override { return "fixed"; }
  std::string params_desc() const override { return "fixed"; }
  GaussianMixture1D conditional(double) const override { return mix_; }
  double x_min() const override { return -1.0; }
  double x_max() const override { return 1.0; }
  double y_min() const override { return -9.0; }
  double y_max() const override { return 9.0; }

 private:
  GaussianMixture1D mix_;
};

EnergyRowFn gaussian_energy(double mu, double sigma) {
  return [mu, sigma](double, const std::vector<double>& ys) {
    std::vector<double> f(ys.size());
    for (size_t i = 0; i < ys.size(); ++i) {
      const double z = (ys[i] - mu) / sigma;
      f[i] = -0.5 * z * z;
    }
    return f;
  };
}

}  // namespace

TEST_CASE("datasets regenerate bitwise from the same seed") {
  Dataset a = gen_dataset("bimodal-split", 2000, 7);
  Dataset b = gen_dataset("bimodal-split", 2000, 7);
  Dataset c = gen_dataset("bimodal-split", 2000, 8);
  CHECK(a.size() == 2000);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.x != c.x);
  CHECK_THROWS_AS(gen_dataset("no-such-generator", 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_dataset("bimodal-split", 0, 1), std::invalid_argument);
}

TEST_CASE("ground-truth conditionals integrate to one for both generators") {
  for (const std::string& id : known_generators()) {
    auto gt = make_ground_truth(id);
    const EvalGrid grid{gt->y_min(), gt->y_max(), 4096};
    const std::vector<double> pts = grid.points();
    for (int i = 0; i < 50; ++i) {
      const double x = gt->x_min() + (i + 0.5) * (gt->x_max() - gt->x_min()) / 50;
      const GaussianMixture1D cond = gt->conditional(x);
      double integral = 0.0;
      for (double y : pts) integral += cond.pdf(y) * grid.step();
      CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_CASE("the first generator is multimodal over part of the input range") {
  auto gt = make_ground_truth("bimodal-split");
  const EvalGrid grid{gt->y_min(), gt->y_max(), 2048};
  const std::vector<double> pts = grid.points();
  int multimodal_count = 0;
  for (double x : uniform_midpoints(gt->x_min(), gt->x_max(), 64)) {
    const GaussianMixture1D cond = gt->conditional(x);
    int maxima = 0;
    double prev = cond.pdf(pts[0]), cur = cond.pdf(pts[1]);
    for (size_t g = 2; g < pts.size(); ++g) {
      const double next = cond.pdf(pts[g]);
      if (cur > prev && cur >= next && cur > 1e-4) ++maxima;
      prev = cur;
      cur = next;
    }
    if (maxima >= 2) ++multimodal_count;
  }
  CHECK(multimodal_count >= 16);
}

TEST_CASE("dataset files round-trip") {
  Dataset a = gen_dataset("heavy-multimodal", 123, 99);
  const std::string path = "test_dataset_roundtrip.txt";
  save_dataset(path, a, "cafe");
  Dataset b = load_dataset(path);
  CHECK(b.generator == a.generator);
  CHECK(b.seed == a.seed);
  CHECK(b.x == a.x);  // bitwise through %.17g
  CHECK(b.y == a.y);
  std::remove(path.c_str());
}

TEST_CASE("grid parsing follows the min:max:n contract") {
  EvalGrid g = EvalGrid::parse("-12.5:12.5:8192");
  CHECK(g.y_min == -12.5);
  CHECK(g.y_max == 12.5);
  CHECK(g.n_points == 8192);
  CHECK(g.step() == doctest::Approx(25.0 / 8192));
  // midpoint convention
  CHECK(g.point(0) == doctest::Approx(-12.5 + 0.5 * g.step()));
  CHECK_THROWS_AS(EvalGrid::parse("nonsense"), std::invalid_argument);
  CHECK_THROWS_AS(EvalGrid::parse("1:2"), std::invalid_argument);
  CHECK_THROWS_AS(EvalGrid::parse("2:1:100"), std::invalid_argument);
  CHECK_THROWS_AS(EvalGrid::parse("0:1:1"), std::invalid_argument);
}

TEST_CASE("flat energy gives ln(b - a) for every example") {
  Dataset data;
  data.generator = "manual";
  data.x = {0.0, 1.0, 2.0};
  data.y = {0.1, -0.2, 0.4};
  EnergyRowFn flat = [](double, const std::vector<double>& ys) {
    return std::vector<double>(ys.size(), 0.0);
  };
  const EvalGrid grid{-1.5, 2.5, 512};
  CHECK(eval_nll_grid(flat, data, grid) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("grid likelihood of an analytic Gaussian energy matches the closed form") {
  const double mu = 0.4, sigma = 1.1;
  Dataset data;
  data.generator = "manual";
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    data.x.push_back(0.0);
    data.y.push_back(rng.normal(mu, sigma));
  }
  const EvalGrid grid{-12.5, 12.5, 8192};
  const double nll = eval_nll_grid(gaussian_energy(mu, sigma), data, grid);
  double closed = 0.0;
  for (double y : data.y) {
    const double z = (y - mu) / sigma;
    closed += 0.5 * std::log(2.0 * std::numbers::pi) + std::log(sigma) + 0.5 * z * z;
  }
  closed /= data.size();
  CHECK(std::abs(nll - closed) < 1e-3);

  // doubling the grid resolution moves the estimate by less than 1e-4
  const double nll2 = eval_nll_grid(gaussian_energy(mu, sigma), data,
                                    EvalGrid{-12.5, 12.5, 16384});
  CHECK(std::abs(nll - nll2) < 1e-4);
}

TEST_CASE("targets outside the grid are clamped and counted") {
  Dataset data;
  data.generator = "manual";
  data.x = {0.0, 0.0};
  data.y = {0.0, 99.0};
  int clamped = -1;
  eval_nll_grid(gaussian_energy(0, 1), data, EvalGrid{-5, 5, 256}, &clamped);
  CHECK(clamped == 1);
}

TEST_CASE("KL to ground truth vanishes when the energy matches it") {
  GaussianMixture1D mix{{0.4, 0.6}, {-1.0, 1.5}, {0.5, 0.8}};
  FixedMixtureDensity gt(mix);
  EnergyRowFn matched = [mix](double, const std::vector<double>& ys) {
    std::vector<double> f(ys.size());
    for (size_t i = 0; i < ys.size(); ++i) f[i] = mix.log_pdf(ys[i]) + 3.7;
    return f;
  };
  const double kl = eval_kl_ground_truth(matched, gt, {-0.5, 0.0, 0.5},
                                         EvalGrid{-9, 9, 4096});
  CHECK(kl >= 0.0);
  CHECK(kl < 1e-6);
}

TEST_CASE("KL between unit Gaussians displaced by 0.5 is 0.125") {
  FixedMixtureDensity gt(GaussianMixture1D{{1.0}, {0.0}, {1.0}});
  const double kl = eval_kl_ground_truth(gaussian_energy(0.5, 1.0), gt, {0.0},
                                         EvalGrid{-9, 9, 4096});
  CHECK(std::abs(kl - 0.125) < 1e-3);
}

TEST_CASE("quadrature KL against a mixture matches the Gaussian closed form") {
  AnalyticEnergy1D ebm{[](double y) { return -0.5 * y * y; }, -10.0, 10.0};
  GaussianMixture1D q{{1.0}, {0.5}, {1.0}};
  // KL(N(0,1) || N(0.5,1)) = 0.125
  CHECK(std::abs(quadrature_kl_energy_vs_mixture(ebm, q, 4096) - 0.125) < 1e-4);
}

TEST_CASE("gradient oracle: matched proposal sits at the stationary point") {
  AnalyticEnergy1D ebm{[](double y) { return -0.5 * y * y; }, -10.0, 10.0};
  MixtureProposal1D prop{1, {0.0, 0.0, 0.0}};  // exactly the energy density
  KlGradOracleReport report = kl_grad_oracle(ebm, prop, 1024, 200, 5);
  for (double o : report.oracle) CHECK(std::abs(o) < 1e-6);
  for (double e : report.estimator) CHECK(std::abs(e) < 0.02);
}

TEST_CASE("gradient oracle: displaced Gaussian proposal within 5 percent") {
  AnalyticEnergy1D ebm{[](double y) { return -0.5 * y * y; }, -12.0, 12.0};
  MixtureProposal1D prop{1, {0.0, 0.5, 2.0 * std::log(1.2)}};
  KlGradOracleReport report = kl_grad_oracle(ebm, prop, 1024, 200, 7);
  CHECK(report.max_rel_err_noise_adjusted() < 0.05);
}

TEST_CASE("gradient oracle: two-component proposal within 5 percent") {
  AnalyticEnergy1D ebm{[](double y) { return -0.5 * y * y; }, -12.0, 12.0};
  MixtureProposal1D prop{2, {0.3, -0.2, -0.6, 0.8, 0.1, -0.4}};
  KlGradOracleReport report = kl_grad_oracle(ebm, prop, 1024, 200, 9);
  CHECK(report.max_rel_err_noise_adjusted() < 0.05);
  // coordinates well above the noise floor also meet the plain tolerance
  double omax = 0.0;
  for (double o : report.oracle) omax = std::max(omax, std::abs(o));
  for (size_t j = 0; j < report.oracle.size(); ++j)
    if (std::abs(report.oracle[j]) > 0.3 * omax)
      CHECK(report.rel_err[j] < 0.05);
}

TEST_CASE("gradient oracle error decreases with the sample count") {
  AnalyticEnergy1D ebm{[](double y) { return -0.5 * y * y; }, -12.0, 12.0};
  MixtureProposal1D prop{1, {0.0, 0.7, 0.3}};
  double err[3] = {0, 0, 0};
  const int Ms[3] = {64, 256, 1024};
  const int seeds = 8;
  for (int s = 0; s < seeds; ++s) {
    for (int i = 0; i < 3; ++i) {
      KlGradOracleReport r = kl_grad_oracle(ebm, prop, Ms[i], 50, 100 + s);
      err[i] += r.max_rel_err / seeds;
    }
  }
  CHECK(err[0] >= err[1]);
  CHECK(err[1] >= err[2]);
}

TEST_CASE("gradient oracle rejects too-small quadrature support") {
  AnalyticEnergy1D ebm{[](double y) { return -0.5 * y * y; }, -1.0, 1.0};
  MixtureProposal1D prop{1, {0.0, 0.0, 2.0}};  // sigma e, mass far outside [-1,1]
  CHECK_THROWS_AS(kl_grad_oracle(ebm, prop, 64, 4, 1), std::invalid_argument);
}

TEST_CASE("second generator keeps its mass inside the evaluation interval") {
  auto gt = make_ground_truth("heavy-multimodal");
  CHECK(gt->y_min() == -12.5);
  CHECK(gt->y_max() == 12.5);
  Rng rng(31);
  Dataset data = gen_dataset("heavy-multimodal", 5000, 11);
  for (double y : data.y) {
    CHECK(y > -12.5);
    CHECK(y < 12.5);
  }
}
