#include "ebmprop/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ebmprop/losses.hpp"
#include "ebmprop/version.hpp"

namespace ebmprop {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

double GaussianMixture1D::log_pdf(double y) const {
  double amax = -1e308;
  std::vector<double> comp(weights.size());
  for (size_t k = 0; k < weights.size(); ++k) {
    const double z = (y - means[k]) / sigmas[k];
    comp[k] = std::log(weights[k]) - 0.5 * kLogTwoPi - std::log(sigmas[k]) - 0.5 * z * z;
    amax = std::max(amax, comp[k]);
  }
  double s = 0.0;
  for (double c : comp) s += std::exp(c - amax);
  return amax + std::log(s);
}

double GaussianMixture1D::pdf(double y) const { return std::exp(log_pdf(y)); }

double GaussianMixture1D::sample(Rng& rng) const {
  std::vector<double> cum(weights.size());
  double acc = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    cum[k] = acc;
  }
  const int k = rng.categorical_from_cumulative(cum);
  return rng.normal(means[static_cast<size_t>(k)], sigmas[static_cast<size_t>(k)]);
}

double GaussianMixture1D::mean() const {
  double m = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
  return m;
}

double GaussianMixture1D::variance() const {
  const double m = mean();
  double v = 0.0;
  for (size_t k = 0; k < weights.size(); ++k)
    v += weights[k] * (sigmas[k] * sigmas[k] + (means[k] - m) * (means[k] - m));
  return v;
}

double GroundTruthDensity::sample_x(Rng& rng) const {
  return rng.uniform(x_min(), x_max());
}

double GroundTruthDensity::sample_y(double x, Rng& rng) const {
  return conditional(x).sample(rng);
}

std::string BimodalSplitDensity::params_desc() const {
  return "x~U[-3,3];x<0:N(sin(2x),0.15^2);x>=0:0.5N(0.8x,0.1^2)+0.5N(-0.8x,0.3^2)";
}

GaussianMixture1D BimodalSplitDensity::conditional(double x) const {
  if (x < 0.0) return {{1.0}, {std::sin(2.0 * x)}, {0.15}};
  return {{0.5, 0.5}, {0.8 * x, -0.8 * x}, {0.1, 0.3}};
}

std::string HeavyMultimodalDensity::params_desc() const {
  return "x~U[-4,4];1/3N(4sin(x),0.4^2)+1/3N(-x,1)+1/3[0.4N(0,0.4^2)+0.4N(0,1.2^2)+0.2N(0,3^2)]";
}

GaussianMixture1D HeavyMultimodalDensity::conditional(double x) const {
  const double third = 1.0 / 3.0;
  return {{third, third, third * 0.4, third * 0.4, third * 0.2},
          {4.0 * std::sin(x), -x, 0.0, 0.0, 0.0},
          {0.4, 1.0, 0.4, 1.2, 3.0}};
}

std::unique_ptr<GroundTruthDensity> make_ground_truth(const std::string& id) {
  if (id == "bimodal-split") return std::make_unique<BimodalSplitDensity>();
  if (id == "heavy-multimodal") return std::make_unique<HeavyMultimodalDensity>();
  throw std::invalid_argument("unknown generator: " + id);
}

std::vector<std::string> known_generators() {
  return {"bimodal-split", "heavy-multimodal"};
}

Tensor Dataset::x_tensor() const {
  Tensor t = Tensor::matrix(size(), 1);
  for (int i = 0; i < size(); ++i) t[i] = x[static_cast<size_t>(i)];
  return t;
}

Tensor Dataset::y_tensor() const {
  Tensor t = Tensor::matrix(size(), 1);
  for (int i = 0; i < size(); ++i) t[i] = y[static_cast<size_t>(i)];
  return t;
}

Dataset gen_dataset(const std::string& generator_id, int n, uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("gen_dataset: n must be positive");
  auto gt = make_ground_truth(generator_id);
  Dataset data;
  data.generator = generator_id;
  data.params_desc = gt->params_desc();
  data.seed = seed;
  data.x.reserve(static_cast<size_t>(n));
  data.y.reserve(static_cast<size_t>(n));
  Rng rng(derive_seed(seed, 0xda7a));
  for (int i = 0; i < n; ++i) {
    const double xi = gt->sample_x(rng);
    data.x.push_back(xi);
    data.y.push_back(gt->sample_y(xi, rng));
  }
  return data;
}

void save_dataset(const std::string& path, const Dataset& data,
                  const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << "# ebmprop-dataset v1 generator=" << data.generator << " seed=" << data.seed
      << " n=" << data.size() << " version=" << kVersion
      << " config_hash=" << config_hash << " params=" << data.params_desc << "\n";
  for (int i = 0; i < data.size(); ++i)
    out << fmt_double(data.x[static_cast<size_t>(i)]) << ' '
        << fmt_double(data.y[static_cast<size_t>(i)]) << '\n';
  if (!out) throw std::runtime_error("failed writing dataset file: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::string header;
  std::getline(in, header);
  if (header.rfind("# ebmprop-dataset v1", 0) != 0)
    throw std::runtime_error("not an ebmprop dataset file: " + path);
  Dataset data;
  std::istringstream hs(header);
  std::string tok;
  while (hs >> tok) {
    if (tok.rfind("generator=", 0) == 0) data.generator = tok.substr(10);
    else if (tok.rfind("seed=", 0) == 0) data.seed = std::stoull(tok.substr(5));
    else if (tok.rfind("params=", 0) == 0) data.params_desc = tok.substr(7);
  }
  double xv = 0.0, yv = 0.0;
  while (in >> xv >> yv) {
    data.x.push_back(xv);
    data.y.push_back(yv);
  }
  return data;
}

void EvalGrid::validate() const {
  if (n_points < 2) throw std::invalid_argument("EvalGrid: n_points must be >= 2");
  if (!(y_max > y_min)) throw std::invalid_argument("EvalGrid: y_max must exceed y_min");
}

std::vector<double> EvalGrid::points() const {
  validate();
  std::vector<double> pts(static_cast<size_t>(n_points));
  for (int i = 0; i < n_points; ++i) pts[static_cast<size_t>(i)] = point(i);
  return pts;
}

EvalGrid EvalGrid::parse(const std::string& flag) {
  const auto c1 = flag.find(':');
  const auto c2 = flag.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw std::invalid_argument("grid flag must be \"min:max:n\", got \"" + flag + "\"");
  EvalGrid g;
  try {
    g.y_min = std::stod(flag.substr(0, c1));
    g.y_max = std::stod(flag.substr(c1 + 1, c2 - c1 - 1));
    g.n_points = std::stoi(flag.substr(c2 + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("grid flag must be \"min:max:n\", got \"" + flag + "\"");
  }
  g.validate();
  return g;
}

std::string EvalGrid::str() const {
  std::ostringstream os;
  os << y_min << ':' << y_max << ':' << n_points;
  return os.str();
}

std::vector<double> uniform_midpoints(double lo, double hi, int n) {
  EvalGrid g{lo, hi, n};
  return g.points();
}

double eval_nll_grid(const EnergyRowFn& energy, const Dataset& data,
                     const EvalGrid& grid, int* clamped_count) {
  grid.validate();
  if (data.size() == 0) throw std::invalid_argument("eval_nll_grid: empty dataset");
  const std::vector<double> pts = grid.points();
  const double log_step = std::log(grid.step());
  int clamped = 0;
  double nll_sum = 0.0;
  std::vector<double> ys(pts.size() + 1);
  std::copy(pts.begin(), pts.end(), ys.begin());
  for (int i = 0; i < data.size(); ++i) {
    double target = data.y[static_cast<size_t>(i)];
    if (target < grid.y_min || target > grid.y_max) {
      ++clamped;
      target = std::clamp(target, grid.y_min, grid.y_max);
    }
    ys.back() = target;
    const std::vector<double> f = energy(data.x[static_cast<size_t>(i)], ys);
    double mx = -1e308;
    for (size_t g = 0; g < pts.size(); ++g) mx = std::max(mx, f[g]);
    double s = 0.0;
    for (size_t g = 0; g < pts.size(); ++g) s += std::exp(f[g] - mx);
    const double log_z = mx + std::log(s) + log_step;
    nll_sum += log_z - f.back();
  }
  if (clamped_count) *clamped_count = clamped;
  return nll_sum / data.size();
}

double eval_kl_ground_truth(const EnergyRowFn& energy, const GroundTruthDensity& gt,
                            const std::vector<double>& x_grid, const EvalGrid& y_grid) {
  y_grid.validate();
  if (x_grid.empty()) throw std::invalid_argument("eval_kl_ground_truth: empty x grid");
  const std::vector<double> pts = y_grid.points();
  double kl_sum = 0.0;
  std::vector<double> p(pts.size());
  for (double x : x_grid) {
    const GaussianMixture1D cond = gt.conditional(x);
    double psum = 0.0;
    for (size_t g = 0; g < pts.size(); ++g) {
      p[g] = cond.pdf(pts[g]);
      psum += p[g];
    }
    const std::vector<double> f = energy(x, pts);
    double mx = -1e308;
    for (size_t g = 0; g < pts.size(); ++g) mx = std::max(mx, f[g]);
    double fsum = 0.0;
    for (size_t g = 0; g < pts.size(); ++g) fsum += std::exp(f[g] - mx);
    const double log_fsum = mx + std::log(fsum);
    // both densities normalized on the same grid; discrete KL is then >= 0
    double kl = 0.0;
    for (size_t g = 0; g < pts.size(); ++g) {
      const double pg = p[g] / psum;
      if (pg <= 0.0) continue;
      const double log_qg = f[g] - log_fsum;
      kl += pg * (std::log(pg) - log_qg);
    }
    if (kl < -1e-8)
      throw std::runtime_error("eval_kl_ground_truth: negative KL beyond tolerance");
    kl_sum += std::max(kl, 0.0);
  }
  return kl_sum / static_cast<double>(x_grid.size());
}

double KlGradOracleReport::max_rel_err_noise_adjusted(double tol) const {
  double omax = 0.0;
  for (double o : oracle) omax = std::max(omax, std::abs(o));
  double worst = 0.0;
  for (size_t j = 0; j < oracle.size(); ++j) {
    const double denom =
        std::max({std::abs(oracle[j]), 3.0 * std_err[j] / tol, 0.02 * omax});
    worst = std::max(worst, std::abs(estimator[j] - oracle[j]) / denom);
  }
  return worst;
}

void MixtureProposal1D::validate() const {
  if (K < 1) throw std::invalid_argument("MixtureProposal1D: K must be >= 1");
  if (phi.size() != static_cast<size_t>(3 * K))
    throw std::invalid_argument("MixtureProposal1D: phi must have 3K entries");
}

GaussianMixture1D MixtureProposal1D::mixture(double sigma_floor) const {
  validate();
  GaussianMixture1D q;
  q.weights.resize(static_cast<size_t>(K));
  q.means.assign(phi.begin() + K, phi.begin() + 2 * K);
  q.sigmas.resize(static_cast<size_t>(K));
  double mx = phi[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, phi[static_cast<size_t>(k)]);
  double s = 0.0;
  for (int k = 0; k < K; ++k) {
    q.weights[static_cast<size_t>(k)] = std::exp(phi[static_cast<size_t>(k)] - mx);
    s += q.weights[static_cast<size_t>(k)];
  }
  for (int k = 0; k < K; ++k) q.weights[static_cast<size_t>(k)] /= s;
  for (int k = 0; k < K; ++k)
    q.sigmas[static_cast<size_t>(k)] =
        std::max(std::exp(0.5 * phi[static_cast<size_t>(2 * K + k)]), sigma_floor);
  return q;
}

MixtureParams MixtureProposal1D::batch_params(double sigma_floor) const {
  validate();
  Tensor logits = Tensor::matrix(1, K);
  Tensor means = Tensor::matrix(1, K);
  Tensor logs2 = Tensor::matrix(1, K);
  for (int k = 0; k < K; ++k) {
    logits[k] = phi[static_cast<size_t>(k)];
    means[k] = phi[static_cast<size_t>(K + k)];
    logs2[k] = phi[static_cast<size_t>(2 * K + k)];
  }
  return mixture_params_from_raw(logits, means, logs2, sigma_floor);
}

double quadrature_kl_energy_vs_mixture(const AnalyticEnergy1D& ebm,
                                       const GaussianMixture1D& q, int quad_points) {
  const std::vector<double> pts = uniform_midpoints(ebm.y_min, ebm.y_max, quad_points);
  const double h = (ebm.y_max - ebm.y_min) / quad_points;
  double mx = -1e308;
  std::vector<double> fv(pts.size());
  for (size_t g = 0; g < pts.size(); ++g) {
    fv[g] = ebm.f(pts[g]);
    mx = std::max(mx, fv[g]);
  }
  double z = 0.0;
  for (size_t g = 0; g < pts.size(); ++g) z += std::exp(fv[g] - mx);
  const double log_z = mx + std::log(z) + std::log(h);
  double kl = 0.0;
  for (size_t g = 0; g < pts.size(); ++g) {
    const double log_p = fv[g] - log_z;
    kl += std::exp(log_p) * (log_p - q.log_pdf(pts[g])) * h;
  }
  return kl;
}

KlGradOracleReport kl_grad_oracle(const AnalyticEnergy1D& ebm,
                                  const MixtureProposal1D& proposal, int M, int R,
                                  uint64_t seed, int quad_points, double fd_step,
                                  double rel_floor_frac) {
  proposal.validate();
  if (M < 1 || R < 1) throw std::invalid_argument("kl_grad_oracle: M and R must be >= 1");
  {
    // mass outside the quadrature support must be negligible
    const GaussianMixture1D q0 = proposal.mixture();
    double outside = 0.0;
    for (size_t k = 0; k < q0.weights.size(); ++k) {
      const double zl = (ebm.y_min - q0.means[k]) / (q0.sigmas[k] * std::sqrt(2.0));
      const double zr = (ebm.y_max - q0.means[k]) / (q0.sigmas[k] * std::sqrt(2.0));
      outside += q0.weights[k] * 0.5 * (std::erfc(zr) + std::erfc(-zl));
    }
    if (outside > 1e-6)
      throw std::invalid_argument(
          "kl_grad_oracle: quadrature support too small for the proposal");
  }

  const int P = 3 * proposal.K;
  KlGradOracleReport report;
  report.M = M;
  report.R = R;
  report.oracle.resize(static_cast<size_t>(P));
  report.estimator.assign(static_cast<size_t>(P), 0.0);
  report.std_err.assign(static_cast<size_t>(P), 0.0);
  report.rel_err.resize(static_cast<size_t>(P));
  std::vector<double> sq_accum(static_cast<size_t>(P), 0.0);

  // oracle: central differences of the quadrature KL in each raw coordinate
  for (int j = 0; j < P; ++j) {
    MixtureProposal1D hi = proposal, lo = proposal;
    hi.phi[static_cast<size_t>(j)] += fd_step;
    lo.phi[static_cast<size_t>(j)] -= fd_step;
    const double kl_hi = quadrature_kl_energy_vs_mixture(ebm, hi.mixture(), quad_points);
    const double kl_lo = quadrature_kl_energy_vs_mixture(ebm, lo.mixture(), quad_points);
    report.oracle[static_cast<size_t>(j)] = (kl_hi - kl_lo) / (2.0 * fd_step);
  }

  // estimator: expectation over R independent sample draws of the gradient of
  // the proposal objective, assembled exactly as in training
  Rng rng(derive_seed(seed, 0x0c1e));
  const MixtureParams params = proposal.batch_params();
  for (int r = 0; r < R; ++r) {
    MdnSamples draws = mdn_sample(params, M, rng);
    Tape tape;
    Tensor logits = Tensor::matrix(1, proposal.K);
    Tensor means = Tensor::matrix(1, proposal.K);
    Tensor logs2 = Tensor::matrix(1, proposal.K);
    for (int k = 0; k < proposal.K; ++k) {
      logits[k] = proposal.phi[static_cast<size_t>(k)];
      means[k] = proposal.phi[static_cast<size_t>(proposal.K + k)];
      logs2[k] = proposal.phi[static_cast<size_t>(2 * proposal.K + k)];
    }
    Var logits_v = tape.leaf(logits, true);
    Var means_v = tape.leaf(means, true);
    Var logs2_v = tape.leaf(logs2, true);
    Var y_v = tape.constant(draws.y);
    Var logq = tape.clamp_min(
        tape.mixture_logpdf(logits_v, means_v, logs2_v, y_v, M, kSigmaFloor),
        kLogQClamp);
    Tensor f_vals = Tensor::matrix(1, M);
    for (int m = 0; m < M; ++m) f_vals[m] = ebm.f(draws.y(m, 0));

    LossBatch batch;
    batch.batch = 1;
    batch.samples = M;
    batch.f_samples = tape.constant(f_vals);
    batch.logq_samples = logq;
    batch.logq_samples_det = tape.stop_gradient(logq);
    Var loss = loss_kl(tape, batch);
    tape.backward(loss);

    const Tensor& gl = logits_v.grad();
    const Tensor& gm = means_v.grad();
    const Tensor& gs = logs2_v.grad();
    for (int k = 0; k < proposal.K; ++k) {
      const double g[3] = {gl[k], gm[k], gs[k]};
      for (int part = 0; part < 3; ++part) {
        const size_t j = static_cast<size_t>(part * proposal.K + k);
        report.estimator[j] += g[part];
        sq_accum[j] += g[part] * g[part];
      }
    }
  }
  for (int j = 0; j < P; ++j) {
    const size_t js = static_cast<size_t>(j);
    report.estimator[js] /= R;
    const double var =
        std::max(0.0, sq_accum[js] / R - report.estimator[js] * report.estimator[js]);
    report.std_err[js] = std::sqrt(var / R);
  }

  double omax = 0.0;
  for (double o : report.oracle) omax = std::max(omax, std::abs(o));
  const double floor = rel_floor_frac * omax;
  report.max_rel_err = 0.0;
  for (int j = 0; j < P; ++j) {
    const double denom = std::max(std::abs(report.oracle[static_cast<size_t>(j)]), floor);
    report.rel_err[static_cast<size_t>(j)] =
        std::abs(report.estimator[static_cast<size_t>(j)] -
                 report.oracle[static_cast<size_t>(j)]) /
        denom;
    report.max_rel_err = std::max(report.max_rel_err, report.rel_err[static_cast<size_t>(j)]);
  }
  return report;
}

}  // namespace ebmprop
