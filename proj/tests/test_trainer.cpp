#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ebmprop/checkpoint.hpp"
#include "ebmprop/table1.hpp"
#include "ebmprop/trainer.hpp"

using namespace ebmprop;

namespace {

TrainConfig tiny_config(uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.samples_m = 24;
  cfg.seed = seed;
  return cfg;
}

bool all_zero(const Tensor& t) {
  for (double v : t.span())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("defaults follow the training protocol") {
  TrainConfig cfg;
  CHECK(cfg.epochs == 75);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.samples_m == 1024);
  CHECK(cfg.objective == Objective::kNceLearnedProposal);
  CHECK(cfg.mode == TrainMode::kJointHead);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("sigma wiring: second noise component is 8 sigma1 when unset") {
  TrainConfig cfg;
  cfg.sigma1 = 0.1;
  NoiseBaseline noise = cfg.noise_baseline();
  REQUIRE(noise.sigmas.size() == 2);
  CHECK(noise.sigmas[0] == 0.1);
  CHECK(noise.sigmas[1] == doctest::Approx(0.8));
  cfg.noise_sigmas = {0.3, 0.3};
  CHECK(cfg.noise_baseline().sigmas == std::vector<double>{0.3, 0.3});
}

TEST_CASE("fixed seeds reproduce the loss trajectory bitwise") {
  Dataset data = gen_dataset("bimodal-split", 96, 5);
  TrainedModel a = train_joint(tiny_config(42), data);
  TrainedModel b = train_joint(tiny_config(42), data);
  TrainedModel c = train_joint(tiny_config(43), data);
  REQUIRE(!a.record.failed);
  CHECK(a.record.epoch_loss == b.record.epoch_loss);
  CHECK(a.record.epoch_loss != c.record.epoch_loss);
  CHECK(flatten_params(a.ebm->params()) == flatten_params(b.ebm->params()));

  TrainConfig dcfg = tiny_config(42);
  dcfg.mode = TrainMode::kDistillSeparate;
  TrainedModel d1 = train_mdn_distill(dcfg, data);
  TrainedModel d2 = train_mdn_distill(dcfg, data);
  CHECK(d1.record.epoch_loss == d2.record.epoch_loss);
}

TEST_CASE("gradient routing: each objective touches only its own parameters") {
  Dataset data = gen_dataset("bimodal-split", 32, 6);
  EnergyNet ebm(EnergyNetConfig::standard(1, 1, 10, 10, Activation::kRelu, 71));
  MdnHead head({10, 10, 4, 1, Activation::kRelu, 72, kSigmaFloor});
  Tensor x = data.x_tensor(), y = data.y_tensor();

  auto grads_for = [&](int which) {
    Tape tape;
    Rng rng(73);
    JointParts parts = assemble_joint_batch(tape, ebm, head, x, y, 16, rng);
    Var loss = which == 0   ? loss_nce(tape, parts.batch)
               : which == 1 ? loss_kl(tape, parts.batch)
                            : tape.add(loss_nce(tape, parts.batch),
                                       loss_kl(tape, parts.batch));
    tape.backward(loss);
    std::vector<Tensor> grads = ebm.collect_grads(parts.energy_bound);
    for (auto& g : head.collect_grads(parts.head_bound)) grads.push_back(std::move(g));
    return grads;
  };

  const auto nce_only = grads_for(0);
  const auto kl_only = grads_for(1);
  const auto combined = grads_for(2);
  const size_t n_ebm = ebm.params().size();

  for (size_t i = 0; i < nce_only.size(); ++i) {
    if (i < n_ebm) {
      // energy parameters: proposal objective contributes exactly nothing
      CHECK(all_zero(kl_only[i]));
    } else {
      // proposal head parameters: classification objective contributes nothing
      CHECK(all_zero(nce_only[i]));
    }
    // the combined scalar reproduces the single-objective gradients bitwise
    for (int64_t j = 0; j < combined[i].numel(); ++j)
      CHECK(combined[i][j] == nce_only[i][j] + kl_only[i][j]);
  }
}

TEST_CASE("joint training works with the importance-sampled objective as well") {
  Dataset data = gen_dataset("bimodal-split", 64, 7);
  TrainConfig cfg = tiny_config(3);
  cfg.objective = Objective::kIsNll;
  TrainedModel m = train_joint(cfg, data);
  CHECK(!m.record.failed);
  CHECK(m.record.epoch_loss.size() == 2);
}

TEST_CASE("mode and objective dispatch is validated") {
  Dataset data = gen_dataset("bimodal-split", 32, 8);
  TrainConfig cfg = tiny_config(1);
  cfg.objective = Objective::kNceFixedNoise;
  CHECK_THROWS_AS(train_joint(cfg, data), std::invalid_argument);
  cfg.objective = Objective::kNceLearnedProposal;
  CHECK_THROWS_AS(train_fixed_noise(cfg, data), std::invalid_argument);

  cfg.objective = Objective::kNceFixedNoise;
  TrainedModel m = train_run(cfg, data);
  CHECK(m.ebm.has_value());
  CHECK(!m.proposal_head.has_value());
}

TEST_CASE("fixed-noise training beats an untrained network on held-out likelihood") {
  Dataset train = gen_dataset("heavy-multimodal", 512, 9);
  Dataset test = gen_dataset("heavy-multimodal", 256, 10);
  TrainConfig cfg;
  // early training sharpens the density near the data before cleaning up the
  // far field; the crossover on this problem sits near a dozen epochs
  cfg.epochs = 25;
  cfg.batch_size = 32;
  cfg.samples_m = 128;
  cfg.seed = 4;
  cfg.objective = Objective::kNceFixedNoise;
  TrainedModel trained = train_fixed_noise(cfg, train);
  REQUIRE(!trained.record.failed);

  EnergyNet untrained(EnergyNetConfig::standard(1, 1, 10, 10, Activation::kRelu, 999));
  const EvalGrid grid{-12.5, 12.5, 2048};
  const double nll_trained = eval_nll_grid(energy_row_fn(*trained.ebm), test, grid);
  const double nll_untrained = eval_nll_grid(energy_row_fn(untrained), test, grid);
  CHECK(nll_trained < nll_untrained);
}

TEST_CASE("distillation with zero coefficient reduces to plain likelihood training") {
  Dataset data = gen_dataset("bimodal-split", 64, 11);
  TrainConfig cfg = tiny_config(5);
  cfg.mode = TrainMode::kDistillSeparate;
  cfg.distill_kl_coeff = 0.0;
  cfg.distill_nll_coeff = 1.0;
  TrainedModel baseline = train_mdn_distill(cfg, data);
  REQUIRE(!baseline.record.failed);
  CHECK(!baseline.ebm.has_value());  // no energy model in the loop
  REQUIRE(baseline.proposal_net.has_value());

  // reference: plain maximum-likelihood loop written out longhand
  MdnNet ref(MdnNetConfig::standard(1, cfg.model.feature_dim, cfg.model.hidden,
                                    cfg.mixture_k, 1, cfg.model.activation,
                                    derive_seed(cfg.seed, 103)));
  Adam adam({cfg.lr}, ref.params());
  const int n = data.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, 0xe60c + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (int lo = 0; lo < n; lo += cfg.batch_size) {
      const int hi = std::min(n, lo + cfg.batch_size);
      Tensor xb = Tensor::matrix(hi - lo, 1), yb = Tensor::matrix(hi - lo, 1);
      for (int i = lo; i < hi; ++i) {
        xb[i - lo] = data.x[static_cast<size_t>(order[static_cast<size_t>(i)])];
        yb[i - lo] = data.y[static_cast<size_t>(order[static_cast<size_t>(i)])];
      }
      Tape tape;
      MdnNet::Bound mb = ref.bind(tape);
      MdnHead::RawVars raw = ref.forward(tape, mb, xb);
      Var logq = tape.clamp_min(
          tape.reshape(tape.mixture_logpdf(raw.logits, raw.means, raw.log_sigma2,
                                           tape.constant(yb), 1, kSigmaFloor),
                       hi - lo, 1, 1),
          kLogQClamp);
      Var loss = tape.scale_add(tape.mean(logq), -1.0);
      tape.backward(loss);
      adam.step(ref.collect_grads(mb));
    }
  }
  CHECK(flatten_params(baseline.proposal_net->params()) == flatten_params(ref.params()));
}

TEST_CASE("distillation trains both networks and keeps parameter counts fixed") {
  Dataset data = gen_dataset("bimodal-split", 64, 12);
  TrainConfig cfg = tiny_config(6);
  cfg.mode = TrainMode::kDistillSeparate;
  TrainedModel before = train_mdn_distill(tiny_config(6), data);

  TrainedModel m = train_mdn_distill(cfg, data);
  REQUIRE(!m.record.failed);
  REQUIRE(m.ebm.has_value());
  REQUIRE(m.proposal_net.has_value());
  CHECK(flatten_params(m.ebm->params()).size() ==
        flatten_params(before.ebm->params()).size());
  // the proposal net has its own feature extractor (trunk + three heads)
  CHECK(m.proposal_net->params().size() ==
        MdnNet(MdnNetConfig::standard(1, 10, 10, 4, 1, Activation::kRelu, 0))
            .params()
            .size());
}

TEST_CASE("non-finite targets mark the run failed with the epoch index") {
  Dataset data = gen_dataset("bimodal-split", 32, 13);
  data.y[5] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg = tiny_config(7);
  cfg.model.activation = Activation::kTanh;
  TrainedModel m = train_joint(cfg, data);
  CHECK(m.record.failed);
  CHECK(m.record.failed_epoch == 0);
  CHECK(!m.record.error.empty());
}

TEST_CASE("training loss decreases over the first epochs for most seeds") {
  Dataset data = gen_dataset("bimodal-split", 384, 21);
  int decreased = 0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    cfg.samples_m = 64;
    cfg.seed = 100 + static_cast<uint64_t>(s);
    TrainedModel m = train_joint(cfg, data);
    REQUIRE(!m.record.failed);
    if (m.record.epoch_loss.back() < m.record.epoch_loss.front()) ++decreased;
  }
  CHECK(decreased >= 9);
}

TEST_CASE("table protocol defaults: 20 runs, best 5, smoke = 3 runs x 5 epochs") {
  Table1Config cfg;
  CHECK(cfg.runs == 20);
  CHECK(cfg.select_best == 5);
  CHECK(cfg.base.epochs == 75);
  CHECK(cfg.base.batch_size == 32);
  CHECK(cfg.base.samples_m == 1024);
  CHECK(cfg.base.model.activation == Activation::kTanh);
  CHECK(cfg.base.lr == 3e-3);
  cfg.apply_smoke();
  CHECK(cfg.runs == 3);
  CHECK(cfg.base.epochs == 5);
}

TEST_CASE("table settings match the benchmark axis") {
  const auto settings = table1_settings();
  REQUIRE(settings.size() == 8);
  CHECK(settings[0].sigma1 == 0.05);
  CHECK(settings[1].sigma1 == 0.1);
  CHECK(settings[2].sigma1 == 0.2);
  CHECK(settings[3].sigma1 == 0.4);
  CHECK(settings[4].sigma1 == 0.8);
  CHECK(settings[5].learned);
  CHECK(settings[5].K == 1);
  CHECK(settings[6].K == 4);
  CHECK(settings[7].K == 16);
  CHECK(table1_metric_for("bimodal-split") == "kl");
  CHECK(table1_metric_for("heavy-multimodal") == "nll");
}

TEST_CASE("metrics files carry the stamped header and one line per epoch") {
  RunRecord rec;
  rec.seed = 9;
  rec.epoch_loss = {3.5, 2.25};
  rec.final_metrics["kl"] = 0.125;
  const std::string path = "test_metrics_file.txt";
  save_metrics_file(path, rec, "abcd1234");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.find("ebmprop-metrics v1") != std::string::npos);
  CHECK(line.find("config_hash=abcd1234") != std::string::npos);
  CHECK(line.find("seed=9") != std::string::npos);
  std::getline(in, line);
  CHECK(line == "0 3.5");
  std::getline(in, line);
  CHECK(line == "1 2.25");
  std::getline(in, line);
  CHECK(line.find("final kl") != std::string::npos);
  std::remove(path.c_str());
}
