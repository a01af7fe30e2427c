#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebmprop/checkpoint.hpp"
#include "ebmprop/inference.hpp"
#include "ebmprop/runconfig.hpp"
#include "ebmprop/svg.hpp"
#include "ebmprop/table1.hpp"
#include "ebmprop/trainer.hpp"
#include "ebmprop/version.hpp"

namespace fs = std::filesystem;
using namespace ebmprop;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string flag_hash(const std::string& canonical) {
  return to_hex(fnv1a64(canonical));
}

std::vector<double> parse_csv_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list of numbers");
  return out;
}

// proposal parameters for one input under either checkpoint kind
MixtureParams proposal_params_at(const Checkpoint& ckpt, const EnergyNet& ebm,
                                 double x) {
  Tensor xt = Tensor::matrix(1, 1);
  xt[0] = x;
  if (ckpt.head_config) {
    MdnHead head = restore_mdn_head(ckpt);
    return mdn_params(head, energy_features(ebm, xt));
  }
  if (ckpt.mdn_config) {
    MdnNet net = restore_mdn_net(ckpt);
    return mdn_params(net, xt);
  }
  throw std::runtime_error(
      "checkpoint has no proposal distribution; prediction requires one");
}

struct GenDataArgs {
  std::string generator = "bimodal-split";
  int n = 2000;
  uint64_t seed = 1;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& args) {
  if (args.n <= 0) throw std::invalid_argument("n must be positive");
  const std::string out_path =
      args.out.empty() ? default_out_dir() + "/dataset.txt" : args.out;
  Dataset data = gen_dataset(args.generator, args.n, args.seed);
  const std::string hash = flag_hash("gen-data|" + args.generator + "|" +
                                     std::to_string(args.n) + "|" +
                                     std::to_string(args.seed));
  save_dataset(out_path, data, hash);
  std::cout << data.size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string mode;
  int64_t seed = -1;
  std::string out;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg =
      args.config.empty() ? parse_run_config_text("{}", "<defaults>")
                          : parse_run_config(args.config);
  if (!args.mode.empty()) cfg.train.mode = train_mode_from_name(args.mode);
  if (args.seed >= 0) cfg.train.seed = static_cast<uint64_t>(args.seed);
  if (!args.out.empty()) cfg.out_dir = args.out;
  const std::string hash = config_hash(cfg);
  fs::create_directories(cfg.out_dir);

  Dataset data = gen_dataset(cfg.generator, cfg.n_train, cfg.data_seed);
  TrainConfig train_cfg = cfg.to_train_config();
  TrainedModel model = train_run(train_cfg, data);

  const std::string ckpt_path = cfg.out_dir + "/checkpoint.json";
  const std::string metrics_path = cfg.out_dir + "/metrics.txt";
  Checkpoint ckpt = checkpoint_from(model, hash, train_cfg.seed,
                                    train_cfg.objective == Objective::kNceFixedNoise
                                        ? train_cfg.noise_baseline().sigmas
                                        : std::vector<double>{});
  model.record.checkpoint_path = ckpt_path;
  save_checkpoint(ckpt_path, ckpt);
  save_metrics_file(metrics_path, model.record, hash);

  if (model.record.failed) {
    std::cerr << "run failed: " << model.record.error << "\n";
    return 1;
  }
  std::cout << "checkpoint=" << ckpt_path << " metrics=" << metrics_path
            << " final_loss=" << fmt17(model.record.epoch_loss.back()) << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string metric = "nll";
  std::string grid;
  int kl_x_points = 128;
  int kl_y_points = 2048;
};

int cmd_eval(const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  EnergyNet net = restore_energy_net(ckpt);
  Dataset data = load_dataset(args.data);
  const EnergyRowFn row = energy_row_fn(net);

  if (args.metric == "nll") {
    EvalGrid grid = args.grid.empty()
                        ? EvalGrid{make_ground_truth(data.generator)->y_min(),
                                   make_ground_truth(data.generator)->y_max(), 8192}
                        : EvalGrid::parse(args.grid);
    int clamped = 0;
    const double nll = eval_nll_grid(row, data, grid, &clamped);
    if (clamped > 0)
      std::cerr << "warning: " << clamped
                << " targets outside the grid were clamped to its edge\n";
    std::cout << "metric=nll value=" << fmt17(nll) << " n=" << data.size()
              << " grid=" << grid.str() << " clamped=" << clamped << "\n";
    return 0;
  }
  if (args.metric == "kl") {
    auto gt = make_ground_truth(data.generator);
    const EvalGrid y_grid = args.grid.empty()
                                ? EvalGrid{gt->y_min(), gt->y_max(), args.kl_y_points}
                                : EvalGrid::parse(args.grid);
    const std::vector<double> x_grid =
        uniform_midpoints(gt->x_min(), gt->x_max(), args.kl_x_points);
    const double kl = eval_kl_ground_truth(row, *gt, x_grid, y_grid);
    std::cout << "metric=kl value=" << fmt17(kl) << " x_points=" << args.kl_x_points
              << " grid=" << y_grid.str() << "\n";
    return 0;
  }
  throw std::invalid_argument("unknown metric: " + args.metric + " (use nll or kl)");
}

struct PredictArgs {
  std::string checkpoint;
  std::string x_values;
  int m = 1024;
  int resample_n = 0;
  uint64_t seed = 0;
};

int cmd_predict(const PredictArgs& args) {
  if (args.m < 1) throw std::invalid_argument("m must be >= 1");
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  EnergyNet ebm = restore_energy_net(ckpt);
  const std::vector<double> xs = parse_csv_doubles(args.x_values);
  Rng rng(derive_seed(args.seed, 0x9ced));

  for (double x : xs) {
    MixtureParams params = proposal_params_at(ckpt, ebm, x);
    MdnSamples draws = mdn_sample(params, args.m, rng);
    Tensor xt = Tensor::matrix(1, 1);
    xt[0] = x;
    const Tensor f = energy_forward(ebm, xt, draws.y, args.m);
    std::vector<double> f_vals(f.data(), f.data() + args.m);
    std::vector<double> logq_vals(draws.log_q.data(), draws.log_q.data() + args.m);
    for (double& lq : logq_vals) lq = std::max(lq, kLogQClamp);
    WeightedSamples ws = snis_weights(draws.y, std::move(f_vals), std::move(logq_vals));
    MomentEstimate est = snis_mean_var(ws);

    std::cout << "x=" << fmt17(x) << " mean=" << fmt17(est.mean[0])
              << " variance=" << fmt17(est.variance[0]) << " ess=" << fmt17(ws.ess);
    if (ws.ess < 0.01 * args.m) std::cout << " low_ess=1";
    if (args.resample_n > 0) {
      Tensor re = ebm_resample(ws, args.resample_n, rng);
      std::cout << " samples=";
      for (int i = 0; i < args.resample_n; ++i) {
        if (i) std::cout << ',';
        std::cout << fmt17(re(i, 0));
      }
    }
    std::cout << "\n";
  }
  return 0;
}

struct PlotArgs {
  std::string checkpoint;
  std::string x_grid = "-3:3:64";
  std::string y_grid = "-4.5:4.5:128";
  std::string generator;
  std::string out;
  uint64_t seed = 0;
  int samples_per_x = 64;
};

void write_panel_matrix(const std::string& path, const std::string& panel,
                        const PlotArgs& args, const std::string& hash,
                        const HeatPanel& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write panel file: " + path);
  out << "# ebmprop-plot v1 panel=" << panel << " x_grid=" << args.x_grid
      << " y_grid=" << args.y_grid << " version=" << kVersion
      << " config_hash=" << hash << " seed=" << args.seed
      << " layout=one-line-per-x\n";
  for (int ix = 0; ix < data.nx; ++ix) {
    for (int iy = 0; iy < data.ny; ++iy) {
      if (iy) out << ' ';
      out << fmt17(data.at(ix, iy));
    }
    out << '\n';
  }
}

int cmd_plot_data(const PlotArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  EnergyNet ebm = restore_energy_net(ckpt);
  const EvalGrid xg = EvalGrid::parse(args.x_grid);
  const EvalGrid yg = EvalGrid::parse(args.y_grid);
  if (xg.n_points < 16 || yg.n_points < 16)
    std::cerr << "warning: plot grid coarser than 16 points\n";
  const std::string out_dir = args.out.empty() ? default_out_dir() : args.out;
  fs::create_directories(out_dir);
  const std::string hash =
      flag_hash("plot-data|" + args.x_grid + "|" + args.y_grid + "|" +
                std::to_string(args.seed) + "|" + std::to_string(args.samples_per_x));
  const std::vector<double> xs = xg.points();
  const std::vector<double> ys = yg.points();
  const double h = yg.step();
  Rng rng(derive_seed(args.seed, 0x9101));

  auto normalize_column = [&](std::vector<double>& col) {
    double s = 0.0;
    for (double v : col) s += v * h;
    if (s > 0)
      for (double& v : col) v /= s;
  };

  std::vector<HeatPanel> panels;
  HeatPanel ebm_panel{"EBM", xg.n_points, yg.n_points, {}};
  HeatPanel mdn_panel{"MDN proposal", xg.n_points, yg.n_points, {}};
  HeatPanel samples_panel{"EBM samples", xg.n_points, yg.n_points, {}};
  HeatPanel gt_panel{"ground truth", xg.n_points, yg.n_points, {}};
  const bool has_gt = !args.generator.empty();
  const EnergyRowFn row = energy_row_fn(ebm);

  for (int ix = 0; ix < xg.n_points; ++ix) {
    const double x = xs[static_cast<size_t>(ix)];
    // energy density column
    const std::vector<double> f = row(x, ys);
    double mx = -1e308;
    for (double v : f) mx = std::max(mx, v);
    std::vector<double> col(ys.size());
    for (size_t g = 0; g < ys.size(); ++g) col[g] = std::exp(f[g] - mx);
    normalize_column(col);
    ebm_panel.values.insert(ebm_panel.values.end(), col.begin(), col.end());

    // proposal density column
    MixtureParams params = proposal_params_at(ckpt, ebm, x);
    Tensor grid_t = Tensor::matrix(yg.n_points, 1);
    for (int g = 0; g < yg.n_points; ++g) grid_t[g] = ys[static_cast<size_t>(g)];
    Tensor lp = mdn_log_prob(params, grid_t, yg.n_points);
    for (size_t g = 0; g < ys.size(); ++g) col[g] = std::exp(lp(0, static_cast<int>(g)));
    normalize_column(col);
    mdn_panel.values.insert(mdn_panel.values.end(), col.begin(), col.end());

    // approximate energy-model samples by weighted resampling
    MdnSamples draws = mdn_sample(params, 1024, rng);
    Tensor xt = Tensor::matrix(1, 1);
    xt[0] = x;
    const Tensor fs = energy_forward(ebm, xt, draws.y, 1024);
    std::vector<double> f_vals(fs.data(), fs.data() + 1024);
    std::vector<double> logq_vals(draws.log_q.data(), draws.log_q.data() + 1024);
    for (double& lq : logq_vals) lq = std::max(lq, kLogQClamp);
    WeightedSamples ws = snis_weights(draws.y, std::move(f_vals), std::move(logq_vals));
    Tensor re = ebm_resample(ws, args.samples_per_x, rng);
    std::fill(col.begin(), col.end(), 0.0);
    for (int i = 0; i < args.samples_per_x; ++i) {
      const int bin = std::clamp(
          static_cast<int>((re(i, 0) - yg.y_min) / h), 0, yg.n_points - 1);
      col[static_cast<size_t>(bin)] += 1.0;
    }
    normalize_column(col);
    samples_panel.values.insert(samples_panel.values.end(), col.begin(), col.end());

    if (has_gt) {
      auto gt = make_ground_truth(args.generator);
      const GaussianMixture1D cond = gt->conditional(x);
      for (size_t g = 0; g < ys.size(); ++g) col[g] = cond.pdf(ys[g]);
      normalize_column(col);
      gt_panel.values.insert(gt_panel.values.end(), col.begin(), col.end());
    }
  }

  if (has_gt) {
    write_panel_matrix(out_dir + "/panel_ground_truth.txt", "ground_truth", args, hash,
                       gt_panel);
    panels.push_back(gt_panel);
  }
  write_panel_matrix(out_dir + "/panel_ebm.txt", "ebm", args, hash, ebm_panel);
  write_panel_matrix(out_dir + "/panel_mdn.txt", "mdn", args, hash, mdn_panel);
  write_panel_matrix(out_dir + "/panel_ebm_samples.txt", "ebm_samples", args, hash,
                     samples_panel);
  panels.push_back(ebm_panel);
  panels.push_back(mdn_panel);
  panels.push_back(samples_panel);
  write_heatmap_svg(out_dir + "/heatmap.svg", panels, xg.y_min, xg.y_max, yg.y_min,
                    yg.y_max,
                    std::string("ebmprop version=") + kVersion + " config_hash=" + hash +
                        " seed=" + std::to_string(args.seed));
  std::cout << "panels=" << panels.size() << " out=" << out_dir << "\n";
  return 0;
}

struct Table1Args {
  std::string config;
  int runs = 20;
  bool smoke = false;
  int jobs = 0;
  std::string dataset = "both";
  int select_best = 5;
  std::string out;
};

int cmd_table1(const Table1Args& args) {
  RunConfig run_cfg = args.config.empty() ? parse_run_config_text("{}", "<defaults>")
                                          : parse_run_config(args.config);
  Table1Config cfg;
  // without an explicit config the table runs the tuned benchmark protocol
  if (!args.config.empty()) cfg.base = run_cfg.to_train_config();
  cfg.runs = args.runs;
  cfg.select_best = args.select_best;
  cfg.jobs = args.jobs;
  cfg.data_seed = run_cfg.data_seed;
  if (args.dataset == "1") cfg.generators = {"bimodal-split"};
  else if (args.dataset == "2") cfg.generators = {"heavy-multimodal"};
  else if (args.dataset == "both") cfg.generators = {"bimodal-split", "heavy-multimodal"};
  else throw std::invalid_argument("dataset must be 1, 2 or both");
  if (args.smoke) cfg.apply_smoke();

  const std::string out_dir = args.out.empty() ? default_out_dir() : args.out;
  fs::create_directories(out_dir);
  Table1Results results = run_table1(cfg, &std::cerr);
  print_table1(results, std::cout);
  save_table1_json(out_dir + "/table1.json", results, config_hash(run_cfg),
                   cfg.base.seed);
  std::cerr << "results written to " << out_dir << "/table1.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional energy-based regression with learned mixture proposals"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "sample a synthetic dataset");
  gen->add_option("--generator", gen_args.generator, "generator id");
  gen->add_option("--n", gen_args.n, "number of examples");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--out", gen_args.out, "output file path");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", train_args.config, "run config JSON file");
  train->add_option("--mode", train_args.mode, "joint_head or distill_separate");
  train->add_option("--seed", train_args.seed, "training seed override");
  train->add_option("--out", train_args.out, "output directory");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_args.data, "dataset file")->required();
  eval->add_option("--metric", eval_args.metric, "nll or kl");
  eval->add_option("--grid", eval_args.grid, "evaluation grid min:max:n");
  eval->add_option("--kl-x-points", eval_args.kl_x_points, "input grid size for kl");
  eval->add_option("--kl-y-points", eval_args.kl_y_points, "target grid size for kl");

  PredictArgs predict_args;
  CLI::App* predict = app.add_subcommand("predict", "importance-sampled predictions");
  predict->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file")
      ->required();
  predict->add_option("--x-values", predict_args.x_values, "comma-separated inputs")
      ->required();
  predict->add_option("--m", predict_args.m, "proposal samples per input");
  predict->add_option("--resample-n", predict_args.resample_n,
                      "emit n approximate model samples per input");
  predict->add_option("--seed", predict_args.seed, "sampling seed");

  PlotArgs plot_args;
  CLI::App* plot = app.add_subcommand("plot-data", "emit density grids and a heatmap");
  plot->add_option("--checkpoint", plot_args.checkpoint, "checkpoint file")->required();
  plot->add_option("--x-grid", plot_args.x_grid, "input grid min:max:n");
  plot->add_option("--y-grid", plot_args.y_grid, "target grid min:max:n");
  plot->add_option("--generator", plot_args.generator,
                   "generator id for the ground-truth panel");
  plot->add_option("--out", plot_args.out, "output directory");
  plot->add_option("--seed", plot_args.seed, "sampling seed");
  plot->add_option("--samples-per-x", plot_args.samples_per_x,
                   "resampled points per input column");

  Table1Args table_args;
  CLI::App* table = app.add_subcommand("table1", "run the benchmark table");
  table->add_option("--config", table_args.config, "base run config JSON file");
  table->add_option("--runs", table_args.runs, "runs per setting");
  table->add_flag("--smoke", table_args.smoke, "3 runs x 5 epochs structural check");
  table->add_option("--jobs", table_args.jobs, "worker threads (default: cores)");
  table->add_option("--dataset", table_args.dataset, "1, 2 or both");
  table->add_option("--select-best", table_args.select_best, "runs averaged per setting");
  table->add_option("--out", table_args.out, "output directory");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(gen)) return cmd_gen_data(gen_args);
    if (app.got_subcommand(train)) return cmd_train(train_args);
    if (app.got_subcommand(eval)) return cmd_eval(eval_args);
    if (app.got_subcommand(predict)) return cmd_predict(predict_args);
    if (app.got_subcommand(plot)) return cmd_plot_data(plot_args);
    if (app.got_subcommand(table)) return cmd_table1(table_args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
