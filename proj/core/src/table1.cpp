#include "ebmprop/table1.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "ebmprop/version.hpp"

namespace ebmprop {

std::vector<Table1Setting> table1_settings() {
  std::vector<Table1Setting> settings;
  for (double s1 : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    Table1Setting s;
    s.label = "nce s1=" + std::to_string(s1).substr(0, 4);
    s.learned = false;
    s.sigma1 = s1;
    settings.push_back(s);
  }
  for (int k : {1, 4, 16}) {
    Table1Setting s;
    s.label = "ours K=" + std::to_string(k);
    s.learned = true;
    s.K = k;
    settings.push_back(s);
  }
  return settings;
}

std::string table1_metric_for(const std::string& generator) {
  return generator == "bimodal-split" ? "kl" : "nll";
}

TrainConfig benchmark_protocol_config() {
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.model.activation = Activation::kTanh;
  return cfg;
}

namespace {

double evaluate_run(const TrainedModel& model, const std::string& generator,
                    const Dataset& test_data, const GroundTruthDensity& gt) {
  const EnergyRowFn row_fn = energy_row_fn(*model.ebm);
  if (table1_metric_for(generator) == "kl") {
    const std::vector<double> x_grid = uniform_midpoints(gt.x_min(), gt.x_max(), 128);
    const EvalGrid y_grid{gt.y_min(), gt.y_max(), 2048};
    return eval_kl_ground_truth(row_fn, gt, x_grid, y_grid);
  }
  const EvalGrid grid{gt.y_min(), gt.y_max(), 8192};
  return eval_nll_grid(row_fn, test_data, grid);
}

}  // namespace

Table1RunOutcome run_table1_single(const Table1Setting& setting,
                                   const TrainConfig& base, const Dataset& train_data,
                                   const Dataset& test_data,
                                   const GroundTruthDensity& gt, uint64_t run_seed) {
  Table1RunOutcome outcome;
  outcome.seed = run_seed;
  TrainConfig cfg = base;
  cfg.seed = run_seed;
  cfg.mode = TrainMode::kJointHead;
  if (setting.learned) {
    cfg.objective = Objective::kNceLearnedProposal;
    cfg.mixture_k = setting.K;
  } else {
    cfg.objective = Objective::kNceFixedNoise;
    cfg.sigma1 = setting.sigma1;
    cfg.noise_sigmas.clear();
  }
  try {
    const TrainedModel model = train_run(cfg, train_data);
    outcome.wall_seconds = model.record.wall_seconds;
    if (model.record.failed) {
      outcome.failed = true;
      outcome.error = model.record.error;
      return outcome;
    }
    outcome.metric = evaluate_run(model, train_data.generator, test_data, gt);
    if (!std::isfinite(outcome.metric)) {
      outcome.failed = true;
      outcome.error = "non-finite evaluation metric";
    }
  } catch (const std::exception& e) {
    outcome.failed = true;
    outcome.error = e.what();
  }
  return outcome;
}

Table1Results run_table1(const Table1Config& cfg, std::ostream* progress) {
  Table1Results results;
  results.runs_per_setting = cfg.runs;
  results.select_best = cfg.select_best;
  const std::vector<Table1Setting> settings =
      cfg.settings.empty() ? table1_settings() : cfg.settings;

  for (const std::string& generator : cfg.generators) {
    auto gt = make_ground_truth(generator);
    // dataset sizes follow the benchmark protocol: 2000 train rows for the
    // first problem; 1700 train / 1900 test rows for the second
    const bool second = generator == "heavy-multimodal";
    const int n_train = second ? 1700 : 2000;
    const int n_test = second ? 1900 : 1000;
    const Dataset train_data = gen_dataset(generator, n_train, cfg.data_seed);
    const Dataset test_data =
        gen_dataset(generator, n_test, derive_seed(cfg.data_seed, 0x7e57));

    Table1DatasetResult dresult;
    dresult.generator = generator;
    dresult.metric = table1_metric_for(generator);
    dresult.n_train = n_train;
    dresult.rows.resize(settings.size());
    for (size_t s = 0; s < settings.size(); ++s) {
      dresult.rows[s].setting = settings[s];
      dresult.rows[s].runs.resize(static_cast<size_t>(cfg.runs));
    }

    struct Task {
      int setting = 0, run = 0;
    };
    std::vector<Task> tasks;
    for (int s = 0; s < static_cast<int>(settings.size()); ++s)
      for (int r = 0; r < cfg.runs; ++r) tasks.push_back({s, r});

    std::atomic<size_t> next{0};
    std::mutex progress_mutex;
    const int jobs = cfg.jobs > 0
                         ? cfg.jobs
                         : std::max(1u, std::thread::hardware_concurrency());
    auto worker = [&]() {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        const Task task = tasks[i];
        const uint64_t run_seed = derive_seed(
            derive_seed(cfg.base.seed, static_cast<uint64_t>(task.setting) + 17),
            static_cast<uint64_t>(task.run));
        Table1RunOutcome outcome =
            run_table1_single(settings[static_cast<size_t>(task.setting)], cfg.base,
                              train_data, test_data, *gt, run_seed);
        dresult.rows[static_cast<size_t>(task.setting)]
            .runs[static_cast<size_t>(task.run)] = outcome;
        if (progress) {
          std::lock_guard<std::mutex> lock(progress_mutex);
          *progress << generator << " "
                    << settings[static_cast<size_t>(task.setting)].label << " run "
                    << task.run << (outcome.failed ? " FAILED " + outcome.error
                                                   : " metric " + std::to_string(outcome.metric))
                    << " (" << std::fixed << std::setprecision(1)
                    << outcome.wall_seconds << "s)\n"
                    << std::defaultfloat;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (auto& row : dresult.rows) {
      std::vector<double> ok;
      for (const auto& run : row.runs)
        if (!run.failed) ok.push_back(run.metric);
      std::sort(ok.begin(), ok.end());
      row.n_selected = std::min<int>(cfg.select_best, static_cast<int>(ok.size()));
      double sum = 0.0;
      for (int i = 0; i < row.n_selected; ++i) sum += ok[static_cast<size_t>(i)];
      row.mean_of_best = row.n_selected > 0 ? sum / row.n_selected
                                            : std::numeric_limits<double>::quiet_NaN();
    }
    results.datasets.push_back(std::move(dresult));
  }
  return results;
}

void print_table1(const Table1Results& results, std::ostream& os) {
  for (const auto& dataset : results.datasets) {
    os << "dataset " << dataset.generator << " (metric: " << dataset.metric
       << ", mean of " << results.select_best << " best of "
       << results.runs_per_setting << " runs)\n";
    for (const auto& row : dataset.rows) {
      int failures = 0;
      for (const auto& run : row.runs) failures += run.failed ? 1 : 0;
      os << "  " << std::left << std::setw(14) << row.setting.label << std::right
         << std::setw(10) << std::fixed << std::setprecision(4) << row.mean_of_best
         << std::defaultfloat;
      if (failures > 0) os << "  (" << failures << " failed)";
      os << '\n';
    }
  }
}

void save_table1_json(const std::string& path, const Table1Results& results,
                      const std::string& config_hash, uint64_t seed) {
  nlohmann::json j;
  j["format"] = "ebmprop-table1";
  j["format_version"] = 1;
  j["tool_version"] = kVersion;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["runs_per_setting"] = results.runs_per_setting;
  j["select_best"] = results.select_best;
  j["datasets"] = nlohmann::json::array();
  for (const auto& dataset : results.datasets) {
    nlohmann::json dj;
    dj["generator"] = dataset.generator;
    dj["metric"] = dataset.metric;
    dj["n_train"] = dataset.n_train;
    dj["rows"] = nlohmann::json::array();
    for (const auto& row : dataset.rows) {
      nlohmann::json rj;
      rj["label"] = row.setting.label;
      rj["learned"] = row.setting.learned;
      if (row.setting.learned) rj["K"] = row.setting.K;
      else rj["sigma1"] = row.setting.sigma1;
      rj["mean_of_best"] = row.mean_of_best;
      rj["n_selected"] = row.n_selected;
      rj["runs"] = nlohmann::json::array();
      for (const auto& run : row.runs) {
        nlohmann::json uj;
        uj["seed"] = run.seed;
        uj["failed"] = run.failed;
        if (run.failed) uj["error"] = run.error;
        else uj["metric"] = run.metric;
        uj["wall_seconds"] = run.wall_seconds;
        rj["runs"].push_back(uj);
      }
      dj["rows"].push_back(rj);
    }
    j["datasets"].push_back(dj);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results file: " + path);
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing results file: " + path);
}

}  // namespace ebmprop
