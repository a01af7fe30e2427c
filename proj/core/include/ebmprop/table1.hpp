#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ebmprop/bench.hpp"
#include "ebmprop/trainer.hpp"

namespace ebmprop {

// One column of the benchmark table: either the target-centered noise
// baseline at a given sigma_1 (sigma_2 = 8 sigma_1), or the learned proposal
// with K components.
struct Table1Setting {
  std::string label;
  bool learned = false;
  double sigma1 = 0.1;
  int K = 4;
};

// the benchmark axis: sigma_1 in {0.05, 0.1, 0.2, 0.4, 0.8} and K in {1, 4, 16}
std::vector<Table1Setting> table1_settings();

// Training configuration used by the benchmark table: the protocol defaults
// (75 epochs, batch 32, M = 1024) with tanh activation and lr 3e-3. The
// library-wide defaults (relu, lr 1e-3) underfit the first generator within
// the fixed 75-epoch budget; this tuned variant is what the table and the
// acceptance gates run.
TrainConfig benchmark_protocol_config();

struct Table1RunOutcome {
  uint64_t seed = 0;
  double metric = 0.0;
  bool failed = false;
  std::string error;
  double wall_seconds = 0.0;
};

struct Table1Row {
  Table1Setting setting;
  std::vector<Table1RunOutcome> runs;
  double mean_of_best = 0.0;
  int n_selected = 0;
};

struct Table1DatasetResult {
  std::string generator;
  std::string metric;  // "kl" or "nll"
  int n_train = 0;
  std::vector<Table1Row> rows;
};

struct Table1Config {
  std::vector<std::string> generators = {"bimodal-split", "heavy-multimodal"};
  int runs = 20;
  int select_best = 5;
  int jobs = 0;  // 0 -> hardware concurrency
  uint64_t data_seed = 1;
  TrainConfig base = benchmark_protocol_config();  // objective+K set per setting
  bool smoke = false;
  // empty -> the full table1_settings() axis
  std::vector<Table1Setting> settings;

  void apply_smoke() {
    runs = 3;
    select_best = 3;
    base.epochs = 5;
  }
};

struct Table1Results {
  std::vector<Table1DatasetResult> datasets;
  int runs_per_setting = 0;
  int select_best = 0;
};

// Trains runs-per-setting networks for every setting on every dataset
// (bimodal-split scored by KL to ground truth, heavy-multimodal by grid NLL),
// fanning runs out over a worker pool. Failed runs are recorded, not fatal.
Table1Results run_table1(const Table1Config& cfg, std::ostream* progress = nullptr);

// Per-generator metric used by the table ("kl" or "nll").
std::string table1_metric_for(const std::string& generator);

// Train one setting run and return the evaluation metric.
Table1RunOutcome run_table1_single(const Table1Setting& setting,
                                   const TrainConfig& base, const Dataset& train_data,
                                   const Dataset& test_data,
                                   const GroundTruthDensity& gt, uint64_t run_seed);

void print_table1(const Table1Results& results, std::ostream& os);
void save_table1_json(const std::string& path, const Table1Results& results,
                      const std::string& config_hash, uint64_t seed);

}  // namespace ebmprop
