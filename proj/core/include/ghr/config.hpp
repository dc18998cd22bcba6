#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ghr/lora.hpp"
#include "ghr/meta_model.hpp"
#include "ghr/res.hpp"

namespace ghr {

// Flat dotted-key run configuration: a plain-text file of "key = value"
// lines ('#' comments), plus command-line "key=value" overrides applied on
// top. Unknown keys and invalid values are collected and reported
// together.
struct RunConfig {
  // paths
  std::string out_root = "out";

  // data generation
  std::uint64_t data_seed = 42;
  int hr_lat = 48;
  int hr_lon = 96;
  int k = 3;
  std::string variables = "toy";  // toy | canonical
  std::int64_t train_start = 0;   // default 2020-01-01T00:00:00Z
  int train_days = 366;           // climatology needs full day-of-year coverage
  int hr_train_days = 60;         // tail window used for DCTL / LoRA
  std::int64_t eval_start = 0;    // default 2021-01-01T00:00:00Z
  int eval_days = 25;
  int n_stations = 20;

  // model
  ModelConfig model;

  // pretrain
  TrainHyper pretrain;

  // dctl
  DctlHyper dctl;
  std::vector<int> res_positions = {3, 6};
  WindowShape res_window = {4, 4};

  // lora
  int lora_rank = 4;
  double lora_alpha = 4.0;
  LoraTuneHyper lora;

  // forecast
  std::int64_t forecast_init = 0;  // default: eval_start
  int forecast_steps = 40;
  int forecast_output_every = 1;

  // evaluate
  int eval_max_inits = 4;
  int eval_init_stride_hours = 12;
  int eval_leads = 40;
  std::string activity_mode = "forecast_anomaly";  // | error_field

  // station-eval
  int station_max_inits = 4;

  VariableSet variable_set() const;
  GridSpec grid_hr() const;

  // Derived artifact paths (all under out_root).
  std::string data_dir() const { return out_root + "/data"; }
  std::string ckpt_dir() const { return out_root + "/checkpoints"; }
  std::string manifest_train_lr() const { return data_dir() + "/train_lr.txt"; }
  std::string manifest_train_hr() const { return data_dir() + "/train_hr.txt"; }
  std::string manifest_train_hr_full() const { return data_dir() + "/train_hr_full.txt"; }
  std::string manifest_eval() const { return data_dir() + "/eval.txt"; }
  std::string stats_path() const { return data_dir() + "/stats.tsv"; }
  std::string climatology_path() const { return data_dir() + "/climatology.ghrp"; }
  std::string stations_path() const { return data_dir() + "/stations.csv"; }
  std::string meta_ckpt() const { return ckpt_dir() + "/meta.ghrp"; }
  std::string res_ckpt() const { return ckpt_dir() + "/res.ghrp"; }
  std::string lora_ckpt() const { return ckpt_dir() + "/lora.ghrp"; }
  std::string pretrain_loss_csv() const { return out_root + "/pretrain_loss.csv"; }
  std::string dctl_report_csv() const { return out_root + "/dctl_report.csv"; }
  std::string dctl_loss_csv() const { return out_root + "/dctl_loss.csv"; }
  std::string lora_loss_csv() const { return out_root + "/lora_loss.csv"; }
  std::string forecast_dir() const { return out_root + "/forecasts"; }
  std::string scores_dir() const { return out_root + "/scores"; }
  std::string station_scores_csv() const { return out_root + "/station_scores.csv"; }
  std::string report_dir() const { return out_root + "/report"; }
};

// Parses `path` (optional: empty string = defaults) and applies "key=value"
// overrides. Throws ConfigError listing every violation at once.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// The raw key/value layer, exposed for tests.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);
RunConfig run_config_from_map(std::map<std::string, std::string> kv);

}  // namespace ghr
