#include "ghr/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ghr/errors.hpp"

namespace ghr {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

WindowShape parse_window(const std::string& v) {
  const std::size_t x = v.find('x');
  if (x == std::string::npos) throw ConfigError("expected ROWSxCOLS, got '" + v + "'");
  WindowShape s;
  s.rows = std::stoi(v.substr(0, x));
  s.cols = std::stoi(v.substr(x + 1));
  return s;
}

}  // namespace

VariableSet RunConfig::variable_set() const {
  if (variables == "toy") return VariableSet::toy();
  if (variables == "canonical") return VariableSet::canonical();
  throw ConfigError("data.variables must be 'toy' or 'canonical', got '" + variables + "'");
}

GridSpec RunConfig::grid_hr() const {
  return GridSpec::regular(hr_lat, hr_lon);
}

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

RunConfig run_config_from_map(std::map<std::string, std::string> kv) {
  RunConfig cfg;
  cfg.train_start = parse_iso8601("2020-01-01T00:00:00Z");
  cfg.eval_start = parse_iso8601("2021-01-01T00:00:00Z");
  cfg.forecast_init = 0;

  std::vector<std::string> errors;
  auto take = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return std::pair<bool, std::string>{false, ""};
    std::string v = it->second;
    kv.erase(it);
    return std::pair<bool, std::string>{true, v};
  };
  auto set_err = [&errors](const std::string& key, const std::string& what) {
    errors.push_back(key + ": " + what);
  };
  auto get_int = [&](const char* key, int& slot) {
    auto [found, v] = take(key);
    if (!found) return;
    try {
      slot = std::stoi(v);
    } catch (...) {
      set_err(key, "not an integer: '" + v + "'");
    }
  };
  auto get_u64 = [&](const char* key, std::uint64_t& slot) {
    auto [found, v] = take(key);
    if (!found) return;
    try {
      slot = std::stoull(v);
    } catch (...) {
      set_err(key, "not an integer: '" + v + "'");
    }
  };
  auto get_double = [&](const char* key, double& slot) {
    auto [found, v] = take(key);
    if (!found) return;
    try {
      slot = std::stod(v);
    } catch (...) {
      set_err(key, "not a number: '" + v + "'");
    }
  };
  auto get_string = [&](const char* key, std::string& slot) {
    auto [found, v] = take(key);
    if (found) slot = v;
  };
  auto get_time = [&](const char* key, std::int64_t& slot) {
    auto [found, v] = take(key);
    if (!found) return;
    try {
      slot = parse_iso8601(v);
    } catch (const std::exception& e) {
      set_err(key, e.what());
    }
  };
  auto get_window = [&](const char* key, WindowShape& slot) {
    auto [found, v] = take(key);
    if (!found) return;
    try {
      slot = parse_window(v);
    } catch (const std::exception& e) {
      set_err(key, e.what());
    }
  };
  auto get_bool = [&](const char* key, bool& slot) {
    auto [found, v] = take(key);
    if (!found) return;
    if (v == "true" || v == "1") slot = true;
    else if (v == "false" || v == "0") slot = false;
    else set_err(key, "expected true/false");
  };

  get_string("paths.out_root", cfg.out_root);

  get_u64("data.seed", cfg.data_seed);
  get_int("data.hr_lat", cfg.hr_lat);
  get_int("data.hr_lon", cfg.hr_lon);
  get_int("data.k", cfg.k);
  get_string("data.variables", cfg.variables);
  get_time("data.train_start", cfg.train_start);
  get_int("data.train_days", cfg.train_days);
  get_int("data.hr_train_days", cfg.hr_train_days);
  get_time("data.eval_start", cfg.eval_start);
  get_int("data.eval_days", cfg.eval_days);
  get_int("data.n_stations", cfg.n_stations);

  get_int("model.patch", cfg.model.patch);
  get_int("model.embed_dim", cfg.model.embed_dim);
  get_int("model.blocks", cfg.model.blocks);
  get_int("model.period", cfg.model.period);
  get_int("model.heads", cfg.model.heads);
  WindowShape square{2, 2}, zonal{2, 4}, meridional{4, 2};
  get_window("model.window_square", square);
  get_window("model.window_zonal", zonal);
  get_window("model.window_meridional", meridional);
  cfg.model.window_schedule = {square, zonal, meridional};

  get_int("pretrain.steps", cfg.pretrain.steps);
  get_int("pretrain.batch", cfg.pretrain.batch);
  get_double("pretrain.lr", cfg.pretrain.lr);
  get_double("pretrain.weight_decay", cfg.pretrain.weight_decay);
  get_u64("pretrain.seed", cfg.pretrain.seed);
  get_double("pretrain.val_fraction", cfg.pretrain.val_fraction);
  get_int("pretrain.val_every", cfg.pretrain.val_every);

  get_int("dctl.steps", cfg.dctl.steps);
  get_int("dctl.batch", cfg.dctl.batch);
  get_double("dctl.lr", cfg.dctl.lr);
  get_double("dctl.weight_decay", cfg.dctl.weight_decay);
  get_u64("dctl.seed", cfg.dctl.seed);
  get_double("dctl.val_fraction", cfg.dctl.val_fraction);
  get_int("dctl.val_every", cfg.dctl.val_every);
  bool unfreeze = false;
  get_bool("dctl.unfreeze_all", unfreeze);
  get_int("dctl.unfreeze_steps", cfg.dctl.unfreeze_steps);
  get_double("dctl.unfreeze_lr", cfg.dctl.unfreeze_lr);
  if (!unfreeze) cfg.dctl.unfreeze_steps = 0;
  {
    auto [found, v] = take("dctl.positions");
    if (found) {
      cfg.res_positions.clear();
      std::istringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        try {
          cfg.res_positions.push_back(std::stoi(trim(tok)));
        } catch (...) {
          set_err("dctl.positions", "not an integer list: '" + v + "'");
          break;
        }
      }
    }
  }
  get_window("dctl.window", cfg.res_window);

  get_int("lora.rank", cfg.lora_rank);
  get_double("lora.alpha", cfg.lora_alpha);
  get_int("lora.t_max", cfg.lora.t_max);
  get_int("lora.steps_per_stage", cfg.lora.steps_per_stage);
  get_int("lora.batch", cfg.lora.batch);
  get_double("lora.lr", cfg.lora.lr);
  get_double("lora.weight_decay", cfg.lora.weight_decay);
  get_u64("lora.seed", cfg.lora.seed);

  get_time("forecast.init_time", cfg.forecast_init);
  get_int("forecast.steps", cfg.forecast_steps);
  get_int("forecast.output_every", cfg.forecast_output_every);

  get_int("evaluate.max_inits", cfg.eval_max_inits);
  get_int("evaluate.init_stride_hours", cfg.eval_init_stride_hours);
  get_int("evaluate.leads", cfg.eval_leads);
  get_string("evaluate.activity_mode", cfg.activity_mode);

  get_int("station.max_inits", cfg.station_max_inits);

  for (const auto& [key, value] : kv) {
    errors.push_back(key + ": unknown key");
  }

  // Cross-field validation; every violation is reported.
  if (cfg.k <= 0 || cfg.k % 2 == 0) {
    errors.push_back("data.k: must be odd and positive (got " + std::to_string(cfg.k) + ")");
  }
  if (cfg.hr_lat <= 0 || cfg.hr_lon != 2 * cfg.hr_lat) {
    errors.push_back("data.hr_lon: must equal 2*data.hr_lat");
  }
  if (cfg.k > 0 && (cfg.hr_lat % cfg.k != 0 || cfg.hr_lon % cfg.k != 0)) {
    errors.push_back("data.k: must divide the HR grid dimensions");
  }
  if (cfg.model.period <= 0 || cfg.model.blocks % cfg.model.period != 0) {
    errors.push_back("model.blocks: must be divisible by model.period");
  }
  if (cfg.model.heads <= 0 || cfg.model.embed_dim % cfg.model.heads != 0) {
    errors.push_back("model.embed_dim: must be divisible by model.heads");
  }
  if (cfg.train_days < 365) {
    errors.push_back("data.train_days: need at least a full year for day-of-year climatology");
  }
  if (cfg.hr_train_days <= 1 || cfg.hr_train_days > cfg.train_days) {
    errors.push_back("data.hr_train_days: must be in (1, train_days]");
  }
  if (cfg.eval_days < 1) errors.push_back("data.eval_days: must be positive");
  if (cfg.activity_mode != "forecast_anomaly" && cfg.activity_mode != "error_field") {
    errors.push_back("evaluate.activity_mode: expected forecast_anomaly or error_field");
  }
  if (cfg.lora.t_max < 1) errors.push_back("lora.t_max: must be >= 1");
  if (cfg.forecast_steps < 1) errors.push_back("forecast.steps: must be >= 1");
  if (cfg.eval_leads < 1) errors.push_back("evaluate.leads: must be >= 1");

  if (!errors.empty()) {
    std::string all = "configuration invalid:";
    for (const std::string& e : errors) all += "\n  - " + e;
    throw ConfigError(all);
  }

  // Derived model geometry.
  if (cfg.forecast_init == 0) cfg.forecast_init = cfg.eval_start;
  cfg.model.grid_lat = cfg.hr_lat / cfg.k;
  cfg.model.grid_lon = cfg.hr_lon / cfg.k;
  cfg.model.channels = cfg.variable_set().count();
  cfg.model.validate();
  cfg.lora.steps_per_stage = std::max(1, cfg.lora.steps_per_stage);
  return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    kv = parse_config_text(buf.str(), path);
  }
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override must be key=value, got '" + ov + "'");
    }
    kv[trim(ov.substr(0, eq))] = trim(ov.substr(eq + 1));
  }
  return run_config_from_map(std::move(kv));
}

}  // namespace ghr
