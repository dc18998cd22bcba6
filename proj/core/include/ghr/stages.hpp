#pragma once

#include "ghr/config.hpp"

namespace ghr {

// Pipeline stages behind the CLI subcommands. Each stage validates that
// its predecessors' artifacts exist (MissingPrerequisite names the stage
// to run) and writes its own artifacts under cfg.out_root. All stages are
// deterministic under a fixed config and safe to re-run.

void run_gen_data(const RunConfig& cfg);       // splits, manifests, stats, climatology, stations
void run_pretrain(const RunConfig& cfg);       // meta checkpoint + loss CSV
void run_dctl(const RunConfig& cfg);           // RES checkpoint + before/after report
void run_lora_tune(const RunConfig& cfg);      // per-step adapters
void run_forecast(const RunConfig& cfg);       // state files with lead suffixes + cost report
void run_evaluate(const RunConfig& cfg);       // score CSVs + SVG curves (model/persistence/climatology)
void run_station_eval(const RunConfig& cfg);   // station RMSE tables
void run_report(const RunConfig& cfg);         // combined comparison

}  // namespace ghr
