#pragma once
// Operator-level commands behind the CLI and the shared-library API: dataset
// generation, self-training runs with persisted artifacts, evaluation,
// rejection curves and calibration sweeps. Configs and reports travel as
// JSON text so the surface stays language-neutral.

#include <string>

namespace seqpl {

extern const char* kToolVersion;

// Writes pool/labeled/unlabeled/val dataset files plus a data manifest into
// out_dir. Returns a JSON summary with the counts.
std::string cmd_gen_data(const std::string& config_json, const std::string& out_dir);

// Runs self-training over the datasets in data_dir, persisting per-round
// checkpoints, selection manifests, uncertainty dumps and history.csv into
// run_dir. Returns a JSON summary (best round, history).
std::string cmd_self_train(const std::string& config_json, const std::string& data_dir,
                           const std::string& run_dir);

// Word accuracy / WER / CER of a checkpoint on a labeled dataset.
std::string cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                     const std::string& options_json);

// Rejection curves + PRR for the uncertainty and/or confidence measures;
// writes curve tables (and per-sample scores) into out_dir.
std::string cmd_rejection(const std::string& checkpoint_path, const std::string& dataset_path,
                          const std::string& options_json, const std::string& out_dir);

// ECE sweep over a dropout-probability grid, with subset-restricted ECE
// columns; writes calibration.csv into out_dir.
std::string cmd_calibrate(const std::string& checkpoint_path, const std::string& dataset_path,
                          const std::string& options_json, const std::string& out_dir);

}  // namespace seqpl
