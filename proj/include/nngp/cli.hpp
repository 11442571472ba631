#pragma once

#include <string>

#include "nngp/config.hpp"

namespace nngp::cli {

// Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 I/O.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

// Creates output_dir/run_id and returns it with a trailing slash.
std::string ensure_run_dir(const config::RunConfig& cfg);

void cmd_simulate(const config::RunConfig& cfg);
void cmd_fit(const config::RunConfig& cfg);
void cmd_predict(const config::RunConfig& cfg);
void cmd_metrics(const config::RunConfig& cfg);
void cmd_kl(const config::RunConfig& cfg);
void cmd_bench(const config::RunConfig& cfg);

// Full argv entry point: subcommand dispatch, config load, error mapping.
int run(int argc, char** argv);

}  // namespace nngp::cli
