#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "deconf/config.hpp"

namespace deconf::cli {

// Exit codes: 0 success, 1 validation/config, 2 I/O, 3 numerical failure.
int cli_main(int argc, const char* const* argv);

void cmd_simulate(const RunConfig& cfg, const std::filesystem::path& out_dir);
void cmd_semisynth(const RunConfig& cfg, const std::filesystem::path& raw_csv,
                   const std::filesystem::path& out_dir);
void cmd_fit_exposure(const RunConfig& cfg,
                      const std::filesystem::path& bundle_dir,
                      const std::filesystem::path& out_dir);
void cmd_fit_outcome(const RunConfig& cfg,
                     const std::filesystem::path& bundle_dir,
                     const std::filesystem::path& confounders_csv,
                     const std::filesystem::path& out_dir);
void cmd_evaluate(const RunConfig& cfg,
                  const std::filesystem::path& bundle_dir,
                  const std::filesystem::path& exposure_ckpt,
                  const std::filesystem::path& outcome_ckpt,
                  const std::filesystem::path& out_dir);
void cmd_sweep(const RunConfig& cfg, const std::filesystem::path& out_dir,
               std::size_t jobs, bool verbose = true);
void cmd_jacobian(const RunConfig& cfg,
                  const std::filesystem::path& outcome_ckpt,
                  const std::filesystem::path& bundle_dir,
                  const std::filesystem::path& confounders_csv,
                  const std::filesystem::path& out_dir);
int cmd_selfcheck(bool verbose = true);

}  // namespace deconf::cli
