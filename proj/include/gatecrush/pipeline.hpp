#pragma once

#include <string>

#include "gatecrush/config.hpp"

namespace gatecrush {

// Command implementations shared by the CLI and the python bindings.
// Each returns a process exit code and writes its artifacts under cfg.out.
int cmd_train_baseline(const RunConfig& cfg);
int cmd_collect_latency(const RunConfig& cfg);
int cmd_train_lpnet(const RunConfig& cfg);
int cmd_prune(const RunConfig& cfg);
int cmd_finetune(const RunConfig& cfg);
int cmd_flops(const RunConfig& cfg, const std::string& checkpoint = "",
              const std::string& encoding_csv = "");
int cmd_report(const RunConfig& cfg);

int run_command(const std::string& name, const RunConfig& cfg);

// svg/csv emission for cmd_report; exposed for tests
void write_report_files(const RunConfig& cfg);

}  // namespace gatecrush
