#pragma once

#include <string>
#include <vector>

namespace stt {

/// Entry point behind the stt binary. Returns the process exit code:
/// 0 success, 1 configuration or contract violation (including bad flags),
/// 2 I/O or file-format failure. Diagnostics go to stderr.
int cli_main(int argc, const char* const* argv);

/// Test convenience: runs cli_main on {"stt", args...}.
int run_cli(const std::vector<std::string>& args);

/// Recomputes every output hash listed in a run manifest and compares it to
/// the recorded value. Throws io_error when a listed file is missing and
/// format_error when the manifest is malformed; returns false on a mismatch.
bool verify_run_manifest(const std::string& manifest_path);

}  // namespace stt
