#pragma once

namespace upil {

// Entry point of the `upil` command. Returns the process exit code:
// 0 success, 2 configuration error, 3 data error, 4 internal error.
int run_cli(int argc, char** argv);

}  // namespace upil
