#pragma once

#include <string>
#include <vector>

namespace pxe {

/// Entry point behind the `pxe` binary; args excludes the program name.
///
/// Verbs: gen, train, embed, eval, sweep, gradcheck. Every verb accepts
/// `--config <file>` with key=value lines (keys are the long option names);
/// explicit flags override file values. Every run writes its fully-resolved
/// configuration next to its outputs, so a run directory is reproducible
/// from its contents alone.
///
/// Exit codes: 0 success, 1 failed gradient check, 2 usage or input error,
/// 3 numerical failure.
int run_command(const std::vector<std::string>& args);

}  // namespace pxe
