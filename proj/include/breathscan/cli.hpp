#pragma once

namespace breathscan {

// Entry point behind the `breathscan` binary; exposed for integration tests.
// Exit codes: 0 success, 1 configuration error, 2 partial failure,
// 3 runtime abort.
int run_cli(int argc, const char* const* argv);

}  // namespace breathscan
