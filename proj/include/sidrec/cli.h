#pragma once

namespace sidrec {

// Operator entry point: gen-data, tokenize, train-stage1, train-stage2,
// eval, ablate, infer. Returns the process exit code (0 ok, 1 runtime
// failure, 2 usage error).
int dispatch(int argc, const char* const* argv);

}  // namespace sidrec
