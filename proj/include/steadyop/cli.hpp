#pragma once

// Command-line front end: gen-data, train, eval, gradcheck, fp-trace.
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

namespace steadyop::cli {

int dispatch(int argc, char** argv);

}  // namespace steadyop::cli
