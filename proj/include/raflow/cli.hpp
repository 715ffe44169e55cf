#pragma once

namespace raflow {

/// Entry point of the `raflow` executable. Exit codes: 0 ok, 2 usage or
/// configuration error, 3 I/O error, 4 numerical divergence.
int run_cli(int argc, char** argv);

}  // namespace raflow
