#include "raflow/cli.hpp"

int main(int argc, char** argv) { return raflow::run_cli(argc, argv); }
