#include "app.hpp"

int main(int argc, char** argv) { return cbct::app::run_cli(argc, argv); }
