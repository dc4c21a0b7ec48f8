#include "goalfactor/pipeline.hpp"

int main(int argc, char** argv) { return goalfactor::cli::main(argc, argv); }
