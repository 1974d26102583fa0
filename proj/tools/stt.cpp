#include "stt/cli.hpp"

int main(int argc, char** argv) { return stt::cli_main(argc, argv); }
