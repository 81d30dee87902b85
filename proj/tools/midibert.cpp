#include "midibert/cli.h"

int main(int argc, char** argv) { return midibert::run_cli(argc, argv); }
