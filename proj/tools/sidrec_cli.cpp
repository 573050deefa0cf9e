#include "sidrec/cli.h"

int main(int argc, char** argv) { return sidrec::dispatch(argc, argv); }
