#include "pljp/cli.hpp"

int main(int argc, char** argv) { return pljp::dispatch(argc, argv); }
