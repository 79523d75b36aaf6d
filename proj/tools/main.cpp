#include "mast/app.hpp"

int main(int argc, char** argv) { return mast::run_cli(argc, argv); }
