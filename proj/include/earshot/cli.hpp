// cli.hpp: command line front end (placeholder while modules land).
#pragma once

#include <cstdio>

namespace earshot {

inline int run_cli(int, char**) {
  std::fprintf(stderr, "not yet implemented\n");
  return 2;
}

}  // namespace earshot
