#include "pgn/flatness.hpp"

#include <cstdio>

namespace pgn {

std::string format_sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string surface_csv(const SurfaceGrid& grid) {
  std::string out = "k1,k2,loss\n";
  for (int i = 0; i < grid.resolution; ++i) {
    for (int j = 0; j < grid.resolution; ++j) {
      out += format_sig9(grid.resolution == 1 ? 0.0 : grid.coordinate(i));
      out += ',';
      out += format_sig9(grid.resolution == 1 ? 0.0 : grid.coordinate(j));
      out += ',';
      out += format_sig9(grid.values(i, j));
      out += '\n';
    }
  }
  return out;
}

}  // namespace pgn
