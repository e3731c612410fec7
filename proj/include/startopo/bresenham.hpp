#pragma once

#include <cstdlib>
#include <vector>

namespace startopo {

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Integer Bresenham walk from `from` to `to`.
///
/// Visits every pixel of the segment except `from`, ending with `to`
/// (nothing is visited when the endpoints coincide). Along the major axis
/// step k the minor offset is round(k * |d_minor| / n) with halves rounded
/// away from `from`, where n is the major-axis length. That rule is
/// symmetric under reflections of the grid.
template <typename Visit>
void trace_ray(Pixel from, Pixel to, Visit&& visit) {
  const int dr = to.row - from.row;
  const int dc = to.col - from.col;
  const int adr = std::abs(dr);
  const int adc = std::abs(dc);
  const int sr = dr > 0 ? 1 : (dr < 0 ? -1 : 0);
  const int sc = dc > 0 ? 1 : (dc < 0 ? -1 : 0);
  const bool row_major = adr >= adc;
  const int n = row_major ? adr : adc;
  const int minor = row_major ? adc : adr;
  if (n == 0) return;
  // err tracks 2*k*minor + n modulo 2n.
  long err = n;
  int r = from.row;
  int c = from.col;
  for (int k = 1; k <= n; ++k) {
    err += 2L * minor;
    const bool step_minor = err >= 2L * n;
    if (step_minor) err -= 2L * n;
    if (row_major) {
      r += sr;
      if (step_minor) c += sc;
    } else {
      c += sc;
      if (step_minor) r += sr;
    }
    visit(Pixel{r, c});
  }
}

inline std::vector<Pixel> ray_pixels(Pixel from, Pixel to) {
  std::vector<Pixel> out;
  trace_ray(from, to, [&](Pixel p) { out.push_back(p); });
  return out;
}

}  // namespace startopo
