#pragma once

#include <cassert>
#include <vector>

namespace fringe {

/// Dense (firm, technology, period) array stored flat, period fastest.
struct Grid3 {
  int nf = 0, nt = 0, np = 0;
  std::vector<double> v;

  Grid3() = default;
  Grid3(int f, int t, int p) : nf(f), nt(t), np(p), v(static_cast<size_t>(f) * t * p, 0.0) {}

  double& at(int f, int t, int p) {
    assert(f >= 0 && f < nf && t >= 0 && t < nt && p >= 0 && p < np);
    return v[(static_cast<size_t>(f) * nt + t) * np + p];
  }
  double at(int f, int t, int p) const {
    assert(f >= 0 && f < nf && t >= 0 && t < nt && p >= 0 && p < np);
    return v[(static_cast<size_t>(f) * nt + t) * np + p];
  }
  bool empty() const { return v.empty(); }
};

/// Dense (firm, technology) array stored flat.
struct Grid2 {
  int nf = 0, nt = 0;
  std::vector<double> v;

  Grid2() = default;
  Grid2(int f, int t) : nf(f), nt(t), v(static_cast<size_t>(f) * t, 0.0) {}

  double& at(int f, int t) {
    assert(f >= 0 && f < nf && t >= 0 && t < nt);
    return v[static_cast<size_t>(f) * nt + t];
  }
  double at(int f, int t) const {
    assert(f >= 0 && f < nf && t >= 0 && t < nt);
    return v[static_cast<size_t>(f) * nt + t];
  }
  bool empty() const { return v.empty(); }
};

}  // namespace fringe
