#pragma once

// Textbook cross-correlation used as a test oracle for both production paths.

#include <vector>

#include "deeplung/conv.hpp"

namespace deeplung::testing {

inline std::vector<double> naive_conv3d(const Tensor& x, const Tensor& w, Int3 s, Int3 p) {
  const Index n = x.dim(0), ci = x.dim(1), d = x.dim(2), h = x.dim(3), wd = x.dim(4);
  const Index co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const Index od = (d + 2 * p.d - kd) / s.d + 1;
  const Index oh = (h + 2 * p.h - kh) / s.h + 1;
  const Index ow = (wd + 2 * p.w - kw) / s.w + 1;
  std::vector<double> y(static_cast<std::size_t>(n * co * od * oh * ow), 0.0);
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < co; ++o)
      for (Index z = 0; z < od; ++z)
        for (Index yy = 0; yy < oh; ++yy)
          for (Index xx = 0; xx < ow; ++xx) {
            double acc = 0.0;
            for (Index c = 0; c < ci; ++c)
              for (Index a = 0; a < kd; ++a)
                for (Index bb = 0; bb < kh; ++bb)
                  for (Index cc = 0; cc < kw; ++cc) {
                    const Index iz = z * s.d - p.d + a, iy = yy * s.h - p.h + bb,
                                ix = xx * s.w - p.w + cc;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= wd) continue;
                    acc += x[(((b * ci + c) * d + iz) * h + iy) * wd + ix] *
                           w[(((o * ci + c) * kd + a) * kh + bb) * kw + cc];
                  }
            y[static_cast<std::size_t>((((b * co + o) * od + z) * oh + yy) * ow + xx)] = acc;
          }
  return y;
}

}  // namespace deeplung::testing
