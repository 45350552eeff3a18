// Times the packed binary complex convolution serially, with OpenMP, and
// against the unpacked floating reference. Outputs must agree exactly.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <random>

#include "bcnn/binary_ops.hpp"
#include "bcnn/layers.hpp"

using namespace bcnn;

namespace {

ComplexTensor random_signs(Shape s, std::mt19937_64& rng) {
  ComplexTensor t(s);
  for (auto* plane : {&t.re, &t.im})
    for (float& v : plane->data()) v = (rng() & 1) ? 1.0f : -1.0f;
  return t;
}

template <class F>
double time_ms(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct Case {
  const char* name;
  std::size_t n, in_c, out_c, hw, k, pad;
};

}  // namespace

int main() {
  const Case cases[] = {
      {"1x1 96->96 16x16", 4, 96, 96, 16, 1, 0},
      {"3x3 96->96 8x8", 4, 96, 96, 8, 3, 1},
      {"5x5 48->96 16x16", 2, 48, 96, 16, 5, 2},
      {"3x3 128->128 16x16", 2, 128, 128, 16, 3, 1},
  };
  std::mt19937_64 rng(7);
  std::printf("threads available: %d\n", omp_get_max_threads());
  std::printf("%-22s %12s %12s %12s %10s\n", "case", "naive ms", "serial ms", "openmp ms", "match");
  for (const auto& c : cases) {
    const ConvGeometry g{c.k, c.k, 1, 1, c.pad, c.pad, c.in_c, c.out_c};
    const ComplexTensor x = random_signs({c.n, c.in_c, c.hw, c.hw}, rng);
    const ComplexTensor w = random_signs({c.out_c, c.in_c, c.k, c.k}, rng);
    const BitplaneTensor xp = pack(x), wp = pack(w);
    const Parallelism par{4, 1};

    ComplexTensor y_naive, y_serial, y_omp;
    const double t_naive = time_ms([&] { y_naive = complex_conv2d(x, w, g, -1.0f); }, 1);
    const double t_serial = time_ms([&] { y_serial = binary_complex_conv2d_serial(xp, wp, g, par); }, 5);
    const double t_omp = time_ms([&] { y_omp = binary_complex_conv2d(xp, wp, g, par); }, 5);
    const bool match = y_naive == y_serial && y_serial == y_omp;
    std::printf("%-22s %12.3f %12.3f %12.3f %10s\n", c.name, t_naive, t_serial, t_omp, match ? "yes" : "NO");
    if (!match) return 1;
  }
  return 0;
}
