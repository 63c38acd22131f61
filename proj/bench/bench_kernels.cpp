// Wall-clock comparison of the (OpenMP) kernels against the serial
// reference implementations. Build target only; not part of ctest.

#include <chrono>
#include <cstdio>
#include <functional>

#include "svt/ops.hpp"
#include "svt/reference.hpp"
#include "svt/rng.hpp"
#include "svt/spm.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace svt;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warmup
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const char* name, double gmacs, double serial_s, double parallel_s) {
    std::printf("%-24s serial %8.2f ms (%6.2f GMAC/s)   parallel %8.2f ms (%6.2f GMAC/s)   speedup %.2fx\n",
                name, serial_s * 1e3, gmacs / serial_s, parallel_s * 1e3, gmacs / parallel_s,
                serial_s / parallel_s);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both columns run serial code\n");
#endif
    Rng rng(42);

    {  // matmul
        const int64_t n = 384;
        Tensor a = Tensor::randn({n, n}, rng);
        Tensor b = Tensor::randn({n, n}, rng);
        ref::Vec av(a.data().begin(), a.data().end()), bv(b.data().begin(), b.data().end());
        const double gmacs = static_cast<double>(n) * n * n / 1e9;
        const double ts = time_of([&] { ref::matmul(av, bv, n, n, n); }, 3);
        const double tp = time_of([&] { matmul(a, b); }, 3);
        report("matmul 384^3", gmacs, ts, tp);
    }
    {  // depthwise conv3d
        const int64_t t = 8, h = 56, w = 56, c = 96;
        Tensor x = Tensor::randn({t, h, w, c}, rng);
        Tensor k = Tensor::randn({c, 3, 3, 3, 1}, rng);
        ref::Vec xv(x.data().begin(), x.data().end());
        const double gmacs = static_cast<double>(conv3d_mac_count({t, h, w}, {3, 3, 3}, {1, 1, 1}, c, c, c)) / 1e9;
        const double ts =
            time_of([&] { ref::conv3d(xv, t, h, w, c, k.data().data(), nullptr, c, 3, 3, 3, {1, 1, 1}, c); }, 3);
        const double tp = time_of([&] { grouped_conv3d(x, k, nullptr, {1, 1, 1}, c); }, 3);
        report("dw conv3d 8x56x56x96", gmacs, ts, tp);
    }
    {  // SPM elitism forward
        const int64_t n = 1568, c = 256, m = 32;
        const GridDims grid{8, 14, 14};
        const GridDims window{2, 14, 14};
        Tensor x = Tensor::randn({n, c}, rng);
        SemanticPrototypes protos;
        protos.e = Tensor::randn({1, m, c}, rng, 1.0 / std::sqrt(static_cast<double>(c)));
        SPMConfig cfg;
        cfg.prototypes = m;
        cfg.theta = 0.5;
        cfg.window = window;
        ref::Vec xv(x.data().begin(), x.data().end());
        ref::Vec ev(protos.e.data().begin(), protos.e.data().end());
        const double gmacs = 2.0 * m * n * c / 1e9;  // score + pool upper bound
        const double ts =
            time_of([&] { ref::spm_elitism(xv, n, c, ev, 1, m, cfg.theta, grid, window, 0, false); }, 3);
        TokenGrid tg{x, grid};
        const double tp = time_of([&] { spm_forward(tg, protos, cfg); }, 3);
        report("spm 1568 tok x 32 proto", gmacs, ts, tp);
    }
    return 0;
}
