// Compares the serial reference kernels against the OpenMP variants, plus
// end-to-end rollout collection with one and many threads.
#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ccoma/envs/traffic.hpp"
#include "ccoma/kernels.hpp"
#include "ccoma/trainer.hpp"

using clk = std::chrono::steady_clock;

namespace {

double ms_since(clk::time_point t0) {
    return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

void bench_matmul(int m, int k, int n, int reps) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n),
        c(static_cast<std::size_t>(m) * n);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);

    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r)
        ccoma::kernels::matmul_serial(a.data(), b.data(), c.data(), m, k, n);
    const double serial = ms_since(t0);

    t0 = clk::now();
    for (int r = 0; r < reps; ++r)
        ccoma::kernels::matmul_omp(a.data(), b.data(), c.data(), m, k, n);
    const double omp = ms_since(t0);

    const double gflop = 2.0 * m * k * n * reps / 1e6;  // in "mega", printed per ms
    std::printf("matmul %4dx%4dx%4d  serial %8.2f ms (%6.2f GF/s)  omp %8.2f ms (%6.2f GF/s)  x%.2f\n",
                m, k, n, serial, gflop / serial / 1e3, omp, gflop / omp / 1e3, serial / omp);
}

void bench_softmax(int rows, int cols, int reps) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-3, 3);
    std::vector<double> logits(static_cast<std::size_t>(rows) * cols),
        mask(static_cast<std::size_t>(rows) * cols, 1.0), out(logits.size());
    for (auto& v : logits) v = u(rng);

    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r)
        ccoma::kernels::row_softmax_serial(logits.data(), mask.data(), -1e9, out.data(), rows, cols);
    const double serial = ms_since(t0);
    t0 = clk::now();
    for (int r = 0; r < reps; ++r)
        ccoma::kernels::row_softmax_omp(logits.data(), mask.data(), -1e9, out.data(), rows, cols);
    const double omp = ms_since(t0);
    std::printf("softmax %5dx%4d       serial %8.2f ms                omp %8.2f ms                x%.2f\n",
                rows, cols, serial, omp, serial / omp);
}

void bench_rollouts(bool parallel) {
    ccoma::kernels::set_parallel_enabled(parallel);
#ifdef _OPENMP
    omp_set_num_threads(parallel ? omp_get_num_procs() : 1);
#endif
    ccoma::TrainConfig tc;
    tc.batch = 8;
    tc.seed = 3;
    auto cfg = ccoma::traffic::Config::for_mode(ccoma::traffic::Mode::Hard);
    ccoma::PolicyConfig pc;
    ccoma::Trainer trainer(
        tc, [cfg] { return std::make_unique<ccoma::traffic::TrafficEnv>(cfg); }, pc, 128);
    auto t0 = clk::now();
    auto batch = trainer.collect_rollouts();
    auto stats = trainer.update(batch);
    std::printf("rollout+update traffic hard (batch 8)  %s: %8.2f ms  (critic loss %.4f)\n",
                parallel ? "parallel" : "serial  ", ms_since(t0), stats.critic_loss);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP: %d threads available\n", omp_get_num_procs());
#else
    std::printf("OpenMP: not compiled in\n");
#endif
    bench_matmul(64, 64, 64, 2000);
    bench_matmul(256, 128, 128, 200);
    bench_matmul(1024, 128, 128, 50);
    bench_matmul(4096, 105, 128, 20);
    bench_softmax(1024, 128, 500);
    bench_rollouts(false);
    bench_rollouts(true);
#ifdef _OPENMP
    omp_set_num_threads(omp_get_num_procs());
#endif
    ccoma::kernels::set_parallel_enabled(true);
    return 0;
}
