#include "ccoma/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ccoma::kernels {

namespace {
std::atomic<bool> g_parallel{true};

inline bool use_parallel(std::size_t work) {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed) && work >= kParallelThreshold;
#else
    (void)work;
    return false;
#endif
}

inline void matmul_row(const double* a, const double* b, double* c, int k, int n) {
    for (int j = 0; j < n; ++j) c[j] = 0.0;
    for (int p = 0; p < k; ++p) {
        const double av = a[p];
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void matmul_row_acc(const double* a, const double* b, double* c, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double av = a[p];
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline double apply_unary(Unary op, double x) {
    switch (op) {
        case Unary::Relu: return x > 0.0 ? x : 0.0;
        case Unary::Tanh: return std::tanh(x);
        case Unary::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Unary::Exp: return std::exp(x);
        case Unary::Log: return std::log(x);
    }
    return 0.0;
}

inline double apply_binary(Binary op, double a, double b) {
    switch (op) {
        case Binary::Add: return a + b;
        case Binary::Sub: return a - b;
        case Binary::Mul: return a * b;
    }
    return 0.0;
}

// One row: shift by the row max over admitted entries, exponentiate, normalize.
// Returns false when every entry is masked out.
inline bool softmax_row(const double* logits, const double* mask, double neg_fill,
                        double* out, int cols) {
    double mx = -HUGE_VAL;
    bool any = false;
    for (int j = 0; j < cols; ++j) {
        const bool on = (mask == nullptr) || (mask[j] != 0.0);
        const double v = on ? logits[j] : neg_fill;
        if (on) any = true;
        if (v > mx) mx = v;
    }
    if (!any) return false;
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
        const bool on = (mask == nullptr) || (mask[j] != 0.0);
        const double v = on ? logits[j] : neg_fill;
        const double e = on ? std::exp(v - mx) : 0.0;
        out[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < cols; ++j) out[j] *= inv;
    return true;
}

}  // namespace

void set_parallel_enabled(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        matmul_row(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n, k, n);
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        matmul_row(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n, k, n);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    const std::size_t work = static_cast<std::size_t>(m) * k * n;
    if (use_parallel(work) && m > 1)
        matmul_omp(a, b, c, m, k, n);
    else
        matmul_serial(a, b, c, m, k, n);
}

void matmul_acc_serial(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        matmul_row_acc(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n, k, n);
}

void matmul_acc_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        matmul_row_acc(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n, k, n);
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    const std::size_t work = static_cast<std::size_t>(m) * k * n;
    if (use_parallel(work) && m > 1)
        matmul_acc_omp(a, b, c, m, k, n);
    else
        matmul_acc_serial(a, b, c, m, k, n);
}

void transpose_serial(const double* in, double* out, int m, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = in[static_cast<std::size_t>(i) * n + j];
}

void transpose(const double* in, double* out, int m, int n) { transpose_serial(in, out, m, n); }

void unary_serial(Unary op, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = apply_unary(op, x[i]);
}

void unary_omp(Unary op, const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        y[i] = apply_unary(op, x[i]);
}

void unary(Unary op, const double* x, double* y, std::size_t n) {
    if (use_parallel(n * 8))
        unary_omp(op, x, y, n);
    else
        unary_serial(op, x, y, n);
}

void binary_serial(Binary op, const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = apply_binary(op, a[i], b[i]);
}

void binary_omp(Binary op, const double* a, const double* b, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        y[i] = apply_binary(op, a[i], b[i]);
}

void binary(Binary op, const double* a, const double* b, double* y, std::size_t n) {
    if (use_parallel(n * 4))
        binary_omp(op, a, b, y, n);
    else
        binary_serial(op, a, b, y, n);
}

int row_softmax_serial(const double* logits, const double* mask, double neg_fill,
                       double* out, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        if (!softmax_row(logits + off, mask ? mask + off : nullptr, neg_fill, out + off, cols))
            return i;
    }
    return -1;
}

int row_softmax_omp(const double* logits, const double* mask, double neg_fill,
                    double* out, int rows, int cols) {
    std::atomic<int> bad{-1};
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * cols;
        if (!softmax_row(logits + off, mask ? mask + off : nullptr, neg_fill, out + off, cols)) {
            int expect = bad.load();
            while ((expect == -1 || i < expect) && !bad.compare_exchange_weak(expect, i)) {
            }
        }
    }
    return bad.load();
}

int row_softmax(const double* logits, const double* mask, double neg_fill,
                double* out, int rows, int cols) {
    const std::size_t work = static_cast<std::size_t>(rows) * cols * 16;
    if (use_parallel(work) && rows > 1)
        return row_softmax_omp(logits, mask, neg_fill, out, rows, cols);
    return row_softmax_serial(logits, mask, neg_fill, out, rows, cols);
}

}  // namespace ccoma::kernels
