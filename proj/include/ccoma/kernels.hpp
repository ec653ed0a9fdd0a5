#pragma once

#include <cstddef>

// Dense numeric kernels. Every kernel has a serial reference implementation
// and an OpenMP variant that partitions work so that each output element is
// produced by exactly one thread with the same per-element operation order.
// The two variants are therefore bit-identical, which the test suite checks.
// kernels::* dispatches to the OpenMP variant above a size threshold.

namespace ccoma::kernels {

// Global switch for the OpenMP paths (parallel when compiled with OpenMP
// and not disabled at runtime). Serial reference functions ignore it.
void set_parallel_enabled(bool enabled);
bool parallel_enabled();

// Work sizes below this many scalar ops stay serial regardless.
inline constexpr std::size_t kParallelThreshold = 32 * 1024;

// c[m x n] = a[m x k] * b[k x n], row-major, c overwritten.
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// c[m x n] += a[m x k] * b[k x n]
void matmul_acc_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);

// out[n x m] = transpose(in[m x n])
void transpose_serial(const double* in, double* out, int m, int n);
void transpose(const double* in, double* out, int m, int n);

enum class Unary { Relu, Tanh, Sigmoid, Exp, Log };
void unary_serial(Unary op, const double* x, double* y, std::size_t n);
void unary_omp(Unary op, const double* x, double* y, std::size_t n);
void unary(Unary op, const double* x, double* y, std::size_t n);

enum class Binary { Add, Sub, Mul };
void binary_serial(Binary op, const double* a, const double* b, double* y, std::size_t n);
void binary_omp(Binary op, const double* a, const double* b, double* y, std::size_t n);
void binary(Binary op, const double* a, const double* b, double* y, std::size_t n);

// Row softmax over a [rows x cols] matrix with optional {0,1} mask.
// Masked-out logits are replaced by neg_fill before the shifted exp, so a
// masked entry comes out exactly 0. Rows where the mask is all zero are
// reported through the return value (index of first bad row, or -1).
int row_softmax_serial(const double* logits, const double* mask, double neg_fill,
                       double* out, int rows, int cols);
int row_softmax_omp(const double* logits, const double* mask, double neg_fill,
                    double* out, int rows, int cols);
int row_softmax(const double* logits, const double* mask, double neg_fill,
                double* out, int rows, int cols);

}  // namespace ccoma::kernels
