#pragma once

// Dense compute kernels behind the tensor ops. Every kernel exists twice:
// the OpenMP version in crld::kernels (used by the library) and a serial
// reference in crld::kernels::ref. Both accumulate inner products in double
// and assign each output element to exactly one thread with a fixed
// reduction order, so the two variants produce bit-identical results at any
// thread count. tests/test_kernels.cpp checks that equivalence; the
// bench_kernels tool compares their throughput.

namespace crld::kernels {

// y[m x n] = a[m x k] . b[k x n]
void matmul(const float* a, const float* b, float* y, int m, int k, int n);
// da[m x k] += g[m x n] . b^T    db[k x n] += a^T . g[m x n]
void matmul_grad_a(const float* g, const float* b, float* da, int m, int k, int n);
void matmul_grad_b(const float* a, const float* g, float* db, int m, int k, int n);

// 3x3 cross-correlation, zero padding 1, stride 1 or 2.
// x: [n, cin, h, w]  w: [cout, cin, 3, 3]  y: [n, cout, ho, wo]
// with ho = (h - 1) / stride + 1 (== ceil(h / stride)).
int conv_out_extent(int in, int stride);
void conv2d(const float* x, const float* w, float* y,
            int n, int cin, int h, int wd, int cout, int stride);
void conv2d_grad_x(const float* g, const float* w, float* dx,
                   int n, int cin, int h, int wd, int cout, int stride);
void conv2d_grad_w(const float* x, const float* g, float* dw,
                   int n, int cin, int h, int wd, int cout, int stride);

// Per-channel mean / biased variance over the n*h*w axis of [n, c, h, w].
void bn_stats(const float* x, int n, int c, int h, int w,
              double* mean, double* var);
// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel.
void bn_normalize(const float* x, float* y, int n, int c, int h, int w,
                  const double* mean, const double* var, double eps,
                  const float* gamma, const float* beta);

void relu(const float* x, float* y, long count);
void relu_grad(const float* x, const float* g, float* dx, long count);

// y[n x c] = mean over h*w of x[n, c, h, w]
void global_avg_pool(const float* x, float* y, int n, int c, int h, int w);
void global_avg_pool_grad(const float* g, float* dx, int n, int c, int h, int w);

namespace ref {
void matmul(const float* a, const float* b, float* y, int m, int k, int n);
void matmul_grad_a(const float* g, const float* b, float* da, int m, int k, int n);
void matmul_grad_b(const float* a, const float* g, float* db, int m, int k, int n);
void conv2d(const float* x, const float* w, float* y,
            int n, int cin, int h, int wd, int cout, int stride);
void conv2d_grad_x(const float* g, const float* w, float* dx,
                   int n, int cin, int h, int wd, int cout, int stride);
void conv2d_grad_w(const float* x, const float* g, float* dw,
                   int n, int cin, int h, int wd, int cout, int stride);
void bn_stats(const float* x, int n, int c, int h, int w,
              double* mean, double* var);
void bn_normalize(const float* x, float* y, int n, int c, int h, int w,
                  const double* mean, const double* var, double eps,
                  const float* gamma, const float* beta);
void relu(const float* x, float* y, long count);
void relu_grad(const float* x, const float* g, float* dx, long count);
void global_avg_pool(const float* x, float* y, int n, int c, int h, int w);
void global_avg_pool_grad(const float* g, float* dx, int n, int c, int h, int w);
}  // namespace ref

}  // namespace crld::kernels
