#include "crld/kernels.hpp"

#include <cmath>

namespace crld::kernels {

int conv_out_extent(int in, int stride) { return (in - 1) / stride + 1; }

// ---------------------------------------------------------------------------
// Shared element-wise bodies. Each computes one output element from scratch;
// the serial and OpenMP entry points below differ only in how the element
// loop is scheduled, which keeps the two variants bit-identical.
// ---------------------------------------------------------------------------

namespace {

inline float matmul_cell(const float* a, const float* b, int k, int n, int i, int j) {
  double acc = 0.0;
  const float* ai = a + static_cast<long>(i) * k;
  for (int kk = 0; kk < k; ++kk) acc += static_cast<double>(ai[kk]) * b[static_cast<long>(kk) * n + j];
  return static_cast<float>(acc);
}

inline float matmul_da_cell(const float* g, const float* b, int k, int n, int i, int kk) {
  double acc = 0.0;
  const float* gi = g + static_cast<long>(i) * n;
  const float* bk = b + static_cast<long>(kk) * n;
  for (int j = 0; j < n; ++j) acc += static_cast<double>(gi[j]) * bk[j];
  return static_cast<float>(acc);
}

inline float matmul_db_cell(const float* a, const float* g, int m, int k, int n, int kk, int j) {
  double acc = 0.0;
  for (int i = 0; i < m; ++i)
    acc += static_cast<double>(a[static_cast<long>(i) * k + kk]) * g[static_cast<long>(i) * n + j];
  return static_cast<float>(acc);
}

inline float conv_cell(const float* x, const float* w, int cin, int h, int wd,
                       int img, int co, int oy, int ox, int stride) {
  double acc = 0.0;
  const long plane = static_cast<long>(h) * wd;
  const float* xi = x + static_cast<long>(img) * cin * plane;
  const float* wk = w + static_cast<long>(co) * cin * 9;
  for (int ci = 0; ci < cin; ++ci) {
    const float* xc = xi + ci * plane;
    const float* wc = wk + ci * 9;
    for (int dy = 0; dy < 3; ++dy) {
      int iy = oy * stride + dy - 1;
      if (iy < 0 || iy >= h) continue;
      for (int dx = 0; dx < 3; ++dx) {
        int ix = ox * stride + dx - 1;
        if (ix < 0 || ix >= wd) continue;
        acc += static_cast<double>(xc[static_cast<long>(iy) * wd + ix]) * wc[dy * 3 + dx];
      }
    }
  }
  return static_cast<float>(acc);
}

// Gather form of the input gradient: one pass per input element.
inline float conv_dx_cell(const float* g, const float* w, int cin, int cout,
                          int ho, int wo, int img, int ci, int iy, int ix, int stride) {
  double acc = 0.0;
  const long oplane = static_cast<long>(ho) * wo;
  const float* gi = g + static_cast<long>(img) * cout * oplane;
  for (int dy = 0; dy < 3; ++dy) {
    int num_y = iy + 1 - dy;
    if (num_y < 0 || num_y % stride != 0) continue;
    int oy = num_y / stride;
    if (oy >= ho) continue;
    for (int dx = 0; dx < 3; ++dx) {
      int num_x = ix + 1 - dx;
      if (num_x < 0 || num_x % stride != 0) continue;
      int ox = num_x / stride;
      if (ox >= wo) continue;
      for (int co = 0; co < cout; ++co) {
        acc += static_cast<double>(gi[co * oplane + static_cast<long>(oy) * wo + ox]) *
               w[(static_cast<long>(co) * cin + ci) * 9 + dy * 3 + dx];
      }
    }
  }
  return static_cast<float>(acc);
}

inline float conv_dw_cell(const float* x, const float* g, int n, int cin, int h, int wd,
                          int cout, int ho, int wo, int co, int ci, int dy, int dx, int stride) {
  double acc = 0.0;
  const long plane = static_cast<long>(h) * wd;
  const long oplane = static_cast<long>(ho) * wo;
  for (int img = 0; img < n; ++img) {
    const float* xc = x + (static_cast<long>(img) * cin + ci) * plane;
    const float* gc = g + (static_cast<long>(img) * cout + co) * oplane;
    for (int oy = 0; oy < ho; ++oy) {
      int iy = oy * stride + dy - 1;
      if (iy < 0 || iy >= h) continue;
      for (int ox = 0; ox < wo; ++ox) {
        int ix = ox * stride + dx - 1;
        if (ix < 0 || ix >= wd) continue;
        acc += static_cast<double>(gc[static_cast<long>(oy) * wo + ox]) *
               xc[static_cast<long>(iy) * wd + ix];
      }
    }
  }
  return static_cast<float>(acc);
}

inline void bn_channel_stats(const float* x, int n, int c, int h, int w, int ch,
                             double* mean, double* var) {
  const long plane = static_cast<long>(h) * w;
  const long count = static_cast<long>(n) * plane;
  double sum = 0.0, sumsq = 0.0;
  for (int img = 0; img < n; ++img) {
    const float* xc = x + (static_cast<long>(img) * c + ch) * plane;
    for (long i = 0; i < plane; ++i) {
      double v = xc[i];
      sum += v;
      sumsq += v * v;
    }
  }
  double m = sum / static_cast<double>(count);
  mean[ch] = m;
  var[ch] = sumsq / static_cast<double>(count) - m * m;
}

inline void bn_channel_normalize(const float* x, float* y, int n, int c, int h, int w, int ch,
                                 const double* mean, const double* var, double eps,
                                 const float* gamma, const float* beta) {
  const long plane = static_cast<long>(h) * w;
  const double inv = 1.0 / std::sqrt(var[ch] + eps);
  const double gm = gamma[ch], bt = beta[ch], mu = mean[ch];
  for (int img = 0; img < n; ++img) {
    const float* xc = x + (static_cast<long>(img) * c + ch) * plane;
    float* yc = y + (static_cast<long>(img) * c + ch) * plane;
    for (long i = 0; i < plane; ++i)
      yc[i] = static_cast<float>(gm * ((static_cast<double>(xc[i]) - mu) * inv) + bt);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// OpenMP variants
// ---------------------------------------------------------------------------

void matmul(const float* a, const float* b, float* y, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[static_cast<long>(i) * n + j] = matmul_cell(a, b, k, n, i, j);
}

void matmul_grad_a(const float* g, const float* b, float* da, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) da[static_cast<long>(i) * k + kk] += matmul_da_cell(g, b, k, n, i, kk);
}

void matmul_grad_b(const float* a, const float* g, float* db, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int kk = 0; kk < k; ++kk)
    for (int j = 0; j < n; ++j) db[static_cast<long>(kk) * n + j] += matmul_db_cell(a, g, m, k, n, kk, j);
}

void conv2d(const float* x, const float* w, float* y,
            int n, int cin, int h, int wd, int cout, int stride) {
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  const long oplane = static_cast<long>(ho) * wo;
#pragma omp parallel for collapse(2) schedule(static)
  for (int img = 0; img < n; ++img)
    for (int co = 0; co < cout; ++co) {
      float* yc = y + (static_cast<long>(img) * cout + co) * oplane;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          yc[static_cast<long>(oy) * wo + ox] = conv_cell(x, w, cin, h, wd, img, co, oy, ox, stride);
    }
}

void conv2d_grad_x(const float* g, const float* w, float* dx,
                   int n, int cin, int h, int wd, int cout, int stride) {
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  const long plane = static_cast<long>(h) * wd;
#pragma omp parallel for collapse(2) schedule(static)
  for (int img = 0; img < n; ++img)
    for (int ci = 0; ci < cin; ++ci) {
      float* dxc = dx + (static_cast<long>(img) * cin + ci) * plane;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix)
          dxc[static_cast<long>(iy) * wd + ix] +=
              conv_dx_cell(g, w, cin, cout, ho, wo, img, ci, iy, ix, stride);
    }
}

void conv2d_grad_w(const float* x, const float* g, float* dw,
                   int n, int cin, int h, int wd, int cout, int stride) {
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int dy = 0; dy < 3; ++dy)
        for (int dx2 = 0; dx2 < 3; ++dx2)
          dw[(static_cast<long>(co) * cin + ci) * 9 + dy * 3 + dx2] +=
              conv_dw_cell(x, g, n, cin, h, wd, cout, ho, wo, co, ci, dy, dx2, stride);
}

void bn_stats(const float* x, int n, int c, int h, int w, double* mean, double* var) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) bn_channel_stats(x, n, c, h, w, ch, mean, var);
}

void bn_normalize(const float* x, float* y, int n, int c, int h, int w,
                  const double* mean, const double* var, double eps,
                  const float* gamma, const float* beta) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch)
    bn_channel_normalize(x, y, n, c, h, w, ch, mean, var, eps, gamma, beta);
}

void relu(const float* x, float* y, long count) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_grad(const float* x, const float* g, float* dx, long count) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) dx[i] += x[i] > 0.0f ? g[i] : 0.0f;
}

void global_avg_pool(const float* x, float* y, int n, int c, int h, int w) {
  const long plane = static_cast<long>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const float* xc = x + (static_cast<long>(img) * c + ch) * plane;
      double acc = 0.0;
      for (long i = 0; i < plane; ++i) acc += xc[i];
      y[static_cast<long>(img) * c + ch] = static_cast<float>(acc / static_cast<double>(plane));
    }
}

void global_avg_pool_grad(const float* g, float* dx, int n, int c, int h, int w) {
  const long plane = static_cast<long>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const float gv = static_cast<float>(
          static_cast<double>(g[static_cast<long>(img) * c + ch]) / static_cast<double>(plane));
      float* dxc = dx + (static_cast<long>(img) * c + ch) * plane;
      for (long i = 0; i < plane; ++i) dxc[i] += gv;
    }
}

// ---------------------------------------------------------------------------
// Serial reference variants
// ---------------------------------------------------------------------------

namespace ref {

void matmul(const float* a, const float* b, float* y, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[static_cast<long>(i) * n + j] = matmul_cell(a, b, k, n, i, j);
}

void matmul_grad_a(const float* g, const float* b, float* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) da[static_cast<long>(i) * k + kk] += matmul_da_cell(g, b, k, n, i, kk);
}

void matmul_grad_b(const float* a, const float* g, float* db, int m, int k, int n) {
  for (int kk = 0; kk < k; ++kk)
    for (int j = 0; j < n; ++j) db[static_cast<long>(kk) * n + j] += matmul_db_cell(a, g, m, k, n, kk, j);
}

void conv2d(const float* x, const float* w, float* y,
            int n, int cin, int h, int wd, int cout, int stride) {
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  const long oplane = static_cast<long>(ho) * wo;
  for (int img = 0; img < n; ++img)
    for (int co = 0; co < cout; ++co) {
      float* yc = y + (static_cast<long>(img) * cout + co) * oplane;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          yc[static_cast<long>(oy) * wo + ox] = conv_cell(x, w, cin, h, wd, img, co, oy, ox, stride);
    }
}

void conv2d_grad_x(const float* g, const float* w, float* dx,
                   int n, int cin, int h, int wd, int cout, int stride) {
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  const long plane = static_cast<long>(h) * wd;
  for (int img = 0; img < n; ++img)
    for (int ci = 0; ci < cin; ++ci) {
      float* dxc = dx + (static_cast<long>(img) * cin + ci) * plane;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix)
          dxc[static_cast<long>(iy) * wd + ix] +=
              conv_dx_cell(g, w, cin, cout, ho, wo, img, ci, iy, ix, stride);
    }
}

void conv2d_grad_w(const float* x, const float* g, float* dw,
                   int n, int cin, int h, int wd, int cout, int stride) {
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int dy = 0; dy < 3; ++dy)
        for (int dx2 = 0; dx2 < 3; ++dx2)
          dw[(static_cast<long>(co) * cin + ci) * 9 + dy * 3 + dx2] +=
              conv_dw_cell(x, g, n, cin, h, wd, cout, ho, wo, co, ci, dy, dx2, stride);
}

void bn_stats(const float* x, int n, int c, int h, int w, double* mean, double* var) {
  for (int ch = 0; ch < c; ++ch) bn_channel_stats(x, n, c, h, w, ch, mean, var);
}

void bn_normalize(const float* x, float* y, int n, int c, int h, int w,
                  const double* mean, const double* var, double eps,
                  const float* gamma, const float* beta) {
  for (int ch = 0; ch < c; ++ch)
    bn_channel_normalize(x, y, n, c, h, w, ch, mean, var, eps, gamma, beta);
}

void relu(const float* x, float* y, long count) {
  for (long i = 0; i < count; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_grad(const float* x, const float* g, float* dx, long count) {
  for (long i = 0; i < count; ++i) dx[i] += x[i] > 0.0f ? g[i] : 0.0f;
}

void global_avg_pool(const float* x, float* y, int n, int c, int h, int w) {
  const long plane = static_cast<long>(h) * w;
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const float* xc = x + (static_cast<long>(img) * c + ch) * plane;
      double acc = 0.0;
      for (long i = 0; i < plane; ++i) acc += xc[i];
      y[static_cast<long>(img) * c + ch] = static_cast<float>(acc / static_cast<double>(plane));
    }
}

void global_avg_pool_grad(const float* g, float* dx, int n, int c, int h, int w) {
  const long plane = static_cast<long>(h) * w;
  for (int img = 0; img < n; ++img)
    for (int ch = 0; ch < c; ++ch) {
      const float gv = static_cast<float>(
          static_cast<double>(g[static_cast<long>(img) * c + ch]) / static_cast<double>(plane));
      float* dxc = dx + (static_cast<long>(img) * c + ch) * plane;
      for (long i = 0; i < plane; ++i) dxc[i] += gv;
    }
}

}  // namespace ref

}  // namespace crld::kernels
