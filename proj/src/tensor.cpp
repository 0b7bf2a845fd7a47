#include "crld/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crld/kernels.hpp"

namespace crld {

long numel_of(const std::vector<int>& shape) {
  long n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  for (int e : shape)
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(numel_of(t->shape), 0.0f);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::full(std::vector<int> shape, float value) {
  auto t = zeros(std::move(shape));
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  if (numel_of(t->shape) != static_cast<long>(values.size()))
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(t->shape));
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::scalar(float value) { return from({1}, {value}); }

long Tensor::numel() const { return numel_of(shape); }

float Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
  return data[0];
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
}

void Tensor::check_finite(const std::string& what) const {
  for (float v : data)
    if (!std::isfinite(v)) throw ValueError(what + " contains a non-finite value");
}

void Tape::backward(const TensorPtr& loss) {
  if (!loss->is_scalar())
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss->shape));
  float one = 1.0f;
  backward_from(loss, std::span<const float>(&one, 1));
}

void Tape::backward_from(const TensorPtr& out, std::span<const float> out_grad) {
  if (consumed_) throw ValueError("backward called twice on the same tape");
  if (static_cast<long>(out_grad.size()) != out->numel())
    throw ShapeError("output gradient size does not match tensor");
  out->ensure_grad();
  for (std::size_t i = 0; i < out_grad.size(); ++i) out->grad[i] += out_grad[i];
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  consumed_ = true;
}

BatchNormState BatchNormState::init(int channels) {
  BatchNormState bn;
  bn.gamma = Tensor::full({channels}, 1.0f);
  bn.gamma->requires_grad = true;
  bn.beta = Tensor::zeros({channels}, true);
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::full({channels}, 1.0f);
  return bn;
}

namespace {

bool track(Tape* tape, std::initializer_list<TensorPtr> inputs) {
  if (!tape) return false;
  for (const auto& t : inputs)
    if (t && t->requires_grad) return true;
  return false;
}

void require_2d(const TensorPtr& t, const char* name) {
  if (t->shape.size() != 2)
    throw ShapeError(std::string(name) + " must be 2-D, got " + shape_str(t->shape));
}

}  // namespace

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  require_2d(a, "matmul lhs");
  require_2d(b, "matmul rhs");
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  if (b->shape[0] != k)
    throw ShapeError("matmul inner extents differ: " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  auto y = Tensor::zeros({m, n});
  kernels::matmul(a->data.data(), b->data.data(), y->data.data(), m, k, n);
  if (track(tape, {a, b})) {
    y->requires_grad = true;
    tape->record([a, b, y, m, k, n] {
      if (!y->has_grad()) return;
      if (a->requires_grad) {
        a->ensure_grad();
        kernels::matmul_grad_a(y->grad.data(), b->data.data(), a->grad.data(), m, k, n);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        kernels::matmul_grad_b(a->data.data(), y->grad.data(), b->grad.data(), m, k, n);
      }
    });
  }
  return y;
}

TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& w, int stride) {
  if (x->shape.size() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(x->shape));
  if (w->shape.size() != 4 || w->shape[2] != 3 || w->shape[3] != 3)
    throw ShapeError("conv2d weight must be [K x C x 3 x 3], got " + shape_str(w->shape));
  if (stride != 1 && stride != 2) throw ValueError("conv2d stride must be 1 or 2");
  const int n = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3];
  const int cout = w->shape[0];
  if (w->shape[1] != cin)
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) +
                     ", weight expects " + std::to_string(w->shape[1]));
  const int ho = kernels::conv_out_extent(h, stride), wo = kernels::conv_out_extent(wd, stride);
  auto y = Tensor::zeros({n, cout, ho, wo});
  kernels::conv2d(x->data.data(), w->data.data(), y->data.data(), n, cin, h, wd, cout, stride);
  if (track(tape, {x, w})) {
    y->requires_grad = true;
    tape->record([x, w, y, n, cin, h, wd, cout, stride] {
      if (!y->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        kernels::conv2d_grad_x(y->grad.data(), w->data.data(), x->grad.data(), n, cin, h, wd,
                               cout, stride);
      }
      if (w->requires_grad) {
        w->ensure_grad();
        kernels::conv2d_grad_w(x->data.data(), y->grad.data(), w->grad.data(), n, cin, h, wd,
                               cout, stride);
      }
    });
  }
  return y;
}

TensorPtr batchnorm(Tape* tape, const TensorPtr& x, BatchNormState& bn, Mode mode) {
  if (x->shape.size() != 4)
    throw ShapeError("batchnorm input must be NCHW, got " + shape_str(x->shape));
  const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (bn.gamma->shape[0] != c)
    throw ShapeError("batchnorm channel mismatch: input has " + std::to_string(c) +
                     " channels, state has " + std::to_string(bn.gamma->shape[0]));
  const long count = static_cast<long>(n) * h * w;

  std::vector<double> mean(c), var(c);
  if (mode == Mode::train) {
    if (count < 2) throw ValueError("batchnorm train mode needs at least 2 values per channel");
    kernels::bn_stats(x->data.data(), n, c, h, w, mean.data(), var.data());
    // Running update: biased variance normalizes the batch, the unbiased
    // estimate feeds the running average.
    const double mom = bn.momentum;
    for (int ch = 0; ch < c; ++ch) {
      double unbiased = var[ch] * static_cast<double>(count) / static_cast<double>(count - 1);
      bn.running_mean->data[ch] =
          static_cast<float>((1.0 - mom) * bn.running_mean->data[ch] + mom * mean[ch]);
      bn.running_var->data[ch] =
          static_cast<float>((1.0 - mom) * bn.running_var->data[ch] + mom * unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = bn.running_mean->data[ch];
      var[ch] = bn.running_var->data[ch];
    }
  }

  auto y = Tensor::zeros(x->shape);
  kernels::bn_normalize(x->data.data(), y->data.data(), n, c, h, w, mean.data(), var.data(),
                        bn.eps, bn.gamma->data.data(), bn.beta->data.data());

  if (track(tape, {x, bn.gamma, bn.beta})) {
    y->requires_grad = true;
    auto gamma = bn.gamma;
    auto beta = bn.beta;
    const double eps = bn.eps;
    const bool through_stats = (mode == Mode::train);
    tape->record([x, y, gamma, beta, mean, var, eps, through_stats, n, c, h, w, count] {
      if (!y->has_grad()) return;
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      const long plane = static_cast<long>(h) * w;
#pragma omp parallel for schedule(static)
      for (int ch = 0; ch < c; ++ch) {
        const double inv = 1.0 / std::sqrt(var[ch] + eps);
        const double mu = mean[ch];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int img = 0; img < n; ++img) {
          const long base = (static_cast<long>(img) * c + ch) * plane;
          for (long i = 0; i < plane; ++i) {
            const double g = y->grad[base + i];
            const double xh = (static_cast<double>(x->data[base + i]) - mu) * inv;
            sum_g += g;
            sum_gx += g * xh;
          }
        }
        if (gamma->requires_grad) gamma->grad[ch] += static_cast<float>(sum_gx);
        if (beta->requires_grad) beta->grad[ch] += static_cast<float>(sum_g);
        if (x->requires_grad) {
          const double gm = gamma->data[ch];
          const double mean_g = sum_g / static_cast<double>(count);
          const double mean_gx = sum_gx / static_cast<double>(count);
          for (int img = 0; img < n; ++img) {
            const long base = (static_cast<long>(img) * c + ch) * plane;
            for (long i = 0; i < plane; ++i) {
              const double g = y->grad[base + i];
              const double xh = (static_cast<double>(x->data[base + i]) - mu) * inv;
              double d = through_stats ? gm * inv * (g - mean_g - xh * mean_gx) : gm * inv * g;
              x->grad[base + i] += static_cast<float>(d);
            }
          }
        }
      }
    });
  }
  return y;
}

TensorPtr relu(Tape* tape, const TensorPtr& x) {
  auto y = Tensor::zeros(x->shape);
  kernels::relu(x->data.data(), y->data.data(), x->numel());
  if (track(tape, {x})) {
    y->requires_grad = true;
    tape->record([x, y] {
      if (!y->has_grad() || !x->requires_grad) return;
      x->ensure_grad();
      kernels::relu_grad(x->data.data(), y->grad.data(), x->grad.data(), x->numel());
    });
  }
  return y;
}

TensorPtr add_rowwise(Tape* tape, const TensorPtr& x, const TensorPtr& bias) {
  require_2d(x, "add_rowwise input");
  const int b = x->shape[0], c = x->shape[1];
  if (bias->shape.size() != 1 || bias->shape[0] != c)
    throw ShapeError("bias shape " + shape_str(bias->shape) + " does not match row width " +
                     std::to_string(c));
  auto y = Tensor::zeros(x->shape);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j) y->data[static_cast<long>(i) * c + j] = x->data[static_cast<long>(i) * c + j] + bias->data[j];
  if (track(tape, {x, bias})) {
    y->requires_grad = true;
    tape->record([x, bias, y, b, c] {
      if (!y->has_grad()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        for (long i = 0; i < static_cast<long>(b) * c; ++i) x->grad[i] += y->grad[i];
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int i = 0; i < b; ++i) acc += y->grad[static_cast<long>(i) * c + j];
          bias->grad[j] += static_cast<float>(acc);
        }
      }
    });
  }
  return y;
}

TensorPtr global_avg_pool(Tape* tape, const TensorPtr& x) {
  if (x->shape.size() != 4)
    throw ShapeError("global_avg_pool input must be NCHW, got " + shape_str(x->shape));
  const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  auto y = Tensor::zeros({n, c});
  kernels::global_avg_pool(x->data.data(), y->data.data(), n, c, h, w);
  if (track(tape, {x})) {
    y->requires_grad = true;
    tape->record([x, y, n, c, h, w] {
      if (!y->has_grad() || !x->requires_grad) return;
      x->ensure_grad();
      kernels::global_avg_pool_grad(y->grad.data(), x->grad.data(), n, c, h, w);
    });
  }
  return y;
}

TensorPtr reshape(Tape* tape, const TensorPtr& x, std::vector<int> shape) {
  if (numel_of(shape) != x->numel())
    throw ShapeError("reshape from " + shape_str(x->shape) + " to " + shape_str(shape) +
                     " changes element count");
  auto y = Tensor::from(std::move(shape), x->data);
  if (track(tape, {x})) {
    y->requires_grad = true;
    tape->record([x, y] {
      if (!y->has_grad() || !x->requires_grad) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += y->grad[i];
    });
  }
  return y;
}

namespace {

// Row max, then log-sum-exp of (z - max) / T, all in double.
void row_softmax_t(const float* z, int c, double temperature, double* probs) {
  double m = z[0];
  for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(z[j]));
  double s = 0.0;
  for (int j = 0; j < c; ++j) {
    probs[j] = std::exp((static_cast<double>(z[j]) - m) / temperature);
    s += probs[j];
  }
  for (int j = 0; j < c; ++j) probs[j] /= s;
}

double row_logsumexp_t(const float* z, int c, double temperature) {
  double m = z[0];
  for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(z[j]));
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += std::exp((static_cast<double>(z[j]) - m) / temperature);
  return std::log(s);  // caller re-adds (z - m) / T terms as needed
}

}  // namespace

TensorPtr softmax_t(Tape* tape, const TensorPtr& logits, float temperature) {
  if (temperature <= 0.0f) throw ValueError("softmax temperature must be positive");
  require_2d(logits, "softmax_t logits");
  const int b = logits->shape[0], c = logits->shape[1];
  auto y = Tensor::zeros(logits->shape);
  std::vector<double> row(c);
  for (int i = 0; i < b; ++i) {
    row_softmax_t(logits->data.data() + static_cast<long>(i) * c, c, temperature, row.data());
    for (int j = 0; j < c; ++j) y->data[static_cast<long>(i) * c + j] = static_cast<float>(row[j]);
  }
  if (track(tape, {logits})) {
    y->requires_grad = true;
    const double t = temperature;
    tape->record([logits, y, b, c, t] {
      if (!y->has_grad() || !logits->requires_grad) return;
      logits->ensure_grad();
      for (int i = 0; i < b; ++i) {
        const long base = static_cast<long>(i) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += static_cast<double>(y->grad[base + j]) * y->data[base + j];
        for (int j = 0; j < c; ++j) {
          double p = y->data[base + j];
          logits->grad[base + j] +=
              static_cast<float>(p * (static_cast<double>(y->grad[base + j]) - dot) / t);
        }
      }
    });
  }
  return y;
}

TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, std::span<const int> labels,
                        double* value_out) {
  require_2d(logits, "cross_entropy logits");
  const int b = logits->shape[0], c = logits->shape[1];
  if (static_cast<int>(labels.size()) != b)
    throw ShapeError("cross_entropy got " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(b));
  for (int i = 0; i < b; ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw ValueError("label " + std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(c) + ")");
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const float* z = logits->data.data() + static_cast<long>(i) * c;
    double m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(z[j]));
    double lse = m + row_logsumexp_t(z, c, 1.0);
    total += lse - static_cast<double>(z[labels[i]]);
  }
  total /= static_cast<double>(b);
  if (value_out) *value_out = total;
  auto y = Tensor::scalar(static_cast<float>(total));
  if (track(tape, {logits})) {
    y->requires_grad = true;
    std::vector<int> lab(labels.begin(), labels.end());
    tape->record([logits, y, lab, b, c] {
      if (!y->has_grad() || !logits->requires_grad) return;
      logits->ensure_grad();
      const double go = y->grad[0];
      std::vector<double> probs(c);
      for (int i = 0; i < b; ++i) {
        const long base = static_cast<long>(i) * c;
        row_softmax_t(logits->data.data() + base, c, 1.0, probs.data());
        for (int j = 0; j < c; ++j) {
          double d = probs[j] - (j == lab[i] ? 1.0 : 0.0);
          logits->grad[base + j] += static_cast<float>(go * d / static_cast<double>(b));
        }
      }
    });
  }
  return y;
}

TensorPtr kld(Tape* tape, const TensorPtr& student_logits, const TensorPtr& teacher_logits,
              float temperature, std::span<const uint8_t> mask, double* value_out) {
  if (temperature <= 0.0f) throw ValueError("kld temperature must be positive");
  require_2d(student_logits, "kld student logits");
  require_2d(teacher_logits, "kld teacher logits");
  if (student_logits->shape != teacher_logits->shape)
    throw ShapeError("kld shape mismatch: " + shape_str(student_logits->shape) + " vs " +
                     shape_str(teacher_logits->shape));
  const int b = student_logits->shape[0], c = student_logits->shape[1];
  if (static_cast<int>(mask.size()) != b)
    throw ShapeError("kld mask length " + std::to_string(mask.size()) + " for batch " +
                     std::to_string(b));
  const double t = temperature;
  double total = 0.0;
  std::vector<double> p(c), q(c);
  for (int i = 0; i < b; ++i) {
    if (!mask[i]) continue;
    const long base = static_cast<long>(i) * c;
    row_softmax_t(teacher_logits->data.data() + base, c, t, p.data());
    row_softmax_t(student_logits->data.data() + base, c, t, q.data());
    double kl = 0.0;
    for (int j = 0; j < c; ++j)
      if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(q[j]));
    total += kl;
  }
  total = total * t * t / static_cast<double>(b);
  if (value_out) *value_out = total;
  auto y = Tensor::scalar(static_cast<float>(total));
  if (track(tape, {student_logits})) {
    y->requires_grad = true;
    std::vector<uint8_t> m(mask.begin(), mask.end());
    tape->record([student_logits, teacher_logits, y, m, b, c, t] {
      if (!y->has_grad() || !student_logits->requires_grad) return;
      student_logits->ensure_grad();
      const double go = y->grad[0];
      std::vector<double> p(c), q(c);
      for (int i = 0; i < b; ++i) {
        if (!m[i]) continue;
        const long base = static_cast<long>(i) * c;
        row_softmax_t(teacher_logits->data.data() + base, c, t, p.data());
        row_softmax_t(student_logits->data.data() + base, c, t, q.data());
        for (int j = 0; j < c; ++j) {
          double d = go * t * (q[j] - p[j]) / static_cast<double>(b);
          student_logits->grad[base + j] += static_cast<float>(d);
        }
      }
    });
  }
  return y;
}

TensorPtr masked_mse(Tape* tape, const TensorPtr& pred, const TensorPtr& target,
                     std::span<const uint8_t> mask, double* value_out) {
  require_2d(pred, "masked_mse prediction");
  require_2d(target, "masked_mse target");
  if (pred->shape != target->shape)
    throw ShapeError("masked_mse shape mismatch: " + shape_str(pred->shape) + " vs " +
                     shape_str(target->shape));
  const int b = pred->shape[0], d = pred->shape[1];
  if (static_cast<int>(mask.size()) != b)
    throw ShapeError("masked_mse mask length " + std::to_string(mask.size()) + " for batch " +
                     std::to_string(b));
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    if (!mask[i]) continue;
    const long base = static_cast<long>(i) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = static_cast<double>(pred->data[base + j]) - target->data[base + j];
      acc += diff * diff;
    }
    total += acc / static_cast<double>(d);
  }
  total /= static_cast<double>(b);
  if (value_out) *value_out = total;
  auto y = Tensor::scalar(static_cast<float>(total));
  if (track(tape, {pred, target})) {
    y->requires_grad = true;
    std::vector<uint8_t> m(mask.begin(), mask.end());
    tape->record([pred, target, y, m, b, d] {
      if (!y->has_grad()) return;
      const double go = y->grad[0];
      const double scl = 2.0 / (static_cast<double>(b) * d);
      if (pred->requires_grad) pred->ensure_grad();
      if (target->requires_grad) target->ensure_grad();
      for (int i = 0; i < b; ++i) {
        if (!m[i]) continue;
        const long base = static_cast<long>(i) * d;
        for (int j = 0; j < d; ++j) {
          double diff = static_cast<double>(pred->data[base + j]) - target->data[base + j];
          float dd = static_cast<float>(go * scl * diff);
          if (pred->requires_grad) pred->grad[base + j] += dd;
          if (target->requires_grad) target->grad[base + j] -= dd;
        }
      }
    });
  }
  return y;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape)
    throw ShapeError("add shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto y = Tensor::zeros(a->shape);
  for (std::size_t i = 0; i < y->data.size(); ++i) y->data[i] = a->data[i] + b->data[i];
  if (track(tape, {a, b})) {
    y->requires_grad = true;
    tape->record([a, b, y] {
      if (!y->has_grad()) return;
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) b->grad[i] += y->grad[i];
      }
    });
  }
  return y;
}

TensorPtr scale(Tape* tape, const TensorPtr& a, float c) {
  auto y = Tensor::zeros(a->shape);
  for (std::size_t i = 0; i < y->data.size(); ++i) y->data[i] = a->data[i] * c;
  if (track(tape, {a})) {
    y->requires_grad = true;
    tape->record([a, y, c] {
      if (!y->has_grad() || !a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i] * c;
    });
  }
  return y;
}

TensorPtr sum(Tape* tape, const TensorPtr& a) {
  double acc = 0.0;
  for (float v : a->data) acc += v;
  auto y = Tensor::scalar(static_cast<float>(acc));
  if (track(tape, {a})) {
    y->requires_grad = true;
    tape->record([a, y] {
      if (!y->has_grad() || !a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += y->grad[0];
    });
  }
  return y;
}

}  // namespace crld
