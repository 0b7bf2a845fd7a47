#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crld/error.hpp"

namespace crld {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense float32 array with an optional same-shape gradient buffer.
// Values are immutable by convention once an op has produced them; the
// gradient buffer is filled in by Tape::backward.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until backward touches this tensor
  bool requires_grad = false;

  static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr full(std::vector<int> shape, float value);
  static TensorPtr from(std::vector<int> shape, std::vector<float> values,
                        bool requires_grad = false);
  static TensorPtr scalar(float value);

  long numel() const;
  float item() const;  // scalar tensors only
  bool is_scalar() const { return numel() == 1; }

  // Allocates a zero gradient buffer if absent.
  void ensure_grad();
  bool has_grad() const { return !grad.empty(); }
  void clear_grad() { grad.clear(); }

  // Throws ValueError naming `what` if any element is NaN or infinite.
  void check_finite(const std::string& what) const;
};

long numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape. Ops append adjoint closures during the forward pass;
// backward replays them in exact reverse order, once.
class Tape {
 public:
  void record(std::function<void()> adjoint) { records_.push_back(std::move(adjoint)); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Errors on non-scalar loss or
  // on a second call without re-recording.
  void backward(const TensorPtr& loss);

  // Backward from an arbitrary tensor with an explicit output gradient.
  void backward_from(const TensorPtr& out, std::span<const float> out_grad);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
};

enum class Mode { train, eval };

// Learnable scale/shift plus running statistics of one batchnorm layer.
struct BatchNormState {
  TensorPtr gamma;         // [c]
  TensorPtr beta;          // [c]
  TensorPtr running_mean;  // [c], never requires grad
  TensorPtr running_var;   // [c]
  float eps = 1e-5f;
  float momentum = 0.1f;

  static BatchNormState init(int channels);
};

// --- ops -------------------------------------------------------------------
// Every op takes the tape first; pass nullptr to run inference-only (no
// closure is recorded and the output does not require grad).

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& w, int stride);
TensorPtr batchnorm(Tape* tape, const TensorPtr& x, BatchNormState& bn, Mode mode);
TensorPtr relu(Tape* tape, const TensorPtr& x);
// x: [b x c], bias: [c]; adds bias to every row.
TensorPtr add_rowwise(Tape* tape, const TensorPtr& x, const TensorPtr& bias);
TensorPtr global_avg_pool(Tape* tape, const TensorPtr& x);
// Same data, new shape; numel must match.
TensorPtr reshape(Tape* tape, const TensorPtr& x, std::vector<int> shape);

// Row-wise softmax with temperature; stable via max subtraction.
TensorPtr softmax_t(Tape* tape, const TensorPtr& logits, float temperature);

// Mean over the batch of -log softmax(logits)[label]. `value_out`, when
// given, receives the loss in full double precision.
TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, std::span<const int> labels,
                        double* value_out = nullptr);

// Temperature-scaled KL divergence KL(softmax_T(teacher) || softmax_T(student))
// summed over mask-selected rows, times T^2, divided by the full batch size.
// The teacher side is a constant: no gradient ever flows to it. Masked-out
// rows contribute exactly zero to both value and gradient.
TensorPtr kld(Tape* tape, const TensorPtr& student_logits, const TensorPtr& teacher_logits,
              float temperature, std::span<const uint8_t> mask, double* value_out = nullptr);

// Per-row mean squared error against a constant target, masked and divided
// by the full batch size (same normalization as kld).
TensorPtr masked_mse(Tape* tape, const TensorPtr& pred, const TensorPtr& target,
                     std::span<const uint8_t> mask, double* value_out = nullptr);

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);  // same shape
TensorPtr scale(Tape* tape, const TensorPtr& a, float c);
TensorPtr sum(Tape* tape, const TensorPtr& a);  // -> scalar

}  // namespace crld
