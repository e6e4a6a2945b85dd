#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trust {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) {
      grad.assign(data.size(), 0.0);
    }
    return grad;
  }
};

/// Dense row-major f64 array. Copies share storage (handle semantics, as the
/// tape needs stable identities); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  /// Gradient buffer; zeros if no backward pass has reached this tensor.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Define-by-run record of differentiable operations. Operations are appended
/// in execution order; backward() replays them in exact reverse order.
class Tape {
 public:
  using BackwardFn = std::function<void(const TensorImpl& out)>;

  void record(std::shared_ptr<TensorImpl> out, BackwardFn fn);
  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// requires_grad leaf. Intermediate gradients are reset first, so repeated
  /// calls accumulate on leaves only.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Tape that receives operations on the current thread, or nullptr.
Tape* active_tape();

/// Makes `tape` the recording tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace trust
