#include "tensor.hpp"

#include <cmath>
#include <sstream>

#include "error.hpp"

namespace trust {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
  impl_->data.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (has_grad()) {
    return impl_->grad;
  }
  return std::vector<double>(size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, impl_->data);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

void Tape::record(std::shared_ptr<TensorImpl> out, BackwardFn fn) {
  entries_.push_back(Entry{std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const auto& root = loss.impl();
  bool recorded = false;
  for (auto& e : entries_) {
    e.out->grad.clear();
    recorded = recorded || e.out == root;
  }
  if (!recorded && !root->requires_grad) {
    throw ContractError("backward() on a loss that was not produced through the tape");
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) {
      continue;
    }
    it->fn(*it->out);
  }
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

}  // namespace trust
