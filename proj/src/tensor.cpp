#include "kanite/tensor.hpp"

#include <cmath>
#include <sstream>

namespace kanite {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(value.size()) + " values");
  }
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!std::isfinite(value[i])) {
      throw NonFiniteError("tensor: non-finite value at flat index " +
                           std::to_string(i));
    }
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->value = std::move(value);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev > 0 ? stddev : 1.0);
  std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = stddev > 0 ? dist(rng) : 0.0;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows,
                         bool requires_grad) {
  if (rows.empty()) throw ShapeError("from_rows: no rows");
  std::size_t c = rows[0].size();
  std::vector<double> v;
  v.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw ShapeError("from_rows: ragged rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), c}, std::move(v), requires_grad);
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-d");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-d");
  return impl_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->value[r * cols() + c];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return impl_->value[r * cols() + c];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item(): tensor has " + std::to_string(numel()) +
                     " elements");
  }
  return impl_->value[0];
}

std::vector<double>& Tensor::grad() {
  ensure_grad();
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw KaniteError("grad(): gradient buffer not populated");
  }
  return impl_->grad;
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t(impl_->shape, impl_->value, false);
  return t;
}

namespace {
thread_local std::vector<Tape*> g_tape_stack;
}

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) {
    g_tape_stack.pop_back();
  }
}

Tape* Tape::active() {
  return g_tape_stack.empty() ? nullptr : g_tape_stack.back();
}

void Tape::record(const Tensor& output, std::function<void()> backward) {
  auto impl = output.impl();
  impl->tape = this;
  nodes_.push_back(Node{impl, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw KaniteError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  }
  if (loss.tape() != this) {
    throw KaniteError(
        "backward: loss is detached (not recorded on this tape)");
  }
  // Non-leaf grads are per-replay scratch; leaves accumulate across calls.
  for (auto& node : nodes_) {
    node.out->grad.assign(node.out->value.size(), 0.0);
  }
  loss.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
  }
}

}  // namespace kanite
