#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kanite {

class KaniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or width mismatch between operands.
class ShapeError : public KaniteError {
 public:
  using KaniteError::KaniteError;
};

// Input outside an operation's mathematical domain (log of non-positive,
// division by zero, index out of range). Messages carry the offending index.
class DomainError : public KaniteError {
 public:
  using KaniteError::KaniteError;
};

// An operation produced NaN or Inf.
class NonFiniteError : public KaniteError {
 public:
  using KaniteError::KaniteError;
};

class DataError : public KaniteError {
 public:
  using KaniteError::KaniteError;
};

class TrainingError : public KaniteError {
 public:
  using KaniteError::KaniteError;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class Tape;

// Dense float64 array with row-major layout and an optional gradient buffer.
// Copies are shallow: two Tensor handles may share the same storage, which is
// what lets tape closures and optimizer registries see parameter updates.
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const Tape* tape = nullptr;  // tape that recorded this tensor, if any
  };

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> value, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->value.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  // 2-d helpers
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& values() const { return impl_->value; }
  std::vector<double>& values() { return impl_->value; }
  double operator[](std::size_t i) const { return impl_->value[i]; }
  double& operator[](std::size_t i) { return impl_->value[i]; }
  double at(std::size_t r, std::size_t c) const;
  double& at(std::size_t r, std::size_t c);
  double item() const;  // value of a one-element tensor

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void ensure_grad();
  void zero_grad();

  // Value-equal tensor with no gradient path.
  Tensor detach() const;

  const Tape* tape() const { return impl_->tape; }
  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Ordered record of executed primitives for one forward pass.  Constructing a
// Tape makes it the active recording target for the current thread; ops record
// a backward closure when any input requires grad.  backward() replays the
// record in reverse creation order, so every node runs after all its
// consumers.  Non-leaf gradients are reset before each replay; leaf gradients
// accumulate across calls until zeroed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const Tensor& output, std::function<void()> backward);
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<Tensor::Impl> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace kanite
