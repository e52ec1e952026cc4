#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "webformer/errors.hpp"

namespace webformer::num {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor. Rank 1 tensors behave as a single row when viewed
/// as a matrix.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0)) : Tensor(Shape{rows, cols}, fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match " + shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }
  std::size_t rows() const { return shape_.size() >= 2 ? shape_size(Shape(shape_.begin(), shape_.end() - 1)) : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T> storage() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  MatrixMap<T> mat() {
    return MatrixMap<T>(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap<T> mat() const {
    return ConstMatrixMap<T>(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  // Aligned so Eigen's vectorized reductions split the same way on every
  // allocation; with malloc alignment, sums could differ run to run in the last bit.
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // Adam first moment
  Tensor<T> v;  // Adam second moment
};

/// Named parameters in registration order. Registration order is the
/// checkpoint order. Storage is a deque so references from `add` stay valid.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& o) : params_(o.params_), index_(o.index_), step_(o.step_) {}
  ParamStore& operator=(const ParamStore& o) {
    params_ = o.params_;
    index_ = o.index_;
    step_ = o.step_;
    return *this;
  }

  Param<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Param<T> p;
    p.name = name;
    p.grad = Tensor<T>(value.shape());
    p.m = Tensor<T>(value.shape());
    p.v = Tensor<T>(value.shape());
    p.value = std::move(value);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Param<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Param<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  std::deque<Param<T>>& params() { return params_; }
  const std::deque<Param<T>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.zero();
  }

  long long& step() { return step_; }
  long long step() const { return step_; }

  /// Same names and shapes, values converted to another precision.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::deque<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
  long long step_ = 0;
};

}  // namespace webformer::num
