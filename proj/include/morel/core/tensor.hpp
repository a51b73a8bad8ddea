#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace morel {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major n-d array. Plain storage; all arithmetic lives in the
/// kernel layer and the autodiff ops built on it.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-d accessor; rows x cols with row-major layout
  T& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_.back() + c)]; }
  const T& at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_.back() + c)]; }

  int64_t rows() const { return rank() == 2 ? shape_[0] : throw_not2d(); }
  int64_t cols() const { return rank() == 2 ? shape_[1] : throw_not2d(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s) + " changes element count");
    Tensor out;
    out.shape_ = std::move(s);
    out.data_ = data_;
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  [[noreturn]] int64_t throw_not2d() const { throw std::logic_error("tensor is not 2-d: " + shape_str(shape_)); }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace morel
