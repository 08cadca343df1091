#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace udepth {

// Dense row-major float32 array. The buffer is filled at construction and
// treated as immutable afterwards, so tensors can be shared across threads
// and copied cheaply (the buffer is refcounted, never aliased for writing
// after it escapes the constructor).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);                       // zero-filled
  Tensor(std::vector<int> shape, std::vector<float> values);

  static Tensor full(std::vector<int> shape, float value);
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor ones(std::vector<int> shape) { return full(std::move(shape), 1.f); }
  static Tensor scalar(float value) { return full({1}, value); }

  bool empty() const { return buf_ == nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::int64_t size() const { return size_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  const float* data() const { return buf_->data(); }
  float* data() { return buf_->data(); }

  float operator[](std::int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }
  float& operator[](std::int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }

  // NCHW accessors; lower-rank tensors use the leading indices.
  float at4(int n, int c, int h, int w) const;
  std::int64_t index4(int n, int c, int h, int w) const;

  float item() const;              // size-1 tensors only
  Tensor clone() const;            // deep copy
  bool all_finite() const;

  bool requires_grad = false;

 private:
  std::vector<int> shape_;
  std::int64_t size_ = 0;
  std::shared_ptr<std::vector<float>> buf_;
};

std::int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Named trainable tensor. grad is empty until a backward pass fills it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

}  // namespace udepth
