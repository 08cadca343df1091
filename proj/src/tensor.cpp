#include "udepth/tensor.hpp"

#include <cmath>
#include <sstream>

#include "udepth/error.hpp"

namespace udepth {

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      size_(shape_size(shape_)),
      buf_(std::make_shared<std::vector<float>>(static_cast<size_t>(size_), 0.f)) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), size_(shape_size(shape_)) {
  if (static_cast<std::int64_t>(values.size()) != size_)
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
  buf_ = std::make_shared<std::vector<float>>(std::move(values));
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.buf_->begin(), t.buf_->end(), value);
  return t;
}

std::int64_t Tensor::index4(int n, int c, int h, int w) const {
  const int r = rank();
  std::int64_t idx = 0;
  const int nd[4] = {n, c, h, w};
  for (int i = 0; i < r; ++i) idx = idx * shape_[static_cast<size_t>(i)] + nd[i];
  return idx;
}

float Tensor::at4(int n, int c, int h, int w) const { return (*buf_)[static_cast<size_t>(index4(n, c, h, w))]; }

float Tensor::item() const {
  if (size_ != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return (*buf_)[0];
}

Tensor Tensor::clone() const {
  if (empty()) return Tensor();
  Tensor t(shape_, *buf_);
  t.requires_grad = requires_grad;
  return t;
}

bool Tensor::all_finite() const {
  if (empty()) return true;
  for (float v : *buf_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace udepth
