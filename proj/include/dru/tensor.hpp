#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dru/config.hpp"
#include "dru/errors.hpp"

namespace dru {

// (batch, channel, height, width)
struct Shape4 {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense row-major 4-D array, layout (n, c, h, w). The universal value type of
// the engine; every feature map, weight and gradient is one of these.
class Tensor4 {
 public:
  Tensor4() : shape_{1, 1, 1, 1}, data_(1, real_t(0)) {}
  explicit Tensor4(Shape4 s);
  Tensor4(Shape4 s, real_t fill);
  Tensor4(Shape4 s, std::vector<real_t> values);

  const Shape4& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }
  std::int64_t n() const { return shape_.n; }
  std::int64_t c() const { return shape_.c; }
  std::int64_t h() const { return shape_.h; }
  std::int64_t w() const { return shape_.w; }

  real_t* data() { return data_.data(); }
  const real_t* data() const { return data_.data(); }

  real_t& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  real_t at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  // pointer to one (h, w) plane
  real_t* plane(std::int64_t n, std::int64_t c) {
    return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w;
  }
  const real_t* plane(std::int64_t n, std::int64_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w;
  }

  void fill(real_t v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(real_t(0)); }

  bool same_shape(const Tensor4& o) const { return shape_ == o.shape_; }

 private:
  Shape4 shape_;
  std::vector<real_t> data_;
};

// Integer class-label map over (n, h, w); argmax output and CE loss target.
struct LabelMap {
  std::int64_t n = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;
  std::vector<std::int32_t> v;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_)
      : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_ * h_ * w_), 0) {}

  std::int64_t numel() const { return n * h * w; }
  std::int32_t& at(std::int64_t ni, std::int64_t hi, std::int64_t wi) {
    return v[(ni * h + hi) * w + wi];
  }
  std::int32_t at(std::int64_t ni, std::int64_t hi, std::int64_t wi) const {
    return v[(ni * h + hi) * w + wi];
  }
};

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op);

}  // namespace dru
