#include "dru/tensor.hpp"

#include <sstream>

namespace dru {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace {
void check_dims(const Shape4& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError("Tensor4: all dims must be >= 1, got " + s.str());
  }
}
}  // namespace

Tensor4::Tensor4(Shape4 s) : shape_(s) {
  check_dims(s);
  data_.assign(static_cast<std::size_t>(s.numel()), real_t(0));
}

Tensor4::Tensor4(Shape4 s, real_t fill) : shape_(s) {
  check_dims(s);
  data_.assign(static_cast<std::size_t>(s.numel()), fill);
}

Tensor4::Tensor4(Shape4 s, std::vector<real_t> values) : shape_(s), data_(std::move(values)) {
  check_dims(s);
  if (static_cast<std::int64_t>(data_.size()) != s.numel()) {
    throw ShapeError("Tensor4: data length " + std::to_string(data_.size()) +
                     " does not match shape " + s.str());
  }
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace dru
