// SPDX-License-Identifier: Apache-2.0
#include "hgsg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hgsg/error.hpp"

namespace hgsg {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero extent");
}

}  // namespace

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = std::make_shared<const std::vector<double>>(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  check_shape(shape_);
  if (data.size() != shape_size(shape_))
    throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape_));
  for (double v : data)
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor of shape " + shape_string(shape_));
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw DimensionError("index rank does not match " + shape_string(shape_));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return (*data_)[flat];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_size(shape) != size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ && *data_ == *other.data_;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void to_json(nlohmann::json& j, const Tensor& t) {
  j = nlohmann::json{{"shape", t.shape()}, {"data", t.to_vector()}};
}

void from_json(const nlohmann::json& j, Tensor& t) {
  t = Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace hgsg
