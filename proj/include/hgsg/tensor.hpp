// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace hgsg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Immutable once constructed; copies share
/// storage. A rank-0 tensor (empty shape) holds one scalar.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_->size(); }

  std::span<const double> data() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  Tensor reshaped(Shape shape) const;
  /// Copy of the data, for building a modified tensor.
  std::vector<double> to_vector() const { return *data_; }

  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

void to_json(nlohmann::json& j, const Tensor& t);
void from_json(const nlohmann::json& j, Tensor& t);

}  // namespace hgsg
