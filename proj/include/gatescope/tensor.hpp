#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gatescope/types.hpp"

namespace gatescope {

enum class TensorRole { decoder, unembedding, activations };

std::string_view to_string(TensorRole role);
TensorRole tensor_role_from_string(std::string_view s);

// Dense row-major float32 matrix tagged with the role it plays.
// decoder: d_sae x d_model; unembedding: |V| x d_model;
// activations: samples x d_sae.
class TensorMatrix {
 public:
  TensorMatrix(TensorRole role, std::size_t rows, std::size_t cols, std::vector<float> data);

  TensorRole role() const { return role_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  // The SAE width when role == decoder.
  std::size_t d_sae() const { return rows_; }
  std::size_t d_model() const { return cols_; }

  bool operator==(const TensorMatrix&) const = default;

 private:
  TensorRole role_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> data_;
};

// Container: "GSTEN001", u32 LE header length, JSON header
// {"role":..,"rows":..,"cols":..,"dtype":"f32"}, then rows*cols LE float32.
std::string serialize_tensor(const TensorMatrix& m);
TensorMatrix parse_tensor(std::string_view bytes, std::optional<TensorRole> expected = std::nullopt);

TensorMatrix load_tensor(const std::filesystem::path& path, TensorRole role);
void save_tensor(const TensorMatrix& m, const std::filesystem::path& path);

// Inner product with float64 accumulation.
double dot(std::span<const float> a, std::span<const float> b);

// Euclidean norm of decoder row f. Zero rows are an error.
double decoder_norm(const TensorMatrix& dec, FeatureId f);

void check_feature(const TensorMatrix& dec, FeatureId f);

}  // namespace gatescope
