#include "gatescope/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "gatescope/error.hpp"
#include "json_util.hpp"

namespace gatescope {
namespace {

constexpr std::string_view kMagic = "GSTEN001";

std::uint32_t load_u32_le(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(u[0]) | (static_cast<std::uint32_t>(u[1]) << 8) |
         (static_cast<std::uint32_t>(u[2]) << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
}

void store_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

}  // namespace

std::string_view to_string(TensorRole role) {
  switch (role) {
    case TensorRole::decoder: return "decoder";
    case TensorRole::unembedding: return "unembedding";
    case TensorRole::activations: return "activations";
  }
  return "decoder";
}

TensorRole tensor_role_from_string(std::string_view s) {
  if (s == "decoder") return TensorRole::decoder;
  if (s == "unembedding") return TensorRole::unembedding;
  if (s == "activations") return TensorRole::activations;
  throw Error("unknown tensor role '" + std::string(s) + "'");
}

TensorMatrix::TensorMatrix(TensorRole role, std::size_t rows, std::size_t cols, std::vector<float> data)
    : role_(role), rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows_ == 0 || cols_ == 0) throw Error("tensor: rows and cols must be positive");
  if (rows_ > std::numeric_limits<std::size_t>::max() / cols_ || rows_ * cols_ != data_.size())
    throw Error("tensor: rows*cols (" + std::to_string(rows_) + "x" + std::to_string(cols_) +
                ") does not match buffer length " + std::to_string(data_.size()));
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw Error("tensor: non-finite entry at row " + std::to_string(i / cols_) + ", col " +
                  std::to_string(i % cols_));
  }
}

std::string serialize_tensor(const TensorMatrix& m) {
  json header;
  header["role"] = std::string(to_string(m.role()));
  header["rows"] = m.rows();
  header["cols"] = m.cols();
  header["dtype"] = "f32";
  const std::string h = header.dump();

  std::string out;
  out.reserve(kMagic.size() + 4 + h.size() + m.data().size() * 4);
  out.append(kMagic);
  store_u32_le(out, static_cast<std::uint32_t>(h.size()));
  out.append(h);
  for (float v : m.data()) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    store_u32_le(out, bits);
  }
  return out;
}

TensorMatrix parse_tensor(std::string_view bytes, std::optional<TensorRole> expected) {
  if (bytes.size() < kMagic.size() + 4 || bytes.substr(0, kMagic.size()) != kMagic)
    throw Error("tensor container: bad magic (expected GSTEN001)");
  const std::uint32_t header_len = load_u32_le(bytes.data() + kMagic.size());
  const std::size_t header_at = kMagic.size() + 4;
  if (bytes.size() - header_at < header_len) throw Error("tensor container: truncated header");

  constexpr std::string_view ctx = "tensor header";
  const json header = detail::parse_json(bytes.substr(header_at, header_len), ctx);
  detail::require_only(header, {"role", "rows", "cols", "dtype"}, ctx);
  const auto role = tensor_role_from_string(detail::get<std::string>(header, "role", ctx));
  const auto rows = detail::get<std::int64_t>(header, "rows", ctx);
  const auto cols = detail::get<std::int64_t>(header, "cols", ctx);
  if (detail::get<std::string>(header, "dtype", ctx) != "f32")
    throw Error("tensor header: only dtype f32 is supported");
  if (rows <= 0 || cols <= 0) throw Error("tensor header: rows and cols must be positive");
  if (expected && *expected != role)
    throw Error("tensor container: role is '" + std::string(to_string(role)) + "', expected '" +
                std::string(to_string(*expected)) + "'");

  const std::size_t payload_at = header_at + header_len;
  const std::size_t payload = bytes.size() - payload_at;
  const auto r = static_cast<std::size_t>(rows);
  const auto c = static_cast<std::size_t>(cols);
  if (payload % 4 != 0 || payload / 4 != r * c)
    throw Error("tensor container: header declares " + std::to_string(r) + "x" + std::to_string(c) +
                " but payload holds " + std::to_string(payload / 4) + " floats");

  std::vector<float> data(r * c);
  const char* p = bytes.data() + payload_at;
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(load_u32_le(p + 4 * i));
  return TensorMatrix(role, r, c, std::move(data));
}

TensorMatrix load_tensor(const std::filesystem::path& path, TensorRole role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open tensor file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_tensor(bytes, role);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void save_tensor(const TensorMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write tensor file " + path.string());
  const std::string bytes = serialize_tensor(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

void check_feature(const TensorMatrix& dec, FeatureId f) {
  if (dec.role() != TensorRole::decoder) throw Error("expected a decoder matrix");
  if (f.index >= dec.rows())
    throw Error("feature f" + std::to_string(f.index) + " out of range (d_sae = " +
                std::to_string(dec.rows()) + ")");
}

double decoder_norm(const TensorMatrix& dec, FeatureId f) {
  check_feature(dec, f);
  const auto r = dec.row(f.index);
  const double n = std::sqrt(dot(r, r));
  if (n == 0.0) throw Error("feature f" + std::to_string(f.index) + " has a zero-norm decoder row");
  return n;
}

}  // namespace gatescope
