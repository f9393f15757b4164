#include "san/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "san/errors.hpp"

namespace san {
namespace {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFF);
    return out;
  }
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

constexpr std::uint64_t kMaxHeader = 1u << 20;

}  // namespace

template <>
std::string_view dtype_name<float>() {
  return "float32";
}
template <>
std::string_view dtype_name<double>() {
  return "float64";
}

void write_u64_le(std::ostream& os, std::uint64_t value) {
  const std::uint64_t le = to_little(value);
  os.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

std::uint64_t read_u64_le(std::istream& is) {
  std::uint64_t le = 0;
  if (!is.read(reinterpret_cast<char*>(&le), sizeof(le))) throw FormatError("truncated length field");
  return to_little(le);
}

template <typename T>
void write_values_le(std::ostream& os, std::span<const T> values) {
  std::vector<Bits<T>> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) raw[i] = to_little(std::bit_cast<Bits<T>>(values[i]));
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(Bits<T>)));
}

template <typename T>
void read_values_le(std::istream& is, std::span<T> values) {
  std::vector<Bits<T>> raw(values.size());
  const auto bytes = static_cast<std::streamsize>(raw.size() * sizeof(Bits<T>));
  if (!is.read(reinterpret_cast<char*>(raw.data()), bytes)) throw FormatError("truncated tensor payload");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<T>(to_little(raw[i]));
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& tensor) {
  nlohmann::json header{{"dtype", dtype_name<T>()}, {"shape", tensor.shape()}};
  const std::string text = header.dump();
  os.write(kTensorMagic.data(), static_cast<std::streamsize>(kTensorMagic.size()));
  write_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_values_le<T>(os, tensor.data());
  if (!os) throw FormatError("failed to write tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::string_view(magic, sizeof(magic)) != kTensorMagic) {
    throw FormatError("bad tensor magic");
  }
  const std::uint64_t length = read_u64_le(is);
  if (length > kMaxHeader) throw FormatError("tensor header too large");
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) throw FormatError("truncated tensor header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor header: ") + e.what());
  }
  if (!header.contains("dtype") || header["dtype"] != dtype_name<T>()) {
    throw FormatError("tensor dtype mismatch, expected " + std::string(dtype_name<T>()));
  }
  if (!header.contains("shape") || !header["shape"].is_array()) throw FormatError("tensor header lacks shape");
  Shape shape;
  for (const auto& e : header["shape"]) {
    if (!e.is_number_integer() || e.get<Index>() < 0) throw FormatError("invalid extent in tensor shape");
    shape.push_back(e.get<Index>());
  }
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
  read_values_le<T>(is, values);
  return Tensor<T>(std::move(shape), std::move(values));
}

#define SAN_INSTANTIATE(T)                                              \
  template void write_values_le<T>(std::ostream&, std::span<const T>); \
  template void read_values_le<T>(std::istream&, std::span<T>);        \
  template void write_tensor<T>(std::ostream&, const Tensor<T>&);      \
  template Tensor<T> read_tensor<T>(std::istream&);
SAN_INSTANTIATE(float)
SAN_INSTANTIATE(double)
#undef SAN_INSTANTIATE

}  // namespace san
