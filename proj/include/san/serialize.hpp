#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "san/tensor.hpp"

// Tensor wire format:
//   8 bytes   magic "SANTNSR1"
//   8 bytes   little-endian u64 header length L
//   L bytes   JSON header {"dtype": "float32"|"float64", "shape": [...]}
//   payload   numel IEEE-754 values, little-endian, row-major
namespace san {

inline constexpr std::string_view kTensorMagic = "SANTNSR1";

template <typename T>
std::string_view dtype_name();

void write_u64_le(std::ostream& os, std::uint64_t value);
std::uint64_t read_u64_le(std::istream& is);

// Raw little-endian element buffers, independent of host byte order.
template <typename T>
void write_values_le(std::ostream& os, std::span<const T> values);
template <typename T>
void read_values_le(std::istream& is, std::span<T> values);

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& tensor);
template <typename T>
Tensor<T> read_tensor(std::istream& is);

}  // namespace san
