#pragma once

// NPY (format version 1.0) tensor files. Only little-endian float32 and
// float64 payloads are supported. Column-major files are converted to
// row-major on load; files are always written row-major.

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "msdcrd/tensor.hpp"

namespace msdcrd {
namespace npy {

inline constexpr std::array<char, 6> magic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

namespace detail {

using msdcrd::detail::fail;

template <typename U>
U load_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <typename U>
void store_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Returns the raw text following `'key':` up to (not including) the next
// top-level comma or closing brace.
inline std::string_view dict_value(std::string_view dict, std::string_view key) {
  std::string quoted = "'" + std::string(key) + "'";
  auto pos = dict.find(quoted);
  if (pos == std::string_view::npos) {
    quoted = "\"" + std::string(key) + "\"";
    pos = dict.find(quoted);
  }
  if (pos == std::string_view::npos) fail(ErrorKind::header, "npy header is missing key " + std::string(key));
  pos = dict.find(':', pos + quoted.size());
  if (pos == std::string_view::npos) fail(ErrorKind::header, "npy header: no value for " + std::string(key));
  ++pos;
  int depth = 0;
  std::size_t end = pos;
  for (; end < dict.size(); ++end) {
    char c = dict[end];
    if (c == '(') ++depth;
    else if (c == ')') --depth;
    else if (depth == 0 && (c == ',' || c == '}')) break;
  }
  if (depth != 0) fail(ErrorKind::header, "npy header: unbalanced parentheses");
  return trim(dict.substr(pos, end - pos));
}

struct Header {
  DType dtype;
  bool fortran_order;
  Shape shape;
};

inline Header parse_header(std::string_view text) {
  text = trim(text);
  if (text.size() < 2 || text.front() != '{' || text.back() != '}')
    fail(ErrorKind::header, "npy header is not a dict literal");

  Header h{};
  std::string_view descr = dict_value(text, "descr");
  if (descr.size() < 2 || (descr.front() != '\'' && descr.front() != '"') || descr.back() != descr.front())
    fail(ErrorKind::header, "npy header: descr is not a string");
  descr = descr.substr(1, descr.size() - 2);
  if (descr == "<f8") h.dtype = DType::f64;
  else if (descr == "<f4") h.dtype = DType::f32;
  else fail(ErrorKind::dtype, "unsupported npy dtype '" + std::string(descr) + "' (expected <f4 or <f8)");

  std::string_view order = dict_value(text, "fortran_order");
  if (order == "True") h.fortran_order = true;
  else if (order == "False") h.fortran_order = false;
  else fail(ErrorKind::header, "npy header: fortran_order must be True or False");

  std::string_view shape = dict_value(text, "shape");
  if (shape.size() < 2 || shape.front() != '(' || shape.back() != ')')
    fail(ErrorKind::header, "npy header: shape is not a tuple");
  shape = shape.substr(1, shape.size() - 2);
  while (!shape.empty()) {
    auto comma = shape.find(',');
    std::string_view item = trim(shape.substr(0, comma));
    if (!item.empty()) {
      std::size_t extent = 0;
      for (char c : item) {
        if (!std::isdigit(static_cast<unsigned char>(c)))
          fail(ErrorKind::header, "npy header: bad shape entry '" + std::string(item) + "'");
        extent = extent * 10 + static_cast<std::size_t>(c - '0');
      }
      h.shape.push_back(extent);
    }
    if (comma == std::string_view::npos) break;
    shape.remove_prefix(comma + 1);
  }
  if (h.shape.empty() || h.shape.size() > Tensor::max_rank)
    fail(ErrorKind::header, "npy shape " + shape_string(h.shape) + " has unsupported rank");
  for (std::size_t e : h.shape)
    if (e == 0) fail(ErrorKind::header, "npy shape " + shape_string(h.shape) + " has a zero extent");
  return h;
}

inline std::string header_text(const Tensor& t) {
  std::string shape = "(";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    shape += std::to_string(t.extent(i));
    shape += (t.rank() == 1 || i + 1 < t.rank()) ? "," : "";
    if (i + 1 < t.rank()) shape += " ";
  }
  shape += ")";
  return std::string("{'descr': '") + to_string(t.dtype()) + "', 'fortran_order': False, 'shape': " + shape + ", }";
}

}  // namespace detail

/// Serializes a tensor to NPY v1.0 bytes.
inline std::string encode(const Tensor& t) {
  std::string header = detail::header_text(t);
  // magic(6) + version(2) + length(2) + header + '\n' must be a multiple of 64.
  const std::size_t unpadded = magic.size() + 2 + 2 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::string out(magic.begin(), magic.end());
  out.push_back('\x01');
  out.push_back('\x00');
  detail::store_le<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
  out += header;
  out.reserve(out.size() + t.size() * (t.dtype() == DType::f32 ? 4 : 8));
  for (double v : t.data()) {
    if (t.dtype() == DType::f32) detail::store_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else detail::store_le(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

/// Parses NPY bytes. Accepts versions 1.0 through 3.0 of the container.
inline Tensor decode(std::string_view bytes) {
  using detail::fail;
  if (bytes.size() < 10 || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
    fail(ErrorKind::header, "not an npy file (bad magic bytes)");
  const unsigned major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t prefix = 0;
  if (major == 1) {
    header_len = detail::load_le<std::uint16_t>(bytes.data() + 8);
    prefix = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) fail(ErrorKind::header, "npy header truncated");
    header_len = detail::load_le<std::uint32_t>(bytes.data() + 8);
    prefix = 12;
  } else {
    fail(ErrorKind::header, "unsupported npy version " + std::to_string(major));
  }
  if (bytes.size() < prefix + header_len) fail(ErrorKind::header, "npy header truncated");
  const detail::Header h = detail::parse_header(bytes.substr(prefix, header_len));

  const std::size_t n = Tensor::count(h.shape);
  const std::size_t width = h.dtype == DType::f32 ? 4 : 8;
  std::string_view payload = bytes.substr(prefix + header_len);
  if (payload.size() < n * width)
    fail(ErrorKind::truncated, "npy payload holds " + std::to_string(payload.size()) + " bytes, expected " +
                                   std::to_string(n * width));

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* p = payload.data() + i * width;
    values[i] = h.dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(detail::load_le<std::uint32_t>(p)))
                                      : std::bit_cast<double>(detail::load_le<std::uint64_t>(p));
  }

  if (h.fortran_order && h.shape.size() > 1) {
    // values[k] holds the element whose column-major offset is k.
    std::vector<double> row_major(n);
    Shape index(h.shape.size(), 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t col_offset = 0;
      std::size_t stride = 1;
      for (std::size_t d = 0; d < index.size(); ++d) {
        col_offset += index[d] * stride;
        stride *= h.shape[d];
      }
      row_major[flat] = values[col_offset];
      for (std::size_t d = index.size(); d-- > 0;) {
        if (++index[d] < h.shape[d]) break;
        index[d] = 0;
      }
    }
    values = std::move(row_major);
  }
  return Tensor(h.shape, std::move(values), h.dtype);
}

}  // namespace npy

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::fail(ErrorKind::io, "cannot open tensor file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return npy::decode(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  const std::string bytes = npy::encode(t);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) detail::fail(ErrorKind::io, "failed writing " + path.string());
}

}  // namespace msdcrd
