// SPDX-License-Identifier: Apache-2.0
#include "tetra/tensor_io.hpp"

#include <cctype>
#include <string>

#include "tetra/binary_io.hpp"
#include "tetra/error.hpp"

namespace tetra {
namespace {
constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::size_t kMaxDims = 8;
}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  if (count != t.data.size() || t.dims.size() > kMaxDims) {
    throw std::invalid_argument("encode_tensor: dims do not match data");
  }
  io::ByteWriter w;
  w.text({kMagic, 4});
  w.u8(kTensorDtypeF32);
  w.u8(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data) w.f32(v);
  return w.take();
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "TNSR");
  if (r.text(4) != std::string(kMagic, 4)) r.fail("bad magic");
  if (r.u8() != kTensorDtypeF32) r.fail("unsupported dtype");
  const std::size_t ndim = r.u8();
  if (ndim == 0 || ndim > kMaxDims) r.fail("unsupported rank " + std::to_string(ndim));
  Tensor t;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::size_t d = r.u32();
    t.dims.push_back(d);
    if (d != 0 && count > r.remaining() / d) r.fail("truncated");
    count *= d;
  }
  if (count > r.remaining() / 4) r.fail("truncated");
  t.data.resize(count);
  for (auto& v : t.data) v = r.f32();
  r.expect_end();
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { io::write_file(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const auto fail = [](const std::string& msg) -> void { throw DataError("PPM: " + msg); };
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 6) fail("header value too large");
    }
    if (digits == 0) fail("malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("bad magic (expected P6)");
  pos = 2;
  const std::size_t width = number();
  const std::size_t height = number();
  const std::size_t maxval = number();
  if (width == 0 || height == 0) fail("empty image");
  if (maxval == 0 || maxval > 255) fail("only 8-bit PPM is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("malformed header");
  ++pos;
  const std::size_t n = width * height * 3;
  if (bytes.size() - pos < n) fail("truncated pixel data");
  Tensor t = Tensor::image(3, height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        t.at(c, y, x) = static_cast<float>(bytes[pos + (y * width + x) * 3 + c]) / static_cast<float>(maxval);
      }
  return t;
}

Tensor read_image(const std::filesystem::path& path) {
  if (path.extension() == ".ppm") {
    try {
      return decode_ppm(io::read_file(path));
    } catch (const DataError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return read_tensor(path);
}

}  // namespace tetra
