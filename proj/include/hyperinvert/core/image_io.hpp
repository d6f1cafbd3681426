#pragma once

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "hyperinvert/core/tensor.hpp"

namespace hyperinvert {

// 8-bit RGB PNG input/output. Image tensors are [H,W,3] with values in
// [-1,1]; -1 maps to pixel 0 and +1 to pixel 255.

namespace detail {

inline void png_put_u32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>(v & 0xff));
}

inline void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& data) {
  png_put_u32(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  png_put_u32(out, crc);
}

inline uint32_t png_read_u32(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline unsigned char paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<unsigned char>(a);
  if (pb <= pc) return static_cast<unsigned char>(b);
  return static_cast<unsigned char>(c);
}

}  // namespace detail

template <class T>
void write_png(const std::filesystem::path& path, const Tensor<T>& img) {
  check_shape(img.shape().size() == 3 && img.shape()[2] == 3,
              "write_png: image must be [H,W,3], got " + shape_str(img.shape()));
  int64_t H = img.shape()[0], W = img.shape()[1];
  std::vector<unsigned char> raw(static_cast<size_t>(H * (1 + W * 3)));
  size_t pos = 0;
  for (int64_t y = 0; y < H; ++y) {
    raw[pos++] = 0;  // filter: none
    for (int64_t x = 0; x < W; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        T v = img[(y * W + x) * 3 + c];
        T scaled = (v + T(1)) * T(127.5);
        int p = static_cast<int>(std::lround(static_cast<double>(scaled)));
        raw[pos++] = static_cast<unsigned char>(std::min(255, std::max(0, p)));
      }
    }
  }
  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_cap);
  int rc = compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6);
  check_config(rc == Z_OK, "png compression failed");
  comp.resize(comp_cap);

  std::vector<unsigned char> out;
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), sig, sig + 8);
  std::vector<unsigned char> ihdr;
  detail::png_put_u32(ihdr, static_cast<uint32_t>(W));
  detail::png_put_u32(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // rgb
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", comp);
  detail::png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  check_config(f.good(), "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  check_config(f.good(), "write failed: " + path.string());
}

template <class T>
Tensor<T> read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check_config(f.good(), "cannot open image: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  check_config(buf.size() > 8 && std::memcmp(buf.data() + 1, "PNG", 3) == 0,
               "not a png file: " + path.string());
  size_t pos = 8;
  int64_t W = 0, H = 0;
  int color_type = -1;
  std::vector<unsigned char> idat;
  while (pos + 12 <= buf.size()) {
    uint32_t len = detail::png_read_u32(buf.data() + pos);
    check_config(pos + 12 + len <= buf.size(), "truncated png: " + path.string());
    std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
    const unsigned char* data = buf.data() + pos + 8;
    if (type == "IHDR") {
      W = detail::png_read_u32(data);
      H = detail::png_read_u32(data + 4);
      int bit_depth = data[8];
      color_type = data[9];
      check_config(bit_depth == 8, "unsupported png bit depth in " + path.string());
      check_config(color_type == 2 || color_type == 6,
                   "unsupported png color type in " + path.string());
      check_config(data[12] == 0, "interlaced png not supported: " + path.string());
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  check_config(W > 0 && H > 0 && !idat.empty(), "malformed png: " + path.string());
  int channels = color_type == 6 ? 4 : 3;
  int64_t stride = W * channels;
  std::vector<unsigned char> raw(static_cast<size_t>(H * (1 + stride)));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  check_config(rc == Z_OK && raw_len == raw.size(), "png inflate failed: " + path.string());

  // Undo per-scanline filters in place.
  std::vector<unsigned char> prev(static_cast<size_t>(stride), 0);
  Tensor<T> img(Shape{H, W, 3});
  for (int64_t y = 0; y < H; ++y) {
    unsigned char* row = raw.data() + y * (1 + stride) + 1;
    int filter = raw[static_cast<size_t>(y * (1 + stride))];
    for (int64_t i = 0; i < stride; ++i) {
      int a = i >= channels ? row[i - channels] : 0;
      int b = prev[static_cast<size_t>(i)];
      int c = i >= channels ? prev[static_cast<size_t>(i - channels)] : 0;
      int v = row[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw ConfigError("bad png filter byte in " + path.string());
      }
      row[i] = static_cast<unsigned char>(v & 0xff);
    }
    std::copy(row, row + stride, prev.begin());
    for (int64_t x = 0; x < W; ++x)
      for (int64_t ch = 0; ch < 3; ++ch)
        img[(y * W + x) * 3 + ch] =
            static_cast<T>(row[x * channels + ch]) / T(127.5) - T(1);
  }
  return img;
}

// Tile a batch [N,H,W,3] into one image, row-major, `cols` per row.
template <class T>
Tensor<T> image_grid(const Tensor<T>& batch, int64_t cols) {
  check_shape(batch.shape().size() == 4 && batch.shape()[3] == 3,
              "image_grid: batch must be [N,H,W,3]");
  int64_t N = batch.shape()[0], H = batch.shape()[1], W = batch.shape()[2];
  check_config(cols >= 1, "image_grid: cols must be positive");
  int64_t rows = (N + cols - 1) / cols;
  Tensor<T> out = Tensor<T>::full(Shape{rows * H, cols * W, 3}, T(-1));
  for (int64_t n = 0; n < N; ++n) {
    int64_t r = n / cols, col = n % cols;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        for (int64_t ch = 0; ch < 3; ++ch)
          out[(((r * H + y) * cols * W) + col * W + x) * 3 + ch] =
              batch[((n * H + y) * W + x) * 3 + ch];
  }
  return out;
}

}  // namespace hyperinvert
