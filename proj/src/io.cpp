#include "lensless/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace lensless::io {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::vector<std::uint8_t> encode_array(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(kArrayHeaderBytes + 4 * t.size());
  for (char c : {'L', 'L', 'I', 'A'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kArrayVersion);
  out.push_back(0);  // float32
  out.push_back(3);
  out.push_back(0);
  put_u32(out, static_cast<std::uint32_t>(t.height()));
  put_u32(out, static_cast<std::uint32_t>(t.width()));
  put_u32(out, static_cast<std::uint32_t>(t.channels()));
  for (double v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_array(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "LLIA", 4) != 0) {
    throw BadMagic("missing LLIA header");
  }
  if (bytes[4] != kArrayVersion || bytes[5] != 0 || bytes[6] != 3) {
    throw BadMagic("unsupported version/dtype/ndim " + std::to_string(bytes[4]) + "/" +
                   std::to_string(bytes[5]) + "/" + std::to_string(bytes[6]));
  }
  if (bytes.size() < kArrayHeaderBytes) throw BadDims("truncated header");
  const std::uint64_t h = get_u32(bytes, 8), w = get_u32(bytes, 12), c = get_u32(bytes, 16);
  if (h == 0 || w == 0 || c == 0 || h > 1u << 30 || w > 1u << 30 || c > 1u << 30) {
    throw BadDims("invalid dimensions");
  }
  const std::uint64_t count = h * w * c;
  if (bytes.size() - kArrayHeaderBytes != 4 * count) {
    throw BadDims("payload is " + std::to_string(bytes.size() - kArrayHeaderBytes) +
                  " bytes, expected " + std::to_string(4 * count));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, kArrayHeaderBytes + 4 * i));
  }
  return Tensor({static_cast<int>(h), static_cast<int>(w), static_cast<int>(c)},
                std::move(data));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_array(const std::filesystem::path& path) { return decode_array(read_file(path)); }

void write_array(const std::filesystem::path& path, const Tensor& t) {
  write_file(path, encode_array(t));
}

Tensor read_png(const std::filesystem::path& path) {
  File fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host order for little-endian unpacking below
  png_read_update_info(png, info);

  const auto height = static_cast<int>(png_get_image_height(png, info));
  const auto width = static_cast<int>(png_get_image_width(png, info));
  const int channels = png_get_channels(png, info);
  const int bits = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = &pixels[row_bytes * y];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out({height, width, channels});
  const double max_value = bits == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < height; ++y) {
    const png_byte* row = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(x * channels + c);
        const double v = bits == 16 ? static_cast<double>(row[2 * i] | (row[2 * i + 1] << 8))
                                    : static_cast<double>(row[i]);
        out(y, x, c) = v / max_value;
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& t, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidParams("PNG bit depth must be 8 or 16");
  if (t.channels() != 1 && t.channels() != 3) {
    throw ShapeMismatch("PNG export needs 1 or 3 channels, got " + to_string(t.shape()));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  const int bytes_per_sample = bit_depth / 8;
  const std::size_t row_bytes =
      static_cast<std::size_t>(t.width() * t.channels() * bytes_per_sample);
  std::vector<png_byte> pixels(row_bytes * static_cast<std::size_t>(t.height()));
  const double max_value = bit_depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      for (int c = 0; c < t.channels(); ++c) {
        const double v = std::clamp(t(y, x, c), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * max_value));
        const std::size_t i =
            row_bytes * y + static_cast<std::size_t>((x * t.channels() + c) * bytes_per_sample);
        if (bit_depth == 16) {
          pixels[i] = static_cast<png_byte>(q >> 8);  // PNG stores big-endian
          pixels[i + 1] = static_cast<png_byte>(q & 0xff);
        } else {
          pixels[i] = static_cast<png_byte>(q);
        }
      }
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(t.width()),
               static_cast<png_uint_32>(t.height()), bit_depth,
               t.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < t.height(); ++y) png_write_row(png, &pixels[row_bytes * y]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace lensless::io
