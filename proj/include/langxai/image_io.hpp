#pragma once

// ImageTensor <-> 8-bit PNG, plus the JSON metadata sidecar.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <png.h>

#include "langxai/codec.hpp"
#include "langxai/domain.hpp"

namespace langxai {

/// Encodes as 8-bit gray or RGB; each value is scaled by 255 and rounded
/// half-to-even.
inline Bytes encode_png(const ImageTensor& img) {
  std::vector<std::uint8_t> pixels(img.data().size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<std::uint8_t>(std::nearbyint(img.data()[i] * 255.0));
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    fail(ErrorCode::InvalidValue, std::string("PNG encode failed: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    fail(ErrorCode::InvalidValue, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

/// Raw 8-bit samples of a PNG, gray or RGB (alpha is dropped).
struct RawPixels {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> samples;
};

inline RawPixels decode_png_raw(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorCode::ParseError, std::string("not a readable PNG: ") + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawPixels raw;
  raw.height = image.height;
  raw.width = image.width;
  raw.channels = color ? 3 : 1;
  raw.samples.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.samples.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::ParseError, std::string("PNG decode failed: ") + image.message);
  }
  return raw;
}

inline ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
  const RawPixels raw = decode_png_raw(bytes);
  return validate_image(std::span<const std::uint8_t>(raw.samples), {raw.height, raw.width},
                        raw.channels);
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::StoreUnwritable, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::StoreUnwritable, "short write to " + path.string());
}

inline ImageTensor load_png(const std::filesystem::path& path) {
  return decode_png(read_file(path));
}

/// Writes `<path>` as PNG and `<path>.json` with the tensor metadata.
inline void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  const Bytes png = encode_png(img);
  write_file(path, png);
  const json meta{{"height", img.height()},
                  {"width", img.width()},
                  {"channels", img.channels()},
                  {"encoding", "png8"},
                  {"sha256", sha256_hex(png)}};
  const std::string text = meta.dump(2) + "\n";
  write_file(path.string() + ".json", as_bytes(text));
}

}  // namespace langxai
