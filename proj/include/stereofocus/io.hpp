#pragma once

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "stereofocus/image.hpp"

namespace stereofocus {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace detail {

inline Image decode_png(const Bytes& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(std::string("png: ") + image.message);
  }
  struct Guard {
    png_image* i;
    ~Guard() { png_image_free(i); }
  } guard{&image};
  if (image.format & PNG_FORMAT_FLAG_LINEAR) throw IoError("png: unsupported bit depth (16-bit)");
  if (image.width == 0 || image.height == 0) throw IoError("png: zero-sized image");
  const int channels = (image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    throw IoError(std::string("png: ") + image.message);
  }
  Image img(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  const std::uint8_t* p = buf.data();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = *p++ / 255.0;
    }
  }
  return img;
}

// Binary P5 (gray) / P6 (RGB), maxval <= 255.
inline Image decode_pnm(const Bytes& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char ch = static_cast<char>(bytes[pos]);
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        ++pos;
      } else {
        t.push_back(ch);
        ++pos;
      }
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw IoError("pnm: only binary P5/P6 is supported");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError("pnm: malformed header");
  }
  ++pos;  // single whitespace before raster
  if (w <= 0 || h <= 0) throw IoError("pnm: zero-sized image");
  if (maxval <= 0 || maxval > 255) throw IoError("pnm: unsupported bit depth");
  const int channels = magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < pos + need) throw IoError("pnm: truncated raster");
  Image img(w, h, channels);
  const std::uint8_t* p = bytes.data() + pos;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = static_cast<double>(*p++) / maxval;
    }
  }
  return img;
}

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Decodes PNG (8-bit) or binary PGM/PPM from memory.
inline Image decode_image(const Bytes& bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return detail::decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::decode_pnm(bytes);
  throw IoError("unrecognized image format");
}

inline Image load_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

inline Bytes encode_png(const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) throw IoError("png: need 1 or 3 channels");
  const int channels = img.channels();
  std::vector<std::uint8_t> raw(img.size());
  std::uint8_t* p = raw.data();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < channels; ++c) *p++ = detail::quantize8(img.at(c, y, x));
    }
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("png: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("png: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
  write_file(path, encode_png(img));
}

/// Binary PGM/PPM writer (8-bit).
inline void save_pnm(const std::filesystem::path& path, const Image& img) {
  std::ostringstream header;
  header << (img.channels() == 3 ? "P6" : "P5") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  const std::string h = header.str();
  Bytes out(h.begin(), h.end());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) out.push_back(detail::quantize8(img.at(c, y, x)));
    }
  }
  write_file(path, out);
}

/// Writes by extension: .png, otherwise binary PNM.
inline void save_image(const std::filesystem::path& path, const Image& img) {
  if (path.extension() == ".png") {
    save_png(path, img);
  } else {
    save_pnm(path, img);
  }
}

enum class Endian { little, big };

/// Middlebury PFM: "Pf" header, negative scale = little-endian, rows bottom-up.
inline Bytes encode_pfm(const DisparityMap& d, Endian endian = Endian::little) {
  std::ostringstream header;
  header << "Pf\n" << d.width() << ' ' << d.height() << '\n' << (endian == Endian::little ? "-1.0" : "1.0") << '\n';
  const std::string h = header.str();
  Bytes out(h.begin(), h.end());
  out.reserve(out.size() + static_cast<std::size_t>(d.width()) * d.height() * 4);
  const bool swap = (endian == Endian::little) != (std::endian::native == std::endian::little);
  for (int y = d.height() - 1; y >= 0; --y) {
    for (int x = 0; x < d.width(); ++x) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d(x, y)));
      if (swap) bits = __builtin_bswap32(bits);
      const auto* b = reinterpret_cast<const std::uint8_t*>(&bits);
      out.insert(out.end(), b, b + 4);
    }
  }
  return out;
}

inline DisparityMap decode_pfm(const Bytes& bytes) {
  std::size_t pos = 0;
  auto line = [&]() {
    std::string s;
    while (pos < bytes.size() && bytes[pos] != '\n') s.push_back(static_cast<char>(bytes[pos++]));
    if (pos >= bytes.size()) throw IoError("pfm: malformed header");
    ++pos;
    return s;
  };
  const std::string magic = line();
  if (magic == "PF") throw IoError("pfm: three-channel PFM is not a disparity map");
  if (magic != "Pf") throw IoError("pfm: malformed header");
  int w = 0, h = 0;
  double scale = 0.0;
  {
    std::istringstream dims(line());
    if (!(dims >> w >> h) || w <= 0 || h <= 0) throw IoError("pfm: malformed dimensions");
    std::istringstream sc(line());
    if (!(sc >> scale) || scale == 0.0 || !std::isfinite(scale)) throw IoError("pfm: malformed scale");
  }
  const std::size_t need = static_cast<std::size_t>(w) * h * 4;
  if (bytes.size() - pos < need) throw IoError("pfm: truncated raster");
  const bool little = scale < 0;
  const bool swap = little != (std::endian::native == std::endian::little);
  DisparityMap d(w, h);
  const std::uint8_t* p = bytes.data() + pos;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x, p += 4) {
      std::uint32_t bits;
      std::memcpy(&bits, p, 4);
      if (swap) bits = __builtin_bswap32(bits);
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v)) throw IoError("pfm: non-finite sample");
      d(x, y) = v;
    }
  }
  return d;
}

inline DisparityMap load_disparity_pfm(const std::filesystem::path& path) { return decode_pfm(read_file(path)); }

inline void save_disparity_pfm(const std::filesystem::path& path, const DisparityMap& d,
                               Endian endian = Endian::little) {
  write_file(path, encode_pfm(d, endian));
}

}  // namespace stereofocus
