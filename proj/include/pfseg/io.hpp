#pragma once

// Binary netpbm images (P5 8/16-bit, P6 8-bit), `key value` text files and
// raw little-endian float sidecars.

#include <bit>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pfseg/tensor.hpp"

namespace pfseg {

/// Integer raster, row-major with interleaved channels.
struct Image {
  std::size_t width = 0, height = 0, channels = 1;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint32_t max)
      : width(w), height(h), channels(c), maxval(max), pixels(w * h * c, 0) {}

  std::uint16_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint16_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
};

namespace detail {

inline std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path);
}

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, std::string kind, std::size_t start)
      : bytes_(bytes), kind_(std::move(kind)), pos_(start) {}

  std::size_t pos() const { return pos_; }

  std::uint32_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    last_start_ = start;
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::uint64_t>(bytes_[pos_] - '0');
      if (v > 0xffffffffu) fail(std::string(what) + " out of range", start);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + what, start);
    return static_cast<std::uint32_t>(v);
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("expected single whitespace before raster", pos_);
    }
    ++pos_;
  }

  std::size_t last_token_start() const { return last_start_; }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError(kind_ + " header: " + msg + " at byte offset " + std::to_string(at));
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::string kind_;
  std::size_t pos_;
  std::size_t last_start_ = 0;
};

}  // namespace detail

/// Parses P5 (grayscale, 8 or 16 bit big-endian samples) and P6 (8 bit RGB).
inline Image decode_netpbm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("netpbm header: expected magic P5 or P6 at byte offset 0");
  }
  const bool rgb = bytes[1] == '6';
  detail::HeaderReader h(bytes, rgb ? "PPM" : "PGM", 2);
  const std::uint32_t width = h.number("width");
  const std::size_t width_at = h.last_token_start();
  const std::uint32_t height = h.number("height");
  if (width == 0 || height == 0) h.fail("zero image extent", width_at);
  const std::uint32_t maxval = h.number("maxval");
  const std::size_t maxval_at = h.last_token_start();
  if (maxval == 0 || maxval > 65535 || (rgb && maxval > 255)) h.fail("unsupported maxval", maxval_at);
  h.single_whitespace();

  Image img(width, height, rgb ? 3 : 1, maxval);
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  const std::size_t need = img.pixels.size() * bytes_per_sample;
  if (bytes.size() - h.pos() < need) {
    throw FormatError("netpbm raster truncated: need " + std::to_string(need) + " bytes at byte offset " +
                      std::to_string(h.pos()) + ", have " + std::to_string(bytes.size() - h.pos()));
  }
  const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + h.pos());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    std::uint16_t v = bytes_per_sample == 2 ? static_cast<std::uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1])
                                            : raster[i];
    if (v > maxval) {
      throw FormatError("netpbm sample exceeds maxval at byte offset " +
                        std::to_string(h.pos() + i * bytes_per_sample));
    }
    img.pixels[i] = v;
  }
  return img;
}

inline std::string encode_netpbm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("netpbm: images must have 1 or 3 channels");
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
  const bool wide = img.maxval > 255;
  for (std::uint16_t v : img.pixels) {
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

inline Image read_netpbm(const std::string& path) {
  try {
    return decode_netpbm(detail::slurp(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_netpbm(const std::string& path, const Image& img) { detail::spit(path, encode_netpbm(img)); }

inline std::string read_text_file(const std::string& path) { return detail::slurp(path); }
inline void write_text_file(const std::string& path, const std::string& text) { detail::spit(path, text); }

/// Ordered `key value` pairs; blank lines and `#` comments ignored.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<text>") {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::istringstream ls(line);
      std::string key, value, extra;
      if (!(ls >> key)) continue;
      if (!(ls >> value) || (ls >> extra)) {
        throw FormatError(origin + ":" + std::to_string(lineno) + ": expected `key value`, got '" + line + "'");
      }
      if (kv.values_.count(key)) throw FormatError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
      kv.values_[key] = value;
      kv.order_.push_back(key);
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) { return parse(detail::slurp(path), path); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw FormatError("missing key: " + key);
    return it->second;
  }

  double get_double(const std::string& key) const {
    const auto& s = get(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw FormatError("key " + key + ": not a number: '" + s + "'");
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  const std::vector<std::string>& keys() const { return order_; }

  std::string str() const {
    std::string out;
    for (const auto& k : order_) out += k + " " + values_.at(k) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

/// Little-endian f64 dump.
inline void write_f64_sidecar(const std::string& path, const std::vector<double>& values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  detail::spit(path, out);
}

inline std::vector<double> read_f64_sidecar(const std::string& path) {
  const std::string bytes = detail::slurp(path);
  if (bytes.size() % 8 != 0) throw FormatError(path + ": sidecar length not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * k + i])) << (8 * i);
    out[k] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace pfseg
