#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "simrsa/error.hpp"

namespace simrsa {
namespace detail {

inline std::string base64_encode(const std::vector<unsigned char>& data) {
  static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < data.size()) {
    const unsigned v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += table[(v >> 6) & 63];
    out += table[v & 63];
    i += 3;
  }
  if (i + 1 == data.size()) {
    const unsigned v = data[i] << 16;
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == data.size()) {
    const unsigned v = (data[i] << 16) | (data[i + 1] << 8);
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += table[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  int buffer = 0, bits = 0;
  for (char c : text) {
    const int v = value_of(c);
    if (v < 0) continue;  // padding and whitespace
    buffer = (buffer << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buffer >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace detail

struct EncodedImage {
  std::string data_url;  // data:image/png;base64,....
  int width = 0;
  int height = 0;
};

/// Reads a raster image, resizes it to the target resolution (150x150 by
/// default) and returns it PNG-encoded as a base64 data URL.
inline EncodedImage encode_image(const std::filesystem::path& path, int target_width = 150,
                                 int target_height = 150) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw Error("cannot read image: " + path.string());
  cv::Mat resized;
  cv::resize(img, resized, cv::Size(target_width, target_height), 0, 0, cv::INTER_AREA);
  std::vector<unsigned char> png;
  if (!cv::imencode(".png", resized, png)) throw Error("cannot encode image: " + path.string());
  EncodedImage out;
  out.width = resized.cols;
  out.height = resized.rows;
  out.data_url = "data:image/png;base64," + detail::base64_encode(png);
  return out;
}

}  // namespace simrsa
