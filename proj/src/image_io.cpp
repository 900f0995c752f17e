#include "endopoint/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "endopoint/file_util.hpp"

namespace endopoint {

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::string& bytes) : b_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
      ++pos_;
    }
    if (start == pos_) throw std::runtime_error("truncated PGM header");
    return b_.substr(start, pos_ - start);
  }

  unsigned long number() {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw std::runtime_error("bad PGM header field '" + t + "'");
    }
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_offset() const { return pos_ + 1; }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  HeaderParser header(bytes);
  if (header.token() != "P5") {
    throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  }
  const std::size_t width = header.number();
  const std::size_t height = header.number();
  const unsigned long maxval = header.number();
  if (maxval == 0 || maxval > 65535) {
    throw std::runtime_error(path.string() + ": invalid maxval");
  }
  const std::size_t sample = maxval > 255 ? 2 : 1;
  const std::size_t offset = header.raster_offset();
  if (bytes.size() < offset + width * height * sample) {
    throw std::runtime_error(path.string() + ": truncated raster");
  }
  Tensor image({height, width});
  const auto* raster =
      reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  for (std::size_t i = 0; i < width * height; ++i) {
    unsigned v = sample == 1 ? raster[i]
                             : (static_cast<unsigned>(raster[2 * i]) << 8) |
                                   raster[2 * i + 1];
    image[i] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image,
               unsigned maxval) {
  require_rank(image, 2, "write_pgm");
  if (maxval != 255 && maxval != 65535) {
    throw std::invalid_argument("write_pgm: maxval must be 255 or 65535");
  }
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " +
                    std::to_string(image.dim(0)) + "\n" +
                    std::to_string(maxval) + "\n";
  for (double v : image.data()) {
    const auto q = static_cast<unsigned>(
        std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (maxval > 255) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  write_file_atomic(path, out);
}

}  // namespace endopoint
