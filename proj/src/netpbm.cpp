#include "atv/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace atv {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("netpbm: " + what + " in " + path);
}

// Reads the next whitespace/comment-delimited header token.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_int(std::istream& in, const std::string& path, const char* field) {
  const std::string tok = next_token(in);
  if (tok.empty()) fail(path, std::string("missing ") + field);
  for (char ch : tok) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) fail(path, std::string("malformed ") + field);
  }
  return std::stoi(tok);
}

void write_pnm(const std::string& path, const ImageU8& img, const char* magic, int channels) {
  if (img.channels != channels || img.w <= 0 || img.h <= 0 ||
      img.pixels.size() != static_cast<size_t>(img.w) * img.h * channels) {
    fail(path, "inconsistent image to write");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << magic << "\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) fail(path, "short write");
}

}  // namespace

ImageU8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) fail(path, "bad magic (expected P5 or P6)");
  ImageU8 img;
  img.channels = (m1 == '6') ? 3 : 1;
  img.w = parse_int(in, path, "width");
  img.h = parse_int(in, path, "height");
  const int maxval = parse_int(in, path, "maxval");
  if (img.w <= 0 || img.h <= 0) fail(path, "non-positive dimensions");
  if (maxval != 255) fail(path, "unsupported maxval (expected 255)");
  // single whitespace byte separates the header from raster data
  img.pixels.resize(static_cast<size_t>(img.w) * img.h * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) fail(path, "truncated raster");
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P6", 3); }

void write_pgm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P5", 1); }

}  // namespace atv
