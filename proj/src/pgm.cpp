#include "stlkit/pgm.hpp"

#include <cmath>
#include <fstream>

#include "stlkit/tensor.hpp"

namespace stlkit {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw LoadError("truncated PGM header: " + path);
  return tok;
}

int parse_int(const std::string& tok, const std::string& path) {
  try {
    return std::stoi(tok);
  } catch (...) {
    throw LoadError("bad PGM header token '" + tok + "': " + path);
  }
}

}  // namespace

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image: " + path);
  if (next_token(in, path) != "P5") {
    throw LoadError("not a binary PGM (P5): " + path);
  }
  PgmImage img;
  img.width = parse_int(next_token(in, path), path);
  img.height = parse_int(next_token(in, path), path);
  img.maxval = parse_int(next_token(in, path), path);
  if (img.width < 1 || img.height < 1 || img.maxval < 1 ||
      img.maxval > 65535) {
    throw LoadError("bad PGM dimensions/maxval: " + path);
  }
  // The header ends with exactly one whitespace byte (already consumed by
  // next_token). Raw samples follow.
  const std::size_t count =
      static_cast<std::size_t>(img.width) * img.height;
  const int bytes_per = img.maxval > 255 ? 2 : 1;
  std::vector<char> raw(count * bytes_per);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw LoadError("truncated PGM pixel data: " + path);
  }
  img.pixels.resize(count);
  const float inv = 1.0f / static_cast<float>(img.maxval);
  if (bytes_per == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      img.pixels[i] = static_cast<float>(static_cast<unsigned char>(raw[i])) * inv;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned hi = static_cast<unsigned char>(raw[2 * i]);
      const unsigned lo = static_cast<unsigned char>(raw[2 * i + 1]);
      img.pixels[i] = static_cast<float>((hi << 8) | lo) * inv;
    }
  }
  return img;
}

void write_pgm(const std::string& path, int width, int height,
               const std::vector<float>& pixels) {
  std::vector<std::uint8_t> bytes(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, pixels[i]));
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  write_pgm_bytes(path, width, height, bytes);
}

void write_pgm_bytes(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() != static_cast<std::size_t>(width) * height) {
    throw InternalError("write_pgm: pixel count mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write image: " + path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing image: " + path);
}

}  // namespace stlkit
