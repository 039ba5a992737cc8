#include "redae/image_io.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include <fmt/format.h>

#include "redae/errors.hpp"

namespace redae::io {

namespace {

[[noreturn]] void malformed(const std::string& name, const std::string& why) {
  throw DataError(DataErrorKind::kMalformedHeader,
                  fmt::format("{}: malformed PNM header: {}", name, why));
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::vector<std::uint8_t>& f, std::size_t& pos,
                       const std::string& name) {
  while (pos < f.size()) {
    if (f[pos] == '#') {
      while (pos < f.size() && f[pos] != '\n') ++pos;
    } else if (std::isspace(f[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < f.size() && !std::isspace(f[pos]) && f[pos] != '#') {
    tok.push_back(static_cast<char>(f[pos++]));
  }
  if (tok.empty()) malformed(name, "truncated header");
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::string& name,
                      const char* what) {
  if (tok.empty() || tok.size() > 9) malformed(name, fmt::format("bad {} '{}'", what, tok));
  std::size_t v = 0;
  for (char ch : tok) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) {
      malformed(name, fmt::format("bad {} '{}'", what, tok));
    }
    v = v * 10 + static_cast<std::size_t>(ch - '0');
  }
  if (v == 0) malformed(name, fmt::format("{} must be positive", what));
  return v;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(DataErrorKind::kIo, fmt::format("cannot open {}", path.string()));
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(DataErrorKind::kIo, fmt::format("cannot write {}", path.string()));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw DataError(DataErrorKind::kIo, fmt::format("write failed for {}", path.string()));
  }
}

Raster parse_pnm(const std::vector<std::uint8_t>& f, const std::string& name) {
  std::size_t pos = 0;
  const std::string magic = next_token(f, pos, name);
  Raster r;
  if (magic == "P5") {
    r.channels = 1;
  } else if (magic == "P6") {
    r.channels = 3;
  } else {
    malformed(name, fmt::format("unsupported magic '{}' (need P5 or P6)", magic));
  }
  r.w = parse_dim(next_token(f, pos, name), name, "width");
  r.h = parse_dim(next_token(f, pos, name), name, "height");
  const std::size_t maxval = parse_dim(next_token(f, pos, name), name, "maxval");
  if (maxval != 255) malformed(name, fmt::format("maxval {} (only 255 supported)", maxval));
  if (pos >= f.size() || !std::isspace(f[pos])) malformed(name, "missing separator after maxval");
  ++pos;
  const std::size_t expected = r.h * r.w * r.channels;
  if (f.size() - pos != expected) {
    malformed(name, fmt::format("{} pixel bytes, expected {}", f.size() - pos, expected));
  }
  r.bytes.assign(f.begin() + static_cast<std::ptrdiff_t>(pos), f.end());
  return r;
}

Raster read_pnm(const std::filesystem::path& path) {
  return parse_pnm(read_file(path), path.string());
}

std::vector<std::uint8_t> encode_pnm(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) {
    throw DataError(DataErrorKind::kDimensionMismatch,
                    fmt::format("cannot encode {} channels as PNM", r.channels));
  }
  if (r.bytes.size() != r.h * r.w * r.channels) {
    throw DataError(DataErrorKind::kDimensionMismatch, "raster size does not match its shape");
  }
  const std::string header =
      fmt::format("{}\n{} {}\n255\n", r.channels == 1 ? "P5" : "P6", r.w, r.h);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  return out;
}

void write_pnm(const std::filesystem::path& path, const Raster& r) {
  write_file(path, encode_pnm(r));
}

}  // namespace redae::io
