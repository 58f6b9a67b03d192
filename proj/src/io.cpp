#include "cbct/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "cbct/error.hpp"

namespace cbct {

namespace {

class Writer {
public:
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  template <class T>
  void le(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(b, b + sizeof(T));
    bytes(b, sizeof(T));
  }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot write " + path);
    out.write(buf_.data(), std::streamsize(buf_.size()));
    if (!out)
      throw IoError("write failed for " + path);
  }

private:
  std::vector<char> buf_;
};

class Reader {
public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw IoError("cannot open " + path);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& path() const { return path_; }
  void expect_magic(const char magic[4]) {
    if (remaining() < 4 || std::memcmp(buf_.data() + pos_, magic, 4) != 0)
      throw FormatError(path_ + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
    pos_ += 4;
  }
  template <class T>
  T le() {
    if (remaining() < sizeof(T))
      throw FormatError(path_ + ": header truncated");
    char b[sizeof(T)];
    std::memcpy(b, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::vector<double> floats(std::size_t count) {
    const std::size_t need = count * sizeof(float);
    if (remaining() != need) {
      if (remaining() < need)
        throw TruncationError(need, remaining());
      throw FormatError(path_ + ": " + std::to_string(remaining() - need) +
                        " trailing bytes after payload");
    }
    std::vector<double> out(count);
    for (double& v : out)
      v = double(le<float>());
    return out;
  }

private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

void put_payload(Writer& w, const std::vector<double>& data) {
  for (double v : data)
    w.le<float>(float(v));
}

void check_version(const Reader& r, std::uint32_t version) {
  if (version != kFileVersion)
    throw FormatError(r.path() + ": unsupported version " + std::to_string(version));
}

} // namespace

void write_volume(const std::string& path, const Volume3D& vol) {
  Writer w;
  w.bytes("CBVL", 4);
  w.le<std::uint32_t>(kFileVersion);
  w.le<std::uint32_t>(std::uint32_t(vol.dims().nx));
  w.le<std::uint32_t>(std::uint32_t(vol.dims().ny));
  w.le<std::uint32_t>(std::uint32_t(vol.dims().nz));
  w.le<double>(vol.voxel_size());
  put_payload(w, vol.data());
  w.save(path);
}

Volume3D read_volume(const std::string& path) {
  Reader r(path);
  r.expect_magic("CBVL");
  check_version(r, r.le<std::uint32_t>());
  Dims3 d;
  d.nx = r.le<std::uint32_t>();
  d.ny = r.le<std::uint32_t>();
  d.nz = r.le<std::uint32_t>();
  const double vs = r.le<double>();
  if (d.count() == 0 || !(vs > 0.0))
    throw FormatError(path + ": invalid volume header");
  return Volume3D(d, vs, r.floats(d.count()));
}

void write_projections(const std::string& path, const ProjectionStack& proj) {
  Writer w;
  w.bytes("CBPR", 4);
  w.le<std::uint32_t>(kFileVersion);
  w.le<std::uint32_t>(std::uint32_t(proj.n_views()));
  w.le<std::uint32_t>(std::uint32_t(proj.det_rows()));
  w.le<std::uint32_t>(std::uint32_t(proj.det_cols()));
  w.le<double>(proj.pixel_pitch());
  put_payload(w, proj.data());
  w.save(path);
}

ProjectionStack read_projections(const std::string& path) {
  Reader r(path);
  r.expect_magic("CBPR");
  check_version(r, r.le<std::uint32_t>());
  const std::size_t views = r.le<std::uint32_t>();
  const std::size_t rows = r.le<std::uint32_t>();
  const std::size_t cols = r.le<std::uint32_t>();
  const double pitch = r.le<double>();
  if (views * rows * cols == 0 || !(pitch > 0.0))
    throw FormatError(path + ": invalid projection header");
  return ProjectionStack(views, rows, cols, pitch, r.floats(views * rows * cols));
}

ProjectionStack import_raw_projections(const std::string& path, std::size_t n_views,
                                       std::size_t rows, std::size_t cols, double pixel_pitch) {
  Reader r(path);
  return ProjectionStack(n_views, rows, cols, pixel_pitch, r.floats(n_views * rows * cols));
}

void write_pgm(const std::string& path, std::span<const double> slice, std::size_t width,
               std::size_t height, double window, double level) {
  if (slice.size() != width * height)
    throw DimensionMismatch("pgm: slice size does not match width*height");
  if (!(window > 0.0))
    throw InvalidSpec("pgm: window must be positive");
  std::ostringstream header;
  header << "P5\n" << width << ' ' << height << "\n255\n";
  Writer w;
  const std::string h = header.str();
  w.bytes(h.data(), h.size());
  const double lo = level - window / 2.0;
  for (double v : slice) {
    const double t = std::clamp((v - lo) / window, 0.0, 1.0);
    w.le<std::uint8_t>(std::uint8_t(std::lround(t * 255.0)));
  }
  w.save(path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace cbct
