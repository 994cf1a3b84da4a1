#include "xagg/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <zlib.h>

#include <nlohmann/json.hpp>

#include "xagg/rng.hpp"

namespace xagg::io {

namespace {

using nlohmann::json;

std::uint32_t read_be_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError("unexpected end of file while reading header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_le_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_le_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError("unexpected end of file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void write_le_doubles(std::ostream& out, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  // Little-endian host assumed for the raw path; byte-swapped otherwise.
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * 8));
  } else {
    for (double d : v) {
      std::uint64_t u;
      std::memcpy(&u, &d, 8);
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
}

std::vector<double> read_le_doubles(std::istream& in, std::size_t count) {
  std::vector<double> v(count);
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 8));
    if (!in) throw ParseError("truncated payload");
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      unsigned char b[8];
      in.read(reinterpret_cast<char*>(b), 8);
      if (!in) throw ParseError("truncated payload");
      std::uint64_t u = 0;
      for (int k = 0; k < 8; ++k) u |= std::uint64_t(b[k]) << (8 * k);
      std::memcpy(&v[i], &u, 8);
    }
  }
  return v;
}

json provenance_to_json(const Provenance& p) {
  json j;
  j["method"] = p.method;
  j["model_id"] = p.model_id;
  j["image_id"] = p.image_id;
  j["target_class"] = p.target_class;
  j["positive_only"] = p.positive_only;
  j["params"] = p.params;
  j["flags"] = p.flags;
  return j;
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.method = j.value("method", "");
  p.model_id = j.value("model_id", "");
  p.image_id = j.value("image_id", std::int64_t{-1});
  p.target_class = j.value("target_class", -1);
  p.positive_only = j.value("positive_only", false);
  if (j.contains("params")) {
    for (auto& [k, v] : j.at("params").items()) p.params[k] = v.get<double>();
  }
  if (j.contains("flags")) p.flags = j.at("flags").get<std::vector<std::string>>();
  return p;
}

std::vector<std::uint8_t> render_bytes(const Heatmap& e, bool clip_p99) {
  e.validate();
  double lo = *std::min_element(e.v.begin(), e.v.end());
  double hi = *std::max_element(e.v.begin(), e.v.end());
  if (clip_p99 && e.count() > 1) {
    std::vector<double> sorted = e.v;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t idx = static_cast<std::size_t>(
        std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1;
    hi = sorted[std::min(idx, sorted.size() - 1)];
  }
  std::vector<std::uint8_t> bytes(e.count());
  const double span = hi - lo;
  for (std::int64_t i = 0; i < e.count(); ++i) {
    double t = span > 0 ? (e.v[i] - lo) / span : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    bytes[i] = static_cast<std::uint8_t>(std::lround(t * 255.0));
  }
  return bytes;
}

}  // namespace

ImageTensor Dataset::image(int i) const {
  const std::int64_t count = shape.count();
  std::vector<double> v(images.begin() + static_cast<std::int64_t>(i) * count,
                        images.begin() + (static_cast<std::int64_t>(i) + 1) * count);
  return ImageTensor(shape, std::move(v), std::make_pair(0.0, 1.0));
}

Dataset Dataset::head(int count) const {
  Dataset out = *this;
  out.n = std::min(count, n);
  out.images.resize(static_cast<std::size_t>(out.n) * shape.count());
  out.labels.resize(out.n);
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw ParseError("cannot open " + images_path);
  const std::uint32_t magic_i = read_be_u32(imgs);
  if (magic_i != 0x00000803u)
    throw ParseError("bad image file magic (expected 0x00000803)");
  const std::uint32_t n = read_be_u32(imgs);
  const std::uint32_t h = read_be_u32(imgs);
  const std::uint32_t w = read_be_u32(imgs);
  std::vector<unsigned char> raw(static_cast<std::size_t>(n) * h * w);
  imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(imgs.gcount()) != raw.size())
    throw ParseError("truncated image payload");

  std::ifstream lbls(labels_path, std::ios::binary);
  if (!lbls) throw ParseError("cannot open " + labels_path);
  const std::uint32_t magic_l = read_be_u32(lbls);
  if (magic_l != 0x00000801u)
    throw ParseError("bad label file magic (expected 0x00000801)");
  const std::uint32_t nl = read_be_u32(lbls);
  if (nl != n) throw ParseError("image/label count mismatch");
  std::vector<std::uint8_t> labels(nl);
  lbls.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(nl));
  if (static_cast<std::size_t>(lbls.gcount()) != labels.size())
    throw ParseError("truncated label payload");

  Dataset d;
  d.shape = Shape3{1, static_cast<int>(h), static_cast<int>(w)};
  d.n = static_cast<int>(n);
  d.images.resize(raw.size());
  double sum = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    d.images[i] = raw[i] / 255.0;
    sum += d.images[i];
  }
  d.mean = raw.empty() ? 0.0 : sum / static_cast<double>(raw.size());
  d.labels = std::move(labels);
  return d;
}

std::string dataset_root() {
  if (const char* env = std::getenv("XAGG_DATA_DIR"); env != nullptr && *env != '\0')
    return env;
  return "data";
}

std::optional<Dataset> load_standard(const std::string& name, bool train,
                                     const std::string& root) {
  namespace fs = std::filesystem;
  const std::string prefix = train ? "train" : "t10k";
  const fs::path dir = fs::path(root) / name;
  const fs::path imgs = dir / (prefix + "-images-idx3-ubyte");
  const fs::path lbls = dir / (prefix + "-labels-idx1-ubyte");
  if (!fs::exists(imgs) || !fs::exists(lbls)) return std::nullopt;
  Dataset d = load_idx(imgs.string(), lbls.string());
  d.id = name + (train ? "-train" : "-test");
  return d;
}

std::vector<std::array<int, 4>> SyntheticSpec::resolved_layout() const {
  if (!layout.empty()) {
    if (static_cast<int>(layout.size()) != classes)
      throw ShapeError("synthetic layout must list one block per class");
    return layout;
  }
  // Disjoint grid placement: one cell per class, block centered in the cell.
  const int cell = block + 2;
  const int per_row = std::max(1, width / cell);
  std::vector<std::array<int, 4>> out;
  for (int c = 0; c < classes; ++c) {
    const int gy = c / per_row, gx = c % per_row;
    const int y = gy * cell + 1, x = gx * cell + 1;
    if (y + block > height || x + block > width)
      throw ShapeError("synthetic blocks do not fit the image");
    out.push_back({y, x, block, block});
  }
  return out;
}

SyntheticData make_synthetic(const SyntheticSpec& spec, int n) {
  if (n < 1) throw ContractError("make_synthetic requires n >= 1");
  const auto layout = spec.resolved_layout();
  // Disjointness of the class blocks.
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(spec.height) * spec.width, 0);
  for (const auto& [y, x, bh, bw] : layout) {
    for (int yy = y; yy < y + bh; ++yy) {
      for (int xx = x; xx < x + bw; ++xx) {
        std::uint8_t& cell = occupied[static_cast<std::size_t>(yy) * spec.width + xx];
        if (cell) throw ShapeError("synthetic class blocks overlap");
        cell = 1;
      }
    }
  }

  SyntheticData out;
  out.data.id = "synthetic";
  out.data.shape = Shape3{1, spec.height, spec.width};
  out.data.n = n;
  out.data.images.assign(static_cast<std::size_t>(n) * spec.height * spec.width, 0.0);
  out.data.labels.resize(n);
  RandomEngine rng(spec.seed);
  std::uniform_real_distribution<double> noise(0.0, spec.noise);
  std::uniform_real_distribution<double> bright(0.8, 1.0);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    const int cls = i % spec.classes;
    out.data.labels[i] = static_cast<std::uint8_t>(cls);
    double* img = out.data.images.data() +
                  static_cast<std::size_t>(i) * spec.height * spec.width;
    for (int p = 0; p < spec.height * spec.width; ++p) img[p] = noise(rng);
    const auto& [y, x, bh, bw] = layout[cls];
    Heatmap truth = Heatmap::zeros(spec.height, spec.width);
    for (int yy = y; yy < y + bh; ++yy) {
      for (int xx = x; xx < x + bw; ++xx) {
        img[yy * spec.width + xx] = bright(rng);
        truth.at(yy, xx) = 1.0;
      }
    }
    for (int p = 0; p < spec.height * spec.width; ++p) sum += img[p];
    truth.prov.method = "truth";
    truth.prov.image_id = i;
    out.truth.push_back(std::move(truth));
  }
  out.data.mean = sum / static_cast<double>(out.data.images.size());
  return out;
}

void write_heatmap(const std::string& path, const Heatmap& e) {
  e.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  out.write("XAGH", 4);
  const char version = 1;
  out.write(&version, 1);
  write_le_u32(out, static_cast<std::uint32_t>(e.h));
  write_le_u32(out, static_cast<std::uint32_t>(e.w));
  write_le_doubles(out, e.v);
  const std::string trailer = provenance_to_json(e.prov).dump();
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
}

Heatmap read_heatmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "XAGH", 4) != 0)
    throw ParseError("bad heatmap magic");
  char version = 0;
  in.read(&version, 1);
  if (version != 1) throw ParseError("unsupported heatmap version");
  const std::uint32_t h = read_le_u32(in);
  const std::uint32_t w = read_le_u32(in);
  Heatmap e(static_cast<int>(h), static_cast<int>(w),
            read_le_doubles(in, static_cast<std::size_t>(h) * w));
  std::string trailer((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  if (!trailer.empty()) {
    e.prov = provenance_from_json(json::parse(trailer));
  }
  return e;
}

void write_segment_map(const std::string& path, const seg::SegmentMap& m) {
  m.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  out.write("XAGS", 4);
  write_le_u32(out, static_cast<std::uint32_t>(m.h));
  write_le_u32(out, static_cast<std::uint32_t>(m.w));
  write_le_u32(out, m.count);
  for (std::uint32_t l : m.labels) write_le_u32(out, l);
}

seg::SegmentMap read_segment_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "XAGS", 4) != 0)
    throw ParseError("bad segment map magic");
  seg::SegmentMap m;
  m.h = static_cast<int>(read_le_u32(in));
  m.w = static_cast<int>(read_le_u32(in));
  m.count = read_le_u32(in);
  m.labels.resize(static_cast<std::size_t>(m.h) * m.w);
  for (std::uint32_t& l : m.labels) l = read_le_u32(in);
  m.validate();
  return m;
}

void render_pgm(const std::string& path, const Heatmap& e, bool clip_p99) {
  const std::vector<std::uint8_t> bytes = render_bytes(e, clip_p99);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  out << "P5\n" << e.w << " " << e.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void render_png(const std::string& path, const Heatmap& e, bool clip_p99) {
  const std::vector<std::uint8_t> bytes = render_bytes(e, clip_p99);
  // Raw scanlines with filter byte 0, deflated with zlib.
  std::vector<std::uint8_t> raw;
  raw.reserve(bytes.size() + e.h);
  for (int y = 0; y < e.h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), bytes.begin() + static_cast<std::size_t>(y) * e.w,
               bytes.begin() + static_cast<std::size_t>(y + 1) * e.w);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw ParseError("png deflate failed");
  comp.resize(comp_len);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
    unsigned char len[4] = {
        static_cast<unsigned char>((data.size() >> 24) & 0xff),
        static_cast<unsigned char>((data.size() >> 16) & 0xff),
        static_cast<unsigned char>((data.size() >> 8) & 0xff),
        static_cast<unsigned char>(data.size() & 0xff)};
    out.write(reinterpret_cast<const char*>(len), 4);
    out.write(type, 4);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    unsigned char cb[4] = {static_cast<unsigned char>((crc >> 24) & 0xff),
                           static_cast<unsigned char>((crc >> 16) & 0xff),
                           static_cast<unsigned char>((crc >> 8) & 0xff),
                           static_cast<unsigned char>(crc & 0xff)};
    out.write(reinterpret_cast<const char*>(cb), 4);
  };
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);
  std::vector<std::uint8_t> ihdr = {
      static_cast<std::uint8_t>((e.w >> 24) & 0xff), static_cast<std::uint8_t>((e.w >> 16) & 0xff),
      static_cast<std::uint8_t>((e.w >> 8) & 0xff),  static_cast<std::uint8_t>(e.w & 0xff),
      static_cast<std::uint8_t>((e.h >> 24) & 0xff), static_cast<std::uint8_t>((e.h >> 16) & 0xff),
      static_cast<std::uint8_t>((e.h >> 8) & 0xff),  static_cast<std::uint8_t>(e.h & 0xff),
      8,  // bit depth
      0,  // grayscale
      0, 0, 0};
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << header[i];
  }
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw ShapeError("csv row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::uint32_t file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  uLong crc = crc32(0L, Z_NULL, 0);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf),
                static_cast<uInt>(in.gcount()));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace xagg::io
