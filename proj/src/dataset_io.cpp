#include "ctrlo/dataset_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "ctrlo/errors.hpp"
#include "ctrlo/synthscene.hpp"

namespace ctrlo {

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw format_error("cannot open for writing: " + path);
  }
  void u32(std::uint32_t v) { put(&v, 4); }
  void u64(std::uint64_t v) { put(&v, 8); }
  void u8(std::uint8_t v) { put(&v, 1); }
  void f32v(float v) { put(&v, 4); }
  void bytes(const void* p, std::size_t n) { put(p, n); }
  void close(const std::string& path) {
    out_.flush();
    if (!out_) throw format_error("write failed: " + path);
  }

 private:
  void put(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw format_error("cannot open: " + path);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    get(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    get(&v, 8);
    return v;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    get(&v, 1);
    return v;
  }
  float f32v() {
    float v;
    get(&v, 4);
    return v;
  }
  void bytes(void* p, std::size_t n) { get(p, n); }
  std::uint64_t offset() const { return offset_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw format_error(path_ + ": " + what + " at offset " + std::to_string(offset_));
  }

 private:
  void get(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) fail("truncated file");
    offset_ += n;
  }
  std::ifstream in_;
  std::string path_;
  std::uint64_t offset_ = 0;
};

constexpr char kMagic[4] = {'C', 'T', 'L', 'O'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void write_features(const Dataset& ds, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u64(static_cast<std::uint64_t>(ds.size()));
  for (const Sample& s : ds) {
    const int g = s.scene.grid_side;
    const int k = g * g;
    const int d_feat = static_cast<int>(s.grid.features.cols());
    w.u32(static_cast<std::uint32_t>(g));
    w.u32(static_cast<std::uint32_t>(d_feat));
    w.u32(static_cast<std::uint32_t>(s.scene.objects.size()));
    for (int p = 0; p < k; ++p)
      for (int d = 0; d < d_feat; ++d) w.f32v(static_cast<float>(s.grid.features(p, d)));
    const std::size_t mask_bytes = (static_cast<std::size_t>(k) + 7) / 8;
    for (const ObjectSpec& o : s.scene.objects) {
      w.u32(static_cast<std::uint32_t>(o.category));
      w.f32v(static_cast<float>(o.cx));
      w.f32v(static_cast<float>(o.cy));
      std::vector<std::uint8_t> bits(mask_bytes, 0);
      for (int p = 0; p < k; ++p)
        if (o.mask[static_cast<std::size_t>(p)])
          bits[static_cast<std::size_t>(p) / 8] |= static_cast<std::uint8_t>(1u << (p % 8));
      w.bytes(bits.data(), bits.size());
    }
    const int m = s.queries.count();
    w.u32(static_cast<std::uint32_t>(m));
    const int d_emb = static_cast<int>(s.queries.lang_codes.cols());
    for (int i = 0; i < m; ++i) {
      w.u32(static_cast<std::uint32_t>(s.queries.object_ids[static_cast<std::size_t>(i)]));
      w.u32(static_cast<std::uint32_t>(d_emb));
      for (int d = 0; d < d_emb; ++d) w.f32v(static_cast<float>(s.queries.lang_codes(i, d)));
      const bool hp = s.queries.has_point[static_cast<std::size_t>(i)] != 0;
      w.u8(hp ? 1 : 0);
      if (hp) {
        w.f32v(static_cast<float>(s.queries.points(i, 0)));
        w.f32v(static_cast<float>(s.queries.points(i, 1)));
      }
    }
  }
  w.close(path);
}

Dataset ingest_features(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint64_t count = r.u64();

  Dataset ds;
  ds.reserve(count);
  for (std::uint64_t si = 0; si < count; ++si) {
    Sample s;
    const std::uint32_t g = r.u32();
    const std::uint32_t d_feat = r.u32();
    const std::uint32_t n_obj = r.u32();
    if (g == 0 || g > 4096) r.fail("implausible grid side " + std::to_string(g));
    if (d_feat == 0 || d_feat > 65536) r.fail("implausible feature width");
    const std::uint64_t k = static_cast<std::uint64_t>(g) * g;
    s.scene.grid_side = static_cast<int>(g);
    s.grid.grid_side = static_cast<int>(g);
    s.grid.features.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d_feat));
    for (std::uint64_t p = 0; p < k; ++p)
      for (std::uint32_t d = 0; d < d_feat; ++d)
        s.grid.features(static_cast<Eigen::Index>(p), d) = static_cast<double>(r.f32v());
    const std::size_t mask_bytes = (static_cast<std::size_t>(k) + 7) / 8;
    for (std::uint32_t o = 0; o < n_obj; ++o) {
      ObjectSpec obj;
      obj.category = static_cast<int>(r.u32());
      obj.cx = static_cast<double>(r.f32v());
      obj.cy = static_cast<double>(r.f32v());
      std::vector<std::uint8_t> bits(mask_bytes);
      r.bytes(bits.data(), bits.size());
      obj.mask.assign(static_cast<std::size_t>(k), 0);
      for (std::uint64_t p = 0; p < k; ++p)
        obj.mask[static_cast<std::size_t>(p)] =
            (bits[static_cast<std::size_t>(p) / 8] >> (p % 8)) & 1u;
      s.scene.objects.push_back(std::move(obj));
    }
    const std::uint32_t m = r.u32();
    std::uint32_t d_emb = 0;
    s.queries.has_point.assign(m, 0);
    s.queries.object_ids.assign(m, 0);
    s.queries.points = Eigen::MatrixXd::Zero(m, 2);
    for (std::uint32_t i = 0; i < m; ++i) {
      const std::uint32_t oid = r.u32();
      const std::uint32_t de = r.u32();
      if (de == 0 || de > 65536) r.fail("implausible query width");
      if (i == 0) {
        d_emb = de;
        s.queries.lang_codes.resize(m, de);
      } else if (de != d_emb) {
        r.fail("inconsistent query widths within sample " + std::to_string(si));
      }
      if (oid >= n_obj) r.fail("query references object " + std::to_string(oid) + " of sample " +
                               std::to_string(si));
      s.queries.object_ids[i] = static_cast<int>(oid);
      for (std::uint32_t d = 0; d < de; ++d)
        s.queries.lang_codes(i, d) = static_cast<double>(r.f32v());
      const std::uint8_t hp = r.u8();
      if (hp > 1) r.fail("invalid has_point flag");
      s.queries.has_point[i] = hp;
      if (hp) {
        s.queries.points(i, 0) = static_cast<double>(r.f32v());
        s.queries.points(i, 1) = static_cast<double>(r.f32v());
      }
    }
    if (m == 0) s.queries.lang_codes.resize(0, 0);
    try {
      validate_sample(s, "sample " + std::to_string(si));
    } catch (const format_error& e) {
      throw format_error(path + ": " + e.what() + " (near offset " + std::to_string(r.offset()) +
                         ")");
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ctrlo
