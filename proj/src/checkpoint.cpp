#include "ctrlo/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ctrlo/errors.hpp"

namespace ctrlo {

namespace {
constexpr char kMagic[4] = {'C', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get(std::ifstream& in, void* p, std::size_t n, const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n))
    throw format_error(path + ": truncated checkpoint");
}

template <class T>
T get_val(std::ifstream& in, const std::string& path) {
  T v;
  get(in, &v, sizeof v, path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& reg,
                     const std::string& config_echo) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw format_error("cannot open checkpoint for writing: " + path);
  put(out, kMagic, 4);
  put(out, &kVersion, 4);
  const std::uint64_t clen = config_echo.size();
  put(out, &clen, 8);
  put(out, config_echo.data(), config_echo.size());
  const std::uint64_t count = reg.size();
  put(out, &count, 8);
  for (const ParamRegistry::Entry& e : reg.entries()) {
    const std::uint32_t nlen = static_cast<std::uint32_t>(e.name.size());
    put(out, &nlen, 4);
    put(out, e.name.data(), e.name.size());
    const std::uint32_t ndims = 2;
    const std::uint32_t rows = static_cast<std::uint32_t>(e.value->rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(e.value->cols());
    put(out, &ndims, 4);
    put(out, &rows, 4);
    put(out, &cols, 4);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        const double v = (*e.value)(r, c);
        put(out, &v, 8);
      }
  }
  out.flush();
  if (!out) throw format_error("checkpoint write failed: " + path);
}

namespace {

std::string open_and_read_config(std::ifstream& in, const std::string& path) {
  char magic[4];
  get(in, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0) throw format_error(path + ": bad checkpoint magic");
  const auto version = get_val<std::uint32_t>(in, path);
  if (version != kVersion)
    throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto clen = get_val<std::uint64_t>(in, path);
  std::string cfg(clen, '\0');
  get(in, cfg.data(), clen, path);
  return cfg;
}

}  // namespace

std::string read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open checkpoint: " + path);
  return open_and_read_config(in, path);
}

void load_checkpoint(const std::string& path, const ParamRegistry& reg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open checkpoint: " + path);
  (void)open_and_read_config(in, path);
  const auto count = get_val<std::uint64_t>(in, path);
  if (count != reg.size())
    throw config_error(path + ": checkpoint has " + std::to_string(count) +
                       " params, model expects " + std::to_string(reg.size()));
  for (const ParamRegistry::Entry& e : reg.entries()) {
    const auto nlen = get_val<std::uint32_t>(in, path);
    std::string name(nlen, '\0');
    get(in, name.data(), nlen, path);
    if (name != e.name)
      throw config_error(path + ": parameter order mismatch: got '" + name + "', expected '" +
                         e.name + "'");
    const auto ndims = get_val<std::uint32_t>(in, path);
    if (ndims != 2) throw format_error(path + ": unsupported ndims");
    const auto rows = get_val<std::uint32_t>(in, path);
    const auto cols = get_val<std::uint32_t>(in, path);
    if (rows != static_cast<std::uint32_t>(e.value->rows()) ||
        cols != static_cast<std::uint32_t>(e.value->cols()))
      throw config_error(path + ": shape mismatch for " + name);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) (*e.value)(r, c) = get_val<double>(in, path);
  }
}

}  // namespace ctrlo
