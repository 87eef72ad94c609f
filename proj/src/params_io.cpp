#include <algorithm>
#include <utility>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "nbeats/model.hpp"

namespace nbeats {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  std::memcpy(&value, bytes, sizeof(T));
  return true;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("weight file " + path.string() + ": " + what);
}

}  // namespace

void save_params(const ParamStore& store, const ModelConfig& cfg, const std::filesystem::path& path) {
  if (store.parameter_count() != ParamStore(cfg).parameter_count()) {
    throw std::invalid_argument("save_params: store does not match configuration");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kWeightMagic, sizeof(kWeightMagic));
  put_le<std::uint32_t>(os, kWeightFormatVersion);
  const std::string text = serialize_config(cfg);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));

  std::uint64_t count = 0;
  store.for_each_tensor(ParamStore::ConstTensorVisitor(
      [&](const std::string&, std::size_t, std::size_t, std::span<const double>) { ++count; }));
  put_le<std::uint64_t>(os, count);
  store.for_each_tensor(ParamStore::ConstTensorVisitor(
      [&](const std::string& name, std::size_t rows, std::size_t cols, std::span<const double> data) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint64_t>(os, rows);
        put_le<std::uint64_t>(os, cols);
        for (double v : data) put_le<double>(os, v);
      }));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::pair<ModelConfig, ParamStore> load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weight file " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0) corrupt(path, "bad magic bytes");
  std::uint32_t version = 0;
  if (!get_le(is, version)) corrupt(path, "truncated header");
  if (version != kWeightFormatVersion) {
    corrupt(path, "unsupported format version " + std::to_string(version));
  }
  std::uint32_t text_len = 0;
  if (!get_le(is, text_len)) corrupt(path, "truncated header");
  std::string text(text_len, '\0');
  if (!is.read(text.data(), text_len)) corrupt(path, "truncated model configuration");
  ModelConfig cfg = parse_config(text);
  ParamStore store(cfg);

  std::uint64_t count = 0;
  if (!get_le(is, count)) corrupt(path, "truncated tensor count");
  std::uint64_t expected = 0;
  std::as_const(store).for_each_tensor(ParamStore::ConstTensorVisitor(
      [&](const std::string&, std::size_t, std::size_t, std::span<const double>) { ++expected; }));
  if (count != expected) {
    corrupt(path, "tensor count " + std::to_string(count) + " does not match configuration (" +
                      std::to_string(expected) + ")");
  }
  store.for_each_tensor(ParamStore::TensorVisitor(
      [&](const std::string& name, std::size_t rows, std::size_t cols, std::span<double> data) {
        std::uint32_t name_len = 0;
        if (!get_le(is, name_len)) corrupt(path, "truncated before tensor " + name);
        std::string stored(name_len, '\0');
        if (!is.read(stored.data(), name_len)) corrupt(path, "truncated in name of tensor " + name);
        if (stored != name) corrupt(path, "expected tensor " + name + ", found " + stored);
        std::uint64_t r = 0, c = 0;
        if (!get_le(is, r) || !get_le(is, c)) corrupt(path, "truncated in shape of tensor " + name);
        if (r != rows || c != cols) {
          corrupt(path, "tensor " + name + " has shape " + std::to_string(r) + "x" + std::to_string(c) +
                            ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
        }
        for (double& v : data) {
          if (!get_le(is, v)) corrupt(path, "truncated in data of tensor " + name);
        }
      }));
  return {std::move(cfg), std::move(store)};
}

ParamStore load_params(const std::filesystem::path& path, const ModelConfig& expected) {
  auto [cfg, store] = load_params(path);
  if (!(cfg == expected)) {
    throw std::runtime_error("weight file " + path.string() +
                             ": stored model configuration does not match the expected one");
  }
  return std::move(store);
}

}  // namespace nbeats
