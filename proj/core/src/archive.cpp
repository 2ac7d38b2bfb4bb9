#include "tased/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include <fmt/format.h>

#include "tased/error.hpp"

namespace tased {

namespace {

constexpr char kMagic[4] = {'T', 'A', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError(fmt::format("archive truncated while reading {} at byte {}", what, pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_archive(const std::vector<NamedTensor>& entries) {
  std::set<std::string> seen;
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const NamedTensor& e : entries) {
    if (!seen.insert(e.name).second) throw IoError(fmt::format("duplicate archive entry '{}'", e.name));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : e.tensor.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

std::vector<NamedTensor> decode_archive(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw IoError("not a TASD archive (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw IoError(fmt::format("unsupported archive version {}", version));
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<NamedTensor> entries;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name(r.take(name_len, "name"));
    if (!seen.insert(name).second) throw IoError(fmt::format("duplicate archive entry '{}'", name));
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) throw IoError(fmt::format("entry '{}': unsupported dtype code {}", name, dtype));
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>("dims");
      if (dim == 0) throw IoError(fmt::format("entry '{}': zero-sized dimension", name));
      if (numel > r.remaining() / dim) {
        throw IoError(fmt::format("entry '{}': payload larger than the remaining file", name));
      }
      numel *= dim;
      shape.push_back(static_cast<std::size_t>(dim));
    }
    if (numel * 4 > r.remaining()) {
      throw IoError(fmt::format("entry '{}': payload needs {} bytes, {} remain", name, numel * 4, r.remaining()));
    }
    Tensor t(shape);
    for (double& v : t.data()) v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("payload")));
    entries.push_back({std::move(name), std::move(t)});
  }
  if (r.remaining() != 0) {
    throw IoError(fmt::format("archive has {} trailing bytes after {} entries", r.remaining(), count));
  }
  return entries;
}

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const std::string bytes = encode_archive(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::vector<NamedTensor> read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open archive '{}'", path.string()));
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_archive(bytes);
  } catch (const IoError& e) {
    throw IoError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<NamedTensor> network_state(Network& net) {
  std::vector<NamedTensor> state;
  for (const Parameter* p : net.parameters()) state.push_back({p->name, p->value});
  for (const NamedBuffer& b : net.buffers()) state.push_back({b.name, *b.tensor});
  return state;
}

void load_network_state(Network& net, const std::vector<NamedTensor>& entries, const LoadOptions& options) {
  std::map<std::string, Tensor*> targets;
  for (Parameter* p : net.parameters()) targets[p->name] = &p->value;
  for (const NamedBuffer& b : net.buffers()) targets[b.name] = b.tensor;

  std::set<std::string> loaded;
  for (const NamedTensor& e : entries) {
    if (e.name.starts_with("optimizer.")) continue;
    const auto it = targets.find(e.name);
    if (it == targets.end()) {
      if (options.allow_unknown) continue;
      throw IoError(fmt::format("archive tensor '{}' does not exist in the network", e.name));
    }
    if (it->second->shape() != e.tensor.shape()) {
      throw ShapeError(fmt::format("archive tensor '{}' has shape {}, network expects {}", e.name,
                                   shape_str(e.tensor.shape()), shape_str(it->second->shape())));
    }
    loaded.insert(e.name);
  }
  if (!options.allow_missing) {
    for (const auto& [name, tensor] : targets) {
      if (!loaded.count(name)) throw IoError(fmt::format("archive is missing network tensor '{}'", name));
    }
  }
  // All checks passed; copy.
  for (const NamedTensor& e : entries) {
    if (loaded.count(e.name)) *targets.at(e.name) = e.tensor;
  }
}

}  // namespace tased
