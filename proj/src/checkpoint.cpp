#include "vcediff/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace vcediff {

namespace {

constexpr char kMagic[8] = {'V', 'C', 'E', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t tensor_checksum(const Tensor& t) {
  std::string raw;
  raw.reserve(t.numel() * 8);
  for (double v : t.data()) put_f64(raw, v);
  return fnv1a64({reinterpret_cast<const unsigned char*>(raw.data()), raw.size()});
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, ckpt.metadata.size());
  out += ckpt.metadata;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::ostringstream manifest;
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (double v : t.data()) put_f64(out, v);
    manifest << name << '\t';
    for (std::size_t i = 0; i < t.rank(); ++i) manifest << (i ? "x" : "") << t.shape()[i];
    manifest << '\t' << hex64(tensor_checksum(t)) << '\n';
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  std::ofstream m(path.string() + ".manifest", std::ios::trunc);
  if (!m) throw FormatError("cannot write manifest for " + path.string());
  m << manifest.str();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw FormatError(path.string() + " is not a checkpoint container");
  }
  const auto version = r.uint(4);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.metadata = r.str(r.uint(8));
  const auto count = r.uint(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.str(r.uint(4));
    const auto rank = r.uint(4);
    if (rank == 0 || rank > 8) throw FormatError("tensor " + name + " has invalid rank");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.uint(8));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = std::bit_cast<double>(r.uint(8));
    ckpt.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace vcediff
