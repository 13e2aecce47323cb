// SPDX-License-Identifier: Apache-2.0

#include "fddiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fddiff/errors.hpp"

namespace fddiff {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'D', 'F'};
constexpr std::string_view kStepKey = "step = ";

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}

  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string text(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), std::size_t(n));
    pos_ += std::size_t(n);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint truncated");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<unsigned char> serialize(const Checkpoint& ckpt) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, ckpt.version);
  std::string text = ckpt.config_text;
  if (!text.empty() && text.back() != '\n') text += '\n';
  text += std::string(kStepKey) + std::to_string(ckpt.step) + "\n";
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put_le<std::uint64_t>(out, ckpt.entries.size());
  for (const auto& e : ckpt.entries) {
    std::uint64_t expected = 1;
    for (auto d : e.dims) expected *= d;
    if (expected != e.values.size()) throw ConsistencyError("checkpoint entry '" + e.name + "': dims do not match values");
    put_le<std::uint64_t>(out, e.name.size());
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_le<std::uint64_t>(out, e.dims.size());
    for (auto d : e.dims) put_le<std::uint64_t>(out, d);
    for (float v : e.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  Reader r(bytes);
  r.text(4);
  Checkpoint ckpt;
  ckpt.version = r.le<std::uint32_t>();
  if (ckpt.version != Checkpoint::kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(ckpt.version));
  const std::string text = r.text(r.le<std::uint64_t>());

  // The step line is the last one; everything before it is the config.
  const auto pos = text.rfind(kStepKey);
  if (pos == std::string::npos || (pos != 0 && text[pos - 1] != '\n'))
    throw DataError("checkpoint: missing step");
  ckpt.config_text = text.substr(0, pos);
  std::istringstream step_in(text.substr(pos + kStepKey.size()));
  if (!(step_in >> ckpt.step)) throw DataError("checkpoint: malformed step");

  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    Checkpoint::Entry e;
    e.name = r.text(r.le<std::uint64_t>());
    const auto rank = r.le<std::uint64_t>();
    if (rank > 8) throw DataError("checkpoint: implausible rank for '" + e.name + "'");
    std::uint64_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      e.dims.push_back(r.le<std::uint64_t>());
      n *= e.dims.back();
    }
    if (n > (std::uint64_t(1) << 32)) throw DataError("checkpoint: entry '" + e.name + "' too large");
    e.values.resize(std::size_t(n));
    for (auto& v : e.values) v = std::bit_cast<float>(r.le<std::uint32_t>());
    ckpt.entries.push_back(std::move(e));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fddiff
