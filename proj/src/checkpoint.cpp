#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "asag/model.hpp"

namespace asag::model {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "checkpoints assume IEEE-754 doubles");

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(std::span<const unsigned char> bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint " + path_ + " is truncated");
  }
  std::span<const unsigned char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path) {
  Writer w;
  w.u32(kCheckpointVersion);
  w.text(config.serialize());
  auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (auto e : tensor.shape()) w.u64(e);
    for (double v : tensor.data()) w.f64(v);
  }
  w.u64(fnv1a64(w.bytes()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw DataError("checkpoint " + path + " is truncated (checksum mismatch)");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (fnv1a64(std::span<const unsigned char>(bytes.data(), body)) != stored) {
    throw DataError("checkpoint " + path + " failed its checksum (corrupted or truncated)");
  }

  Reader r(std::span<const unsigned char>(bytes.data(), body), path);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + path + " has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }
  ModelConfig config = ModelConfig::parse(r.text());
  const ModelConfig& target = expected ? *expected : config;

  Rng scratch(0);
  ModelParams params = init_params(target, scratch);
  auto slots = params.named();
  const auto count = r.u32();
  if (count != slots.size()) {
    throw ShapeError("checkpoint " + path + " holds " + std::to_string(count) + " tensors, config expects " +
                     std::to_string(slots.size()));
  }
  for (auto& [name, tensor] : slots) {
    const std::string stored_name = r.text();
    if (stored_name != name) {
      throw ShapeError("checkpoint tensor '" + stored_name + "' found where '" + name + "' was expected");
    }
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    if (shape != tensor.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                       ", config expects " + shape_str(tensor.shape()));
    }
    for (auto& v : tensor.mutable_data()) v = r.f64();
  }
  if (!r.done()) throw DataError("checkpoint " + path + " has trailing bytes");
  return {std::move(params), target};
}

}  // namespace asag::model
