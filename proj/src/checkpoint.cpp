#include "dcsw/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'S', 'W'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  const std::uint8_t* take(std::size_t n) {
    if (in_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const std::uint8_t* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.bytes(data.fingerprint.data(), data.fingerprint.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(data.entries.size()));
  for (const auto& [name, t] : data.entries) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ConfigError("parameter name too long: " + name.substr(0, 32) + "...");
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw ConfigError("parameter '" + name + "' rank too large");
    }
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(r.take(4), kMagic, 4) != 0) {
    throw DataError("not a checkpoint: bad magic bytes");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData data;
  std::memcpy(data.fingerprint.data(), r.take(data.fingerprint.size()), data.fingerprint.size());
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>();
    const auto* p = r.take(len);
    std::string name(reinterpret_cast<const char*>(p), len);
    const auto rank = r.le<std::uint8_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.le<std::uint32_t>();
    const std::size_t n = shape_numel(shape);
    // Reject sizes that cannot fit before allocating.
    if (n > bytes.size() / sizeof(double)) {
      throw DataError("checkpoint truncated in parameter '" + name + "'");
    }
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    data.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return data;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  write_file_bytes(path, encode_checkpoint(data));
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void save_parameters(const ParameterStore& store, const std::filesystem::path& path) {
  write_checkpoint(path, CheckpointData{store.fingerprint(), store.entries()});
}

ParameterStore load_parameters(const std::filesystem::path& path, const Fingerprint& expected) {
  CheckpointData data = read_checkpoint(path);
  if (data.fingerprint != expected) {
    throw ConfigError("checkpoint " + path.string() + " fingerprint " + to_hex(data.fingerprint) +
                      " does not match configuration " + to_hex(expected));
  }
  ParameterStore store(data.fingerprint);
  for (auto& [name, t] : data.entries) store.add(name, t.clone(true));
  return store;
}

}  // namespace dcsw
