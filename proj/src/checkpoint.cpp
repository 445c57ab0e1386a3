#include "sptseg/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sptseg/errors.hpp"

namespace sptseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'T', 'S', 'E', 'G', '1', '\0'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

std::vector<std::uint8_t> save_checkpoint(const CheckpointData& data, DType dtype) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.config_text.size()));
  w.bytes(data.config_text.data(), data.config_text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, value] : data.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(value.rank()));
    for (auto e : value.shape()) w.put<std::uint64_t>(e);
    for (double v : value.data()) {
      if (dtype == DType::kF32) {
        w.put<float>(static_cast<float>(v));
      } else {
        w.put<double>(v);
      }
    }
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_of(buf);
  w.put<std::uint32_t>(crc);
  return std::move(buf);
}

CheckpointData load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 4) throw CheckpointError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("checkpoint: bad magic");

  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "checkpoint CRC mismatch: stored %08x, computed %08x", stored, actual);
    throw CheckpointError(buf);
  }

  Reader r(body);
  r.take(sizeof kMagic, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointData data;
  const auto cfg_len = r.get<std::uint32_t>("config length");
  const auto* cfg = r.take(cfg_len, "config");
  data.config_text.assign(reinterpret_cast<const char*>(cfg), cfg_len);
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const auto name_len = r.get<std::uint32_t>("name length");
    const auto* name = r.take(name_len, "name");
    nt.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag != static_cast<std::uint8_t>(DType::kF32) && tag != static_cast<std::uint8_t>(DType::kF64)) {
      throw CheckpointError("checkpoint: unknown dtype tag " + std::to_string(tag) + " for " + nt.name);
    }
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e == 0 || e > r.remaining()) throw CheckpointError("checkpoint: bad extent for " + nt.name);
      shape.push_back(static_cast<std::size_t>(e));
      n *= static_cast<std::size_t>(e);
      if (n > r.remaining()) throw CheckpointError("checkpoint truncated in payload of " + nt.name);
    }
    std::vector<double> values(n);
    for (auto& v : values) {
      v = tag == static_cast<std::uint8_t>(DType::kF32) ? static_cast<double>(r.get<float>("payload"))
                                                         : r.get<double>("payload");
    }
    try {
      nt.value = Tensor(std::move(shape), std::move(values));
    } catch (const std::exception& e) {
      throw CheckpointError("checkpoint: tensor " + nt.name + ": " + e.what());
    }
    data.tensors.push_back(std::move(nt));
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes after tensor table");
  return data;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sptseg
