#include "mixseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "mixseq/error.hpp"

namespace mixseq {
namespace {

constexpr char kMagic[8] = {'M', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};

void put(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put(out, s.size(), 4);
  out += s;
}

class Reader {
 public:
  Reader(const std::string& d, std::string src) : d_(d), src_(std::move(src)) {}
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str() {
    const auto n = static_cast<std::size_t>(get(4));
    need(n);
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > d_.size()) throw DataError(src_ + ": truncated checkpoint");
  }
  const std::string& d_;
  std::string src_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::string& kind,
                      const PipelineConfig& config, const ad::ParameterStore& parameters) {
  std::string out(kMagic, sizeof(kMagic));
  put(out, kCheckpointFormatVersion, 4);
  put_str(out, kind);
  put_str(out, serialize_config(config));
  put(out, parameters.size(), 4);
  for (const auto& p : parameters.all()) {
    put_str(out, p.name);
    put(out, static_cast<std::uint64_t>(p.value.rows()), 4);
    put(out, static_cast<std::uint64_t>(p.value.cols()), 4);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      put(out, std::bit_cast<std::uint64_t>(p.value.data()[i]), 8);
    }
  }
  const auto c = crc32(0, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
  put(out, c, 4);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string data = buf.str();
  const std::string src = path.string();
  if (data.size() < sizeof(kMagic) + 8 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(src + ": not a mixseq checkpoint");
  }
  const std::size_t body = data.size() - 4;
  const auto want = crc32(0, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(body));
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[body + i])) << (8 * i);
  }
  if (want != stored) throw DataError(src + ": checkpoint checksum mismatch");

  Reader r(data, src);
  r.get(4);
  r.get(4);  // magic, 8 bytes
  const auto version = r.get(4);
  if (version != kCheckpointFormatVersion) {
    throw DataError(src + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = r.str();
  if (!expected_kind.empty() && ck.kind != expected_kind) {
    throw DataError(src + ": expected a " + expected_kind + " checkpoint, found " + ck.kind);
  }
  ck.config = parse_config(r.str());
  const auto count = r.get(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rows = static_cast<Eigen::Index>(r.get(4));
    const auto cols = static_cast<Eigen::Index>(r.get(4));
    if (static_cast<std::size_t>(rows * cols) * 8 > data.size()) {
      throw DataError(src + ": implausible shape for " + name);
    }
    ad::Matrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::bit_cast<double>(r.get(8));
    ck.parameters.add(std::move(name), std::move(m));
  }
  if (r.pos() != body) throw DataError(src + ": trailing bytes in checkpoint");
  return ck;
}

}  // namespace mixseq
