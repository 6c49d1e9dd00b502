#include "cwb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cwb/error.hpp"

namespace cwb {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::kFormat, "checkpoint truncated at byte " +
                                          std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t TensorRecord::payload_size() const {
  const std::size_t n = shape_size(shape);
  return dtype == DType::kF32 ? 4 * n : 4 + n;
}

std::size_t TensorRecord::encoded_size() const {
  return 2 + name.size() + 1 + 1 + 4 * shape.size() + payload_size();
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const EncoderConfig& c = file.config;
  w.u32(c.vocab_size);
  w.u32(c.hidden_dim);
  w.u32(c.n_layers);
  w.u32(c.n_heads);
  w.u32(c.ffn_dim);
  w.u32(c.max_seq_len);
  w.f32(c.dropout_rate);
  for (const auto& r : file.records) {
    if (r.name.size() > 0xffff || r.shape.size() > 0xff) {
      throw Error(ErrorKind::kFormat, "tensor record too large: " + r.name);
    }
    const std::size_t n = shape_size(r.shape);
    if ((r.dtype == DType::kF32 && r.f32.size() != n) ||
        (r.dtype == DType::kInt8 && r.codes.size() != n)) {
      throw Error(ErrorKind::kFormat, "payload/shape mismatch in " + r.name);
    }
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.u8(static_cast<std::uint8_t>(r.dtype));
    w.u8(static_cast<std::uint8_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.u32(static_cast<std::uint32_t>(d));
    if (r.dtype == DType::kF32) {
      for (float v : r.f32) w.f32(v);
    } else {
      w.f32(r.scale);
      w.raw(r.codes.data(), r.codes.size());
    }
  }
  return w.take();
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) {
    throw Error(ErrorKind::kFormat, "bad checkpoint magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat,
                "unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile file;
  EncoderConfig& c = file.config;
  c.vocab_size = r.u32();
  c.hidden_dim = r.u32();
  c.n_layers = r.u32();
  c.n_heads = r.u32();
  c.ffn_dim = r.u32();
  c.max_seq_len = r.u32();
  c.dropout_rate = r.f32();
  while (!r.done()) {
    TensorRecord rec;
    rec.name = r.str(r.u16());
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) {
      throw Error(ErrorKind::kFormat, "unknown dtype " + std::to_string(dtype) +
                                          " for " + rec.name);
    }
    rec.dtype = static_cast<DType>(dtype);
    const std::uint8_t rank = r.u8();
    for (std::uint8_t i = 0; i < rank; ++i) rec.shape.push_back(r.u32());
    const std::size_t n = shape_size(rec.shape);
    if (rec.dtype == DType::kF32) {
      rec.f32.resize(n);
      for (auto& v : rec.f32) v = r.f32();
    } else {
      rec.scale = r.f32();
      rec.codes.resize(n);
      for (auto& v : rec.codes) v = static_cast<std::int8_t>(r.u8());
    }
    file.records.push_back(std::move(rec));
  }
  return file;
}

std::size_t write_checkpoint_file(const CheckpointFile& file,
                                  const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
  return bytes.size();
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cwb
