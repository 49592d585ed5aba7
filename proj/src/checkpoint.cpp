#include "sadl/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sadl/errors.hpp"

namespace sadl {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'D', 'L'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError(path + ": truncated checkpoint");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                      (static_cast<std::uint8_t>(buf[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  float f32() {
    std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::add(const std::string& name, const Tensor& t) {
  NamedTensor nt;
  nt.name = name;
  nt.shape = t.shape;
  nt.data.resize(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i)
    nt.data[static_cast<std::size_t>(i)] = static_cast<float>(t.data[i]);
  tensors.push_back(std::move(nt));
}

Tensor Checkpoint::to_tensor(const NamedTensor& nt) const {
  Tensor t = Tensor::zeros(nt.shape);
  for (std::size_t i = 0; i < nt.data.size(); ++i)
    t.data[static_cast<Index>(i)] = static_cast<double>(nt.data[i]);
  return t;
}

std::size_t Checkpoint::byte_size() const {
  std::size_t n = 4 + 4 + 4;  // magic, version, count
  for (const auto& t : tensors)
    n += 2 + t.name.size() + 1 + 4 * t.shape.size() + 4 * t.data.size();
  return n + metadata.size();
}

void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.reserve(ckpt.byte_size());
  out.append(kMagic, 4);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw Error("checkpoint: tensor name too long");
    if (t.shape.size() > 0xff) throw Error("checkpoint: tensor rank too large");
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.shape.size()));
    Index n = 1;
    for (Index d : t.shape) {
      put_u32(out, static_cast<std::uint32_t>(d));
      n *= d;
    }
    if (n != static_cast<Index>(t.data.size()))
      throw Error("checkpoint: tensor '" + t.name + "' dims/data mismatch");
    for (float f : t.data) put_f32(out, f);
  }
  out.append(ckpt.metadata);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};
  if (r.bytes(4) != std::string(kMagic, 4))
    throw IoError(path + ": bad checkpoint magic");
  std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  std::uint32_t count = r.u32();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u16());
    std::uint8_t rank = r.u8();
    Index n = 1;
    for (int d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<Index>(r.u32()));
      n *= t.shape.back();
    }
    t.data.resize(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j)
      t.data[static_cast<std::size_t>(j)] = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.metadata = buf.substr(r.pos);
  return ckpt;
}

}  // namespace sadl
