#include "train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace frn::train {

namespace {

constexpr char kMagic[4] = {'F', 'R', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxRecordValues = std::uint64_t{1} << 31;

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) fail(ErrorKind::truncated, what + ": truncated");
  return v;
}

Record to_record(const std::string& name, const Tensor& t) {
  Record r;
  r.name = name;
  for (std::size_t d : t.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
  auto v = t.to_vector();
  r.data.assign(v.begin(), v.end());
  return r;
}

void copy_into(const Record& r, Tensor& t) {
  Shape s(r.dims.begin(), r.dims.end());
  require(s == t.shape(), ErrorKind::data,
          "checkpoint: record '" + r.name + "' has shape " + to_string(s) + ", model expects " + to_string(t.shape()));
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto out = t.data_mut<T>();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(r.data[i]);
  });
}

}  // namespace

const Record* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write to a sibling and rename so a crash never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot write " + tmp.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, ckpt.step);
    for (const auto& r : ckpt.records) {
      require(r.name.size() <= 0xFFFF, ErrorKind::contract, "checkpoint: record name too long");
      require(r.dims.size() <= 0xFF, ErrorKind::contract, "checkpoint: rank too large");
      std::uint64_t n = 1;
      for (auto d : r.dims) n *= d;
      require(n == r.data.size(), ErrorKind::contract, "checkpoint: record '" + r.name + "' size mismatch");
      put<std::uint16_t>(os, static_cast<std::uint16_t>(r.name.size()));
      os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
      put<std::uint8_t>(os, static_cast<std::uint8_t>(r.dims.size()));
      for (auto d : r.dims) put<std::uint32_t>(os, d);
      os.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * 4));
    }
    if (!os) fail(ErrorKind::io, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open " + path.string());
  const std::string what = "FRNW " + path.string();
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4) fail(ErrorKind::truncated, what + ": truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::format, what + ": bad magic");
  const auto version = get<std::uint32_t>(is, what);
  if (version != kVersion) fail(ErrorKind::format, what + ": unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.step = get<std::uint64_t>(is, what);
  while (is.peek() != std::char_traits<char>::eof()) {
    Record r;
    const auto len = get<std::uint16_t>(is, what);
    r.name.resize(len);
    is.read(r.name.data(), len);
    if (is.gcount() != len) fail(ErrorKind::truncated, what + ": truncated record name");
    const auto rank = get<std::uint8_t>(is, what);
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
      r.dims.push_back(get<std::uint32_t>(is, what));
      n *= r.dims.back();
      if (n > kMaxRecordValues) fail(ErrorKind::overflow, what + ": record '" + r.name + "' too large");
    }
    r.data.resize(n);
    is.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(n * 4));
    if (is.gcount() != static_cast<std::streamsize>(n * 4))
      fail(ErrorKind::truncated, what + ": truncated data of '" + r.name + "'");
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ParameterStore& params, const Adam* adam, std::uint64_t step,
                           const std::string& config_json) {
  Checkpoint c;
  c.step = step;
  for (const auto& [name, t] : params.entries()) c.records.push_back(to_record(name, t));
  if (adam) {
    const auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) c.records.push_back(to_record("adam.m/" + entries[i].first, adam->slots()[i].m));
    for (std::size_t i = 0; i < entries.size(); ++i) c.records.push_back(to_record("adam.v/" + entries[i].first, adam->slots()[i].v));
  }
  Record cfg{kConfigRecord, {static_cast<std::uint32_t>(config_json.size())}, {}};
  for (unsigned char ch : config_json) cfg.data.push_back(static_cast<float>(ch));
  c.records.push_back(std::move(cfg));
  return c;
}

void restore_checkpoint(const Checkpoint& ckpt, ParameterStore& params, Adam* adam) {
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = entries[i];
    const Record* r = ckpt.find(name);
    require(r != nullptr, ErrorKind::data, "checkpoint: missing parameter '" + name + "'");
    copy_into(*r, entries[i].second);
    if (adam) {
      const Record* m = ckpt.find("adam.m/" + name);
      const Record* v = ckpt.find("adam.v/" + name);
      require(m && v, ErrorKind::data, "checkpoint: missing optimizer moments for '" + name + "'");
      copy_into(*m, adam->slots()[i].m);
      copy_into(*v, adam->slots()[i].v);
    }
  }
  // One optimizer update per training step.
  if (adam) adam->set_steps(ckpt.step);
}

std::string checkpoint_config(const Checkpoint& ckpt) {
  const Record* r = ckpt.find(kConfigRecord);
  if (!r) return {};
  std::string s;
  s.reserve(r->data.size());
  for (float v : r->data) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

}  // namespace frn::train
