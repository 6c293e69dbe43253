#include <cstring>
#include <fstream>

#include "dru/model.hpp"

namespace dru {
namespace {

constexpr char kMagic[7] = {'D', 'R', 'U', '1', '0', '4', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_record(std::ostream& os, const std::string& name, const Tensor4& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const Shape4 s = t.shape();
  put_u32(os, static_cast<std::uint32_t>(s.n));
  put_u32(os, static_cast<std::uint32_t>(s.c));
  put_u32(os, static_cast<std::uint32_t>(s.h));
  put_u32(os, static_cast<std::uint32_t>(s.w));
  const real_t* p = t.data();
  for (std::int64_t i = 0; i < t.numel(); ++i) put_f32(os, static_cast<float>(p[i]));
}

}  // namespace

void save_checkpoint(const ModelGraph& model, const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor4*>>& extra) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kVersion);
  const ModelConfig& cfg = model.config();
  put_u32(os, static_cast<std::uint32_t>(cfg.n_class));
  put_f32(os, static_cast<float>(cfg.dropout_rate));
  put_u32(os, static_cast<std::uint32_t>(cfg.in_channels));
  put_u32(os, static_cast<std::uint32_t>(cfg.width_div));
  put_u64(os, model.params().items().size() + extra.size());
  for (const auto& p : model.params().items()) put_record(os, p->name, p->value);
  for (const auto& [name, t] : extra) put_record(os, name, *t);
  if (!os) throw DataError("checkpoint: write failed for '" + path + "'");
}

ModelGraph load_checkpoint(const std::string& path, std::vector<CheckpointExtra>* extra_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic bytes in '" + path + "'");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.n_class = get_u32(is);
  cfg.dropout_rate = static_cast<real_t>(get_f32(is));
  cfg.in_channels = get_u32(is);
  cfg.width_div = get_u32(is);
  ModelGraph model = ModelGraph::build(cfg, /*init_weights=*/false);

  const std::uint64_t records = get_u64(is);
  for (std::uint64_t r = 0; r < records; ++r) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint: truncated record name");
    Shape4 s;
    s.n = get_u32(is);
    s.c = get_u32(is);
    s.h = get_u32(is);
    s.w = get_u32(is);
    Tensor4 t(s);
    real_t* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<real_t>(get_f32(is));

    if (Parameter* dst = model.params().find(name)) {
      if (!(dst->value.shape() == s)) {
        throw FormatError("checkpoint: record '" + name + "' has shape " + s.str() +
                          " but model expects " + dst->value.shape().str());
      }
      dst->value = std::move(t);
    } else if (extra_out) {
      extra_out->push_back(CheckpointExtra{std::move(name), std::move(t)});
    }
    // unknown records without an extra sink are skipped
  }
  return model;
}

}  // namespace dru
