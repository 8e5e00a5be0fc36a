#include "lrt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace lrt {

namespace {

constexpr char kMagic[4] = {'L', 'R', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  template <typename U>
  U get() {
    U v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    if (!in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
      throw std::runtime_error(path_.string() + ": truncated checkpoint");
    }
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

CheckpointInfo read_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(r.path().string() + ": not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error(r.path().string() + ": unsupported checkpoint version " +
                             std::to_string(version));
  }
  const auto len = r.get<std::uint32_t>();
  const KeyValues kv = parse_key_values(r.str(len));
  KeyValues model_kv;
  CheckpointInfo info;
  for (const auto& [k, v] : kv) {
    if (k == "dtype") info.dtype = parse_dtype(v);
    else if (k.find('.') != std::string::npos) info.extra.emplace_back(k, v);
    else model_kv.emplace_back(k, v);
  }
  info.config = ModelConfig::from_key_values(model_kv);
  return info;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const LrtModel<T>& model,
                     const KeyValues& extra) {
  KeyValues header = model.config.to_key_values();
  header.emplace_back("dtype", std::string(dtype_name(sizeof(T) == 4 ? DType::kF32 : DType::kF64)));
  for (const auto& [k, v] : extra) {
    if (k.find('.') == std::string::npos) {
      throw std::invalid_argument("checkpoint extra key '" + k + "' must contain '.'");
    }
    header.emplace_back(k, v);
  }
  const std::string text = format_key_values(header);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& names = model.params.names();
  const auto vars = model.params.vars();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(vars.size()));
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor<T>& t = vars[i].value();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(names[i].size()));
    out.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
    put<std::uint8_t>(out, sizeof(T) == 4 ? 1 : 2);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (const auto e : t.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r);
}

template <typename T>
LrtModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info_out) {
  Reader r(path);
  CheckpointInfo info = read_header(r);
  LrtModel<T> model(info.config, 0);
  const auto count = r.get<std::uint32_t>();
  if (count != model.params.size()) {
    throw std::runtime_error(path.string() + ": " + std::to_string(count) + " tensors, model has " +
                             std::to_string(model.params.size()));
  }
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.get<std::uint32_t>());
    const auto tag = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    Var<T>* var = model.params.find(name);
    if (!var) throw std::runtime_error(path.string() + ": unexpected tensor " + name);
    if (seen[name]) throw std::runtime_error(path.string() + ": duplicate tensor " + name);
    seen[name] = true;
    if (shape != var->shape()) {
      throw std::runtime_error(path.string() + ": tensor " + name + " has shape " +
                               shape_str(shape) + ", expected " + shape_str(var->shape()));
    }
    Tensor<T>& dst = var->mutable_value();
    auto load_as = [&]<typename S>(S) {
      if constexpr (std::is_same_v<S, T>) {
        r.bytes(dst.ptr(), dst.size() * sizeof(T));
      } else {
        std::vector<S> raw(dst.size());
        r.bytes(raw.data(), raw.size() * sizeof(S));
        for (std::size_t j = 0; j < raw.size(); ++j) dst[j] = static_cast<T>(raw[j]);
      }
    };
    if (tag == 1) load_as(float{});
    else if (tag == 2) load_as(double{});
    else throw std::runtime_error(path.string() + ": unknown dtype tag in " + name);
  }
  if (!r.at_end()) throw std::runtime_error(path.string() + ": trailing bytes");
  if (info_out) *info_out = std::move(info);
  return model;
}

template void save_checkpoint(const std::filesystem::path&, const LrtModel<float>&, const KeyValues&);
template void save_checkpoint(const std::filesystem::path&, const LrtModel<double>&, const KeyValues&);
template LrtModel<float> load_checkpoint(const std::filesystem::path&, CheckpointInfo*);
template LrtModel<double> load_checkpoint(const std::filesystem::path&, CheckpointInfo*);

}  // namespace lrt
