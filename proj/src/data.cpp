#include "lrt/data.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lrt/random.hpp"

namespace lrt {

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  std::size_t i = 0;
  auto bad = [&] {
    throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(i));
  };
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      bad();
    }
    if (i + len > s.size()) bad();
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) bad();
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) bad();
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(std::u32string_view s) {
  std::string out;
  for (const char32_t cp : s) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Vocab::Vocab(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
}

int Vocab::id(char32_t c) const {
  const auto it = std::lower_bound(symbols_.begin(), symbols_.end(), c);
  if (it == symbols_.end() || *it != c) {
    throw std::out_of_range("symbol U+" + std::to_string(static_cast<std::uint32_t>(c)) +
                            " is not in the vocabulary");
  }
  return static_cast<int>(it - symbols_.begin()) + 3;
}

std::vector<int> Vocab::encode(std::string_view utf8) const {
  std::vector<int> ids;
  for (const char32_t c : utf8_decode(utf8)) ids.push_back(id(c));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::u32string s;
  for (const int i : ids) {
    if (i < 3) continue;
    if (static_cast<std::size_t>(i) >= size()) throw std::out_of_range("token id out of range");
    s.push_back(symbols_[static_cast<std::size_t>(i) - 3]);
  }
  return utf8_encode(s);
}

std::string_view Vocab::reserved_name(int id) {
  switch (id) {
    case 0: return "<PAD>";
    case 1: return "<SOS>";
    case 2: return "<EOS>";
    default: return "";
  }
}

std::string Vocab::to_text() const {
  std::string s;
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(static_cast<std::uint32_t>(symbols_[i]));
  }
  return s;
}

Vocab Vocab::from_text(std::string_view text) {
  std::vector<char32_t> syms;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const unsigned long v = std::stoul(item, &pos);
    if (pos != item.size() || v > 0x10FFFF) throw std::invalid_argument("bad vocab entry: " + item);
    syms.push_back(static_cast<char32_t>(v));
  }
  return Vocab(std::move(syms));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text() << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocab " + path.string());
  std::string line;
  std::getline(in, line);
  return from_text(line);
}

Vocab build_vocab(std::span<const std::string> transcripts) {
  std::set<char32_t> seen;
  for (const auto& t : transcripts) {
    for (const char32_t c : utf8_decode(t)) seen.insert(c);
  }
  return Vocab(std::vector<char32_t>(seen.begin(), seen.end()));
}

namespace {

constexpr char kFeatureMagic[4] = {'L', 'R', 'T', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get_le(std::istream& in, const std::filesystem::path& path) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error(path.string() + ": truncated file");
  }
  return v;
}

}  // namespace

template <typename T>
void write_features(const std::filesystem::path& path, const Tensor<T>& features) {
  if (features.rank() != 2) throw ShapeError("write_features: expected [frames x bins]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  put_le<std::uint32_t>(out, kFeatureVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  put_le<std::uint8_t>(out, sizeof(T) == 4 ? 1 : 2);
  out.write(reinterpret_cast<const char*>(features.ptr()),
            static_cast<std::streamsize>(features.size() * sizeof(T)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
Tensor<T> read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open features " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw std::runtime_error(path.string() + ": not a feature file");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kFeatureVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::size_t frames = get_le<std::uint32_t>(in, path);
  const std::size_t bins = get_le<std::uint32_t>(in, path);
  const auto tag = get_le<std::uint8_t>(in, path);
  if (frames == 0 || bins == 0) throw std::runtime_error(path.string() + ": empty feature matrix");
  Tensor<T> out({frames, bins});
  const std::size_t n = frames * bins;
  auto read_as = [&]<typename S>(S) {
    std::vector<S> raw(n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)))) {
      throw std::runtime_error(path.string() + ": truncated payload");
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(raw[i]);
  };
  if (tag == 1) read_as(float{});
  else if (tag == 2) read_as(double{});
  else throw std::runtime_error(path.string() + ": unknown dtype tag " + std::to_string(tag));
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": trailing bytes after payload");
  }
  return out;
}

std::vector<std::string> Manifest::transcripts() const {
  std::vector<std::string> t;
  for (const auto& u : utterances) t.push_back(u.transcript);
  return t;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto dir = path.parent_path();
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected id<TAB>path<TAB>transcript");
    }
    Utterance u;
    u.id = line.substr(0, t1);
    std::filesystem::path p = line.substr(t1 + 1, t2 - t1 - 1);
    u.path = p.is_absolute() ? p : dir / p;
    u.transcript = line.substr(t2 + 1);
    utf8_decode(u.transcript);
    if (!ids.insert(u.id).second) {
      throw std::runtime_error(path.string() + ": duplicate utterance id " + u.id);
    }
    if (!std::filesystem::exists(u.path)) {
      throw std::runtime_error(path.string() + ": missing feature file " + u.path.string());
    }
    m.utterances.push_back(std::move(u));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto dir = path.parent_path();
  for (const auto& u : m.utterances) {
    std::filesystem::path p = u.path;
    if (!dir.empty() && p.is_absolute() == std::filesystem::path(dir).is_absolute()) {
      const auto rel = p.lexically_relative(dir);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out << u.id << '\t' << p.generic_string() << '\t' << u.transcript << '\n';
  }
}

char32_t synth_symbol(std::size_t i) {
  if (i < 26) return static_cast<char32_t>(U'a' + i);
  return static_cast<char32_t>(0x4E00 + (i - 26));
}

Manifest synth_dataset(const std::filesystem::path& out_dir, const SynthOptions& opt) {
  if (opt.vocab_size < 2) throw std::invalid_argument("synth_dataset: vocab_size must be >= 2");
  if (opt.bins < 2) throw std::invalid_argument("synth_dataset: bins must be >= 2");
  if (opt.min_len < 1 || opt.min_len > opt.max_len) {
    throw std::invalid_argument("synth_dataset: bad transcript length range");
  }
  if (opt.frames < opt.max_len) {
    throw std::invalid_argument("synth_dataset: frames must cover one frame per character");
  }
  const std::size_t active = std::max<std::size_t>(2, opt.bins / 4);
  std::vector<std::vector<std::uint8_t>> patterns;
  std::set<std::vector<std::uint8_t>> used;
  Rng pattern_rng(0x9e3779b97f4a7c15ULL);
  for (std::size_t s = 0; s < opt.vocab_size; ++s) {
    std::vector<std::uint8_t> p;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      p.assign(opt.bins, 0);
      std::size_t on = 0;
      while (on < active) {
        const auto b = pattern_rng.below(opt.bins);
        if (!p[b]) {
          p[b] = 1;
          ++on;
        }
      }
      if (!used.count(p)) break;
    }
    used.insert(p);
    patterns.push_back(std::move(p));
  }

  std::filesystem::create_directories(out_dir / "features");
  Rng rng(opt.seed);
  Manifest m;
  for (std::size_t u = 0; u < opt.n_utts; ++u) {
    const std::size_t len = opt.min_len + rng.below(opt.max_len - opt.min_len + 1);
    std::u32string text;
    std::vector<std::size_t> syms;
    for (std::size_t j = 0; j < len; ++j) {
      syms.push_back(rng.below(opt.vocab_size));
      text.push_back(synth_symbol(syms.back()));
    }
    Tensor<float> feats({opt.frames, opt.bins});
    for (std::size_t t = 0; t < opt.frames; ++t) {
      const std::size_t j = t * len / opt.frames;
      const double gain = 0.8 + 0.4 * rng.uniform();
      for (std::size_t b = 0; b < opt.bins; ++b) {
        const double noise = 0.05 * rng.uniform();
        feats.at(t, b) = static_cast<float>(noise + (patterns[syms[j]][b] ? gain : 0.0));
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "utt%04zu", u);
    Utterance utt{id, out_dir / "features" / (std::string(id) + ".lrtf"), utf8_encode(text)};
    write_features(utt.path, feats);
    m.utterances.push_back(std::move(utt));
  }
  save_manifest(m, out_dir / "manifest.tsv");
  return m;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

namespace {

// The FFTW planner is not reentrant.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<double> stft_frame_magnitude(std::span<const double> frame) {
  if (frame.size() > kStftSize) throw ShapeError("stft frame longer than the transform size");
  double* in = fftw_alloc_real(kStftSize);
  fftw_complex* out = fftw_alloc_complex(kStftBins);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kStftSize), in, out, FFTW_ESTIMATE);
  }
  std::fill(in, in + kStftSize, 0.0);
  std::copy(frame.begin(), frame.end(), in);
  fftw_execute(plan);
  std::vector<double> mag(kStftBins);
  for (std::size_t k = 0; k < kStftBins; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  {
    std::lock_guard lock(fftw_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return mag;
}

Tensor<double> wav_to_logspec(std::span<const double> samples, std::size_t rate,
                              std::size_t expected_rate) {
  if (rate != expected_rate) {
    throw std::invalid_argument("wav_to_logspec: sample rate " + std::to_string(rate) +
                                " does not match configured " + std::to_string(expected_rate));
  }
  if (samples.size() < kStftWindow) {
    throw std::invalid_argument("wav_to_logspec: fewer samples than one window");
  }
  const std::size_t frames = 1 + (samples.size() - kStftWindow) / kStftHop;
  const std::vector<double> window = hann_window(kStftWindow);
  Tensor<double> out({frames, kStftBins});
  std::vector<double> buf(kStftWindow);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < kStftWindow; ++i) buf[i] = samples[f * kStftHop + i] * window[i];
    const auto mag = stft_frame_magnitude(buf);
    for (std::size_t k = 0; k < kStftBins; ++k) out.at(f, k) = std::log1p(mag[k]);
  }
  return out;
}

template void write_features(const std::filesystem::path&, const Tensor<float>&);
template void write_features(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_features(const std::filesystem::path&);
template Tensor<double> read_features(const std::filesystem::path&);

}  // namespace lrt
