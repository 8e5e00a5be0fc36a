#pragma once
// Vocabulary, feature/manifest files, synthetic corpus and spectrogram
// extraction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrt/tensor.hpp"

namespace lrt {

std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);

/// Ids 0..2 are <PAD>, <SOS>, <EOS>; symbol i has id i + 3.
class Vocab {
 public:
  Vocab() = default;
  /// Symbols are sorted and deduplicated.
  explicit Vocab(std::vector<char32_t> symbols);

  std::size_t size() const { return symbols_.size() + 3; }
  const std::vector<char32_t>& symbols() const { return symbols_; }
  /// Throws std::out_of_range for a symbol outside the vocabulary.
  int id(char32_t c) const;
  std::vector<int> encode(std::string_view utf8) const;
  /// Skips reserved ids.
  std::string decode(std::span<const int> ids) const;
  static std::string_view reserved_name(int id);

  /// Symbols as comma-separated code points.
  std::string to_text() const;
  static Vocab from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab&) const = default;

 private:
  std::vector<char32_t> symbols_;
};

Vocab build_vocab(std::span<const std::string> transcripts);

/// Feature file: "LRTF", u32 version, u32 frames, u32 bins, u8 dtype tag
/// (1 = f32, 2 = f64), little-endian frame-major payload.
template <typename T>
void write_features(const std::filesystem::path& path, const Tensor<T>& features);
/// Converts the stored element type to T.
template <typename T>
Tensor<T> read_features(const std::filesystem::path& path);

struct Utterance {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest directory
  std::string transcript;
};

/// Tab-separated "id<TAB>path<TAB>transcript" lines.
struct Manifest {
  std::vector<Utterance> utterances;
  std::vector<std::string> transcripts() const;
};

/// Throws on duplicate ids or unresolvable paths.
Manifest load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory when possible.
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t n_utts = 16;
  std::size_t vocab_size = 8;  // content symbols
  std::size_t frames = 48;
  std::size_t bins = 16;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
};

/// Symbol i of the synthetic alphabet.
char32_t synth_symbol(std::size_t i);

/// Writes features/<id>.lrtf and manifest.tsv under out_dir. Each transcript
/// character fills its frame span with a per-symbol band pattern over a low
/// noise floor.
Manifest synth_dataset(const std::filesystem::path& out_dir, const SynthOptions& opt);

inline constexpr std::size_t kStftWindow = 400;
inline constexpr std::size_t kStftHop = 160;
inline constexpr std::size_t kStftSize = 512;
inline constexpr std::size_t kStftBins = kStftSize / 2 + 1;
inline constexpr std::size_t kSampleRate = 16000;

/// log(1 + |STFT|) with a Hann window of 400 samples, hop 160, zero padded
/// to 512 points: [frames x 257]. Throws on a sample-rate mismatch or
/// fewer than 400 samples.
Tensor<double> wav_to_logspec(std::span<const double> samples, std::size_t rate,
                              std::size_t expected_rate = kSampleRate);

/// Magnitudes |X_k| of one windowed frame, 257 entries.
std::vector<double> stft_frame_magnitude(std::span<const double> frame);

/// Symmetric Hann window: 0.5 - 0.5 cos(2 pi i / (n - 1)).
std::vector<double> hann_window(std::size_t n);

}  // namespace lrt
