#pragma once

// Synthetic speech-like corpus: bank of 27 spectral templates (a-z + space),
// utterances built by concatenating edge-faded template renders, a seeded
// bigram text model, and disjoint train/dev/test splits with JSONL manifests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "xy/common.hpp"
#include "xy/fft.hpp"
#include "xy/text.hpp"
#include "xy/wav.hpp"

#include "json.hpp"

namespace xy {

// one sinusoidal partial of a template; freq in Hz, linear amplitude
struct Partial {
  real freq = 0;
  real amp = 0;
};

// spectral recipe for one symbol: harmonic stack + band-limited noise
struct SymbolTemplate {
  std::vector<Partial> partials;     // letters: 3..5 partials; space: none
  real noise_lo = 0;                 // noise band edges, Hz
  real noise_hi = 0;
  real noise_amp = 0;                // linear amplitude of the noise band
};

struct PhonemeBank {
  uint64_t seed = 0;
  int sample_rate = 16000;
  real unit_ms = 80;                                  // per-symbol duration
  std::array<SymbolTemplate, kCharVocab> templates;  // [id-1] for id 1..27
};

inline int unit_samples(const PhonemeBank& bank) {
  return static_cast<int>(std::lround(bank.unit_ms * 1e-3 * bank.sample_rate));
}

// renders one template as a fixed-length mono segment with 10 ms edge fades;
// phases come from rng so repeated symbols are not bit-identical
inline std::vector<real> render_template(const SymbolTemplate& t, int n, int sample_rate,
                                         Rng& rng) {
  XY_CHECK(n > 0, "render_template: n must be positive");
  std::vector<real> seg(static_cast<size_t>(n), 0.0);
  const real dt = 1.0 / sample_rate;
  for (const Partial& p : t.partials) {
    if (p.freq >= sample_rate / 2.0) continue;
    const real phase = rng.uniform(0.0, 2.0 * kPi);
    const real w = 2.0 * kPi * p.freq;
    for (int i = 0; i < n; ++i) seg[static_cast<size_t>(i)] += p.amp * std::sin(w * i * dt + phase);
  }
  if (t.noise_amp > 0 && t.noise_hi > t.noise_lo) {
    // band-limited noise as a small comb of random-phase sinusoids in the band
    const int kComb = 8;
    for (int c = 0; c < kComb; ++c) {
      const real f = rng.uniform(t.noise_lo, t.noise_hi);
      if (f >= sample_rate / 2.0) continue;
      const real phase = rng.uniform(0.0, 2.0 * kPi);
      const real a = t.noise_amp / std::sqrt(static_cast<real>(kComb));
      const real w = 2.0 * kPi * f;
      for (int i = 0; i < n; ++i) seg[static_cast<size_t>(i)] += a * std::sin(w * i * dt + phase);
    }
  }
  const int fade = std::min(n / 2, static_cast<int>(std::lround(0.010 * sample_rate)));
  for (int i = 0; i < fade; ++i) {
    const real g = static_cast<real>(i + 1) / (fade + 1);
    seg[static_cast<size_t>(i)] *= g;
    seg[static_cast<size_t>(n - 1 - i)] *= g;
  }
  return seg;
}

// fixed-grid magnitude fingerprint used for the pairwise-separability check;
// unit L2 norm unless the render is silent
inline std::vector<real> template_fingerprint(const SymbolTemplate& t, int sample_rate) {
  const int n = 2048;
  Rng rng(12345);  // fixed phases: the fingerprint depends only on the recipe
  std::vector<real> seg = render_template(t, n, sample_rate, rng);
  std::vector<cplx> spec = rfft(seg.data(), n, n);
  std::vector<real> mag(spec.size());
  real norm = 0;
  for (size_t k = 0; k < spec.size(); ++k) {
    mag[k] = std::abs(spec[k]);
    norm += mag[k] * mag[k];
  }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (real& m : mag) m /= norm;
  return mag;
}

inline real fingerprint_distance(const std::vector<real>& a, const std::vector<real>& b) {
  XY_CHECK(a.size() == b.size(), "fingerprint_distance: size mismatch");
  real d2 = 0;
  for (size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d2);
}

inline real template_energy(const SymbolTemplate& t) {
  // mean-square of an infinite render: sum a^2/2 over partials plus noise power
  real e = 0;
  for (const Partial& p : t.partials) e += 0.5 * p.amp * p.amp;
  if (t.noise_amp > 0) e += 0.5 * t.noise_amp * t.noise_amp;
  return e;
}

// letters a..z: harmonic stacks on an f0 ladder (~9% spacing) so every pair of
// fingerprints is spectrally separated; space: a near-silent low noise band
inline PhonemeBank gen_phoneme_bank(uint64_t seed, int sample_rate = 16000, real unit_ms = 80) {
  XY_CHECK(sample_rate > 0, "gen_phoneme_bank: sample_rate must be positive");
  XY_CHECK(unit_ms > 0, "gen_phoneme_bank: unit_ms must be positive");
  PhonemeBank bank;
  bank.seed = seed;
  bank.sample_rate = sample_rate;
  bank.unit_ms = unit_ms;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (int j = 0; j < 26; ++j) {
    SymbolTemplate t;
    const real f0 = 200.0 * std::pow(2.0, j / 8.0);  // 200 Hz .. ~1.7 kHz
    const int n_partials = 3 + static_cast<int>(rng.below(3u));  // 3..5
    for (int p = 0; p < n_partials; ++p) {
      Partial part;
      part.freq = f0 * (p + 1) * (1.0 + 0.002 * rng.normal());
      part.amp = 0.30 * std::pow(0.6, p) * (1.0 + 0.10 * rng.uniform(-1.0, 1.0));
      t.partials.push_back(part);
    }
    t.noise_lo = f0 * (n_partials + 0.5);
    t.noise_hi = std::min<real>(t.noise_lo * 1.5, sample_rate / 2.0 - 100.0);
    t.noise_amp = 0.02;
    bank.templates[static_cast<size_t>(j)] = t;
  }
  // space (id 27): low-energy gap, no partials, faint wideband noise
  SymbolTemplate sp;
  sp.noise_lo = 100.0;
  sp.noise_hi = 400.0;
  sp.noise_amp = 0.004;
  bank.templates[26] = sp;
  return bank;
}

inline real min_pairwise_distance(const PhonemeBank& bank) {
  std::vector<std::vector<real>> fps;
  fps.reserve(26);
  for (int j = 0; j < 26; ++j)
    fps.push_back(template_fingerprint(bank.templates[static_cast<size_t>(j)], bank.sample_rate));
  real best = std::numeric_limits<real>::infinity();
  for (size_t a = 0; a < fps.size(); ++a)
    for (size_t b = a + 1; b < fps.size(); ++b)
      best = std::min(best, fingerprint_distance(fps[a], fps[b]));
  return best;
}

// per-speaker timbre: all partial frequencies scaled by a fixed factor (+-3%,
// under half the letter f0 ladder spacing so identities stay separable) and
// amplitudes tilted across frequency (+-0.8 per octave re 500 Hz, the
// dominant speaker cue)
struct SpeakerTimbre {
  real formant_shift = 1.0;
  real tilt = 0.0;
};

inline SpeakerTimbre speaker_timbre(uint64_t speaker_id) {
  Rng rng(fnv1a("speaker:" + hex64(speaker_id)));
  SpeakerTimbre s;
  s.formant_shift = 1.0 + 0.03 * rng.uniform(-1.0, 1.0);
  s.tilt = 0.8 * rng.uniform(-1.0, 1.0);
  return s;
}

inline SymbolTemplate apply_timbre(const SymbolTemplate& t, const SpeakerTimbre& s) {
  SymbolTemplate out = t;
  for (Partial& p : out.partials) {
    p.freq *= s.formant_shift;
    p.amp *= std::pow(2.0, s.tilt * std::log2(std::max<real>(p.freq, 50.0) / 500.0));
  }
  out.noise_lo *= s.formant_shift;
  out.noise_hi *= s.formant_shift;
  return out;
}

struct UtteranceSpec {
  std::string text;          // lowercase a-z and single spaces
  uint64_t speaker_id = 0;
  real rate_jitter = 0.0;    // per-symbol duration scale in [1-j, 1+j]
  real noise_floor = 1e-4;   // additive white-noise amplitude before peak norm
};

// deterministic for a fixed (spec, bank); peak-normalized to 0.9
inline std::vector<real> synth_utterance(const UtteranceSpec& spec, const PhonemeBank& bank) {
  const std::string norm = normalize_text(spec.text);
  XY_CHECK(!norm.empty(), "synth_utterance: text is empty after normalization");
  XY_CHECK(spec.rate_jitter >= 0 && spec.rate_jitter < 1, "synth_utterance: rate_jitter in [0,1)");
  const std::vector<int> ids = text_to_ids(norm);
  const SpeakerTimbre timbre = speaker_timbre(spec.speaker_id);
  Rng rng(fnv1a(norm) ^ fnv1a("utt:" + hex64(bank.seed)) ^ spec.speaker_id);
  const int base_n = unit_samples(bank);
  std::vector<real> wav;
  wav.reserve(ids.size() * static_cast<size_t>(base_n));
  for (int id : ids) {
    int n = base_n;
    if (spec.rate_jitter > 0)
      n = std::max(16, static_cast<int>(std::lround(
                           base_n * (1.0 + spec.rate_jitter * rng.uniform(-1.0, 1.0)))));
    const SymbolTemplate t =
        apply_timbre(bank.templates[static_cast<size_t>(id - 1)], timbre);
    std::vector<real> seg = render_template(t, n, bank.sample_rate, rng);
    wav.insert(wav.end(), seg.begin(), seg.end());
  }
  if (spec.noise_floor > 0)
    for (real& x : wav) x += spec.noise_floor * rng.normal();
  real peak = 0;
  for (real x : wav) peak = std::max(peak, std::abs(x));
  if (peak > 0)
    for (real& x : wav) x *= 0.9 / peak;
  return wav;
}

// frame-aligned symbol ids for an utterance synthesized with rate_jitter = 0:
// each symbol spans frames_per_unit consecutive frames
inline std::vector<int> oracle_frame_labels(const std::string& txt, int frames_per_unit) {
  XY_CHECK(frames_per_unit > 0, "oracle_frame_labels: frames_per_unit must be positive");
  const std::vector<int> ids = text_to_ids(normalize_text(txt));
  std::vector<int> frames;
  frames.reserve(ids.size() * static_cast<size_t>(frames_per_unit));
  for (int id : ids)
    for (int k = 0; k < frames_per_unit; ++k) frames.push_back(id);
  return frames;
}

// seeded bigram text model over a-z + space; never emits leading/trailing or
// doubled spaces
class BigramTextModel {
 public:
  explicit BigramTextModel(uint64_t seed) {
    Rng rng(fnv1a("bigram:" + hex64(seed)));
    // row 26 is the word-start context; word lengths are drawn separately so
    // only letter->letter weights matter
    for (int prev = 0; prev < 27; ++prev)
      for (int next = 0; next < 26; ++next)
        table_[static_cast<size_t>(prev)][static_cast<size_t>(next)] =
            0.05 + rng.uniform(0.0, 1.0);
  }

  // sentence of n_words words, each with >= min_word letters
  std::string sample(Rng& rng, int n_words, int min_word = 2, int max_word = 6) const {
    XY_CHECK(n_words > 0, "BigramTextModel::sample: n_words must be positive");
    XY_CHECK(min_word >= 1 && max_word >= min_word, "BigramTextModel::sample: bad word bounds");
    std::string out;
    for (int w = 0; w < n_words; ++w) {
      if (w > 0) out.push_back(' ');
      const int len = min_word + static_cast<int>(rng.below(
                                     static_cast<uint32_t>(max_word - min_word + 1)));
      int prev = 26;  // word start behaves like "after space"
      for (int i = 0; i < len; ++i) {
        const int next = sample_letter(rng, prev);
        out.push_back(static_cast<char>('a' + next));
        prev = next;
      }
    }
    return out;
  }

 private:
  int sample_letter(Rng& rng, int prev) const {
    real sum = 0;
    for (int next = 0; next < 26; ++next) sum += table_[static_cast<size_t>(prev)][static_cast<size_t>(next)];
    real u = rng.uniform(0.0, sum);
    for (int next = 0; next < 26; ++next) {
      u -= table_[static_cast<size_t>(prev)][static_cast<size_t>(next)];
      if (u <= 0) return next;
    }
    return 25;
  }

  std::array<std::array<real, 27>, 27> table_{};
};

struct ManifestEntry {
  std::string audio;  // path relative to the manifest's directory
  std::string text;
};

inline void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  XY_CHECK(f.good(), "save_manifest: cannot open " + path);
  for (const ManifestEntry& e : entries) {
    nlohmann::json j;
    j["audio"] = e.audio;
    j["text"] = e.text;
    f << j.dump() << "\n";
  }
  XY_CHECK(f.good(), "save_manifest: write failed for " + path);
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  XY_CHECK(f.good(), "load_manifest: cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    XY_CHECK(j.contains("audio") && j.contains("text"),
             "load_manifest: line missing audio/text in " + path);
    entries.push_back({j["audio"].get<std::string>(), j["text"].get<std::string>()});
  }
  return entries;
}

// resolves a manifest-relative audio path against the manifest location
inline std::string resolve_audio_path(const std::string& manifest_path,
                                      const std::string& audio) {
  std::filesystem::path a(audio);
  if (a.is_absolute()) return audio;
  return (std::filesystem::path(manifest_path).parent_path() / a).string();
}

struct CorpusConfig {
  int n_train = 64;
  int n_dev = 16;
  int n_test = 16;
  uint64_t seed = 1;
  int n_speakers = 8;
  int words_min = 2;
  int words_max = 3;
  real rate_jitter = 0.0;   // 0 keeps symbol boundaries frame-aligned
  real noise_floor = 1e-4;
  int sample_rate = 16000;
  real unit_ms = 80;
};

struct CorpusSummary {
  PhonemeBank bank;
  std::vector<ManifestEntry> train, dev, test;
};

// writes out_dir/{train,dev,test}/NNNN.wav plus one JSONL manifest per split;
// train/dev/test text sets are mutually disjoint; byte-identical per seed
inline CorpusSummary gen_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
  XY_CHECK(cfg.n_train > 0 && cfg.n_dev >= 0 && cfg.n_test >= 0, "gen_corpus: bad split sizes");
  XY_CHECK(cfg.n_speakers > 0, "gen_corpus: n_speakers must be positive");
  CorpusSummary sum;
  sum.bank = gen_phoneme_bank(cfg.seed, cfg.sample_rate, cfg.unit_ms);
  BigramTextModel model(cfg.seed);
  Rng rng(fnv1a("corpus:" + hex64(cfg.seed)));

  const int total = cfg.n_train + cfg.n_dev + cfg.n_test;
  std::vector<std::string> texts;
  std::set<std::string> seen;
  int guard = 0;
  while (static_cast<int>(texts.size()) < total) {
    XY_CHECK(++guard < total * 200, "gen_corpus: text model cannot produce enough unique texts");
    const int n_words =
        cfg.words_min + static_cast<int>(rng.below(static_cast<uint32_t>(
                            cfg.words_max - cfg.words_min + 1)));
    std::string t = model.sample(rng, n_words);
    if (seen.insert(t).second) texts.push_back(t);
  }

  const std::array<std::string, 3> split_names = {"train", "dev", "test"};
  const std::array<int, 3> split_sizes = {cfg.n_train, cfg.n_dev, cfg.n_test};
  int cursor = 0;
  for (int s = 0; s < 3; ++s) {
    const std::string split_dir = out_dir + "/" + split_names[static_cast<size_t>(s)];
    std::filesystem::create_directories(split_dir);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < split_sizes[static_cast<size_t>(s)]; ++i, ++cursor) {
      UtteranceSpec spec;
      spec.text = texts[static_cast<size_t>(cursor)];
      spec.speaker_id = fnv1a("spk:" + hex64(cfg.seed)) + rng.below(static_cast<uint32_t>(cfg.n_speakers));
      spec.rate_jitter = cfg.rate_jitter;
      spec.noise_floor = cfg.noise_floor;
      const std::vector<real> wav = synth_utterance(spec, sum.bank);
      char name[16];
      std::snprintf(name, sizeof(name), "%04d.wav", i);
      const std::string rel = split_names[static_cast<size_t>(s)] + "/" + name;
      save_wav(out_dir + "/" + rel, Audio{cfg.sample_rate, wav});
      entries.push_back({rel, spec.text});
    }
    save_manifest(out_dir + "/" + split_names[static_cast<size_t>(s)] + ".jsonl", entries);
    if (s == 0) sum.train = entries;
    if (s == 1) sum.dev = entries;
    if (s == 2) sum.test = entries;
  }
  return sum;
}

}  // namespace xy
