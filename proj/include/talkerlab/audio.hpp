#pragma once

#include <vector>

#include "talkerlab/common.hpp"

namespace talkerlab::audio {

// Mono PCM audio held as doubles in [-1, 1]. All corpus audio is 16 kHz.
struct Buffer {
  std::vector<double> samples;
  int rate = 16000;

  double duration_s() const { return rate > 0 ? static_cast<double>(samples.size()) / rate : 0.0; }
  bool empty() const { return samples.empty(); }
};

// 16-bit mono PCM WAV. read_wav rejects anything else.
Buffer read_wav(const fs::path& path);
void write_wav(const fs::path& path, const Buffer& buf);

// Construction helpers for synthetic fixtures and tests.
Buffer silence(double seconds, int rate = 16000);
Buffer tone(double hz, double seconds, double amplitude, int rate = 16000);
Buffer white_noise(double seconds, double amplitude, Rng& rng, int rate = 16000);
Buffer concat(const std::vector<Buffer>& parts);
Buffer slice(const Buffer& buf, double start_s, double end_s);
void mix_into(Buffer& base, const Buffer& add, double start_s);

}  // namespace talkerlab::audio
