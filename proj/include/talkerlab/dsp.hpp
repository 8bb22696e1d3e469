#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "talkerlab/audio.hpp"

namespace talkerlab::dsp {

using Mat = Eigen::MatrixXd;

// In-place radix-2 FFT; size must be a power of two. inverse=true divides by n.
void fft(std::vector<std::complex<double>>& x, bool inverse);

struct MelConfig {
  int sample_rate = 16000;
  int win_samples = 400;   // 25 ms
  int hop_samples = 320;   // 20 ms
  int n_fft = 512;
  int n_mels = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-10;
};

// Triangular mel filterbank (HTK mel scale), n_mels x (n_fft/2 + 1).
Mat mel_filterbank(const MelConfig& cfg);

// frames x n_mels matrix of log mel power. Frame count is
// floor((samples - win) / hop) + 1; audio shorter than one window is an error.
Mat log_mel_spectrogram(const audio::Buffer& buf, const MelConfig& cfg);

// Deterministic Griffin-Lim phase reconstruction from a log-mel matrix.
// Quality is not the point; shape and determinism are.
audio::Buffer griffin_lim(const Mat& log_mel, const MelConfig& cfg, int iterations = 24);

}  // namespace talkerlab::dsp
