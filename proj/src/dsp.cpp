#include "talkerlab/dsp.hpp"

#include <cmath>
#include <stdexcept>

namespace talkerlab::dsp {

void fft(std::vector<std::complex<double>>& x, bool inverse) {
  const size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::runtime_error("fft size must be a power of two");
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = x[i + k];
        const std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& v : x) v /= static_cast<double>(n);
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / n);
  return w;
}

// frames x bins power spectrogram
Mat power_spectrogram(const audio::Buffer& buf, const MelConfig& cfg) {
  const int n_samples = static_cast<int>(buf.samples.size());
  if (n_samples < cfg.win_samples)
    throw std::runtime_error("audio shorter than one analysis window");
  const int n_frames = (n_samples - cfg.win_samples) / cfg.hop_samples + 1;
  const int bins = cfg.n_fft / 2 + 1;
  const std::vector<double> win = hann_window(cfg.win_samples);
  Mat spec(n_frames, bins);
  std::vector<std::complex<double>> fx(static_cast<size_t>(cfg.n_fft));
  for (int f = 0; f < n_frames; ++f) {
    const int off = f * cfg.hop_samples;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const double s = (i < cfg.win_samples) ? buf.samples[off + i] * win[i] : 0.0;
      fx[static_cast<size_t>(i)] = {s, 0.0};
    }
    fft(fx, false);
    for (int b = 0; b < bins; ++b) spec(f, b) = std::norm(fx[static_cast<size_t>(b)]);
  }
  return spec;
}

}  // namespace

Mat mel_filterbank(const MelConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  Mat fb = Mat::Zero(cfg.n_mels, bins);
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m)
    edges[static_cast<size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) / (cfg.n_mels + 1));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<size_t>(m)];
    const double mid = edges[static_cast<size_t>(m) + 1];
    const double hi = edges[static_cast<size_t>(m) + 2];
    for (int b = 0; b < bins; ++b) {
      const double hz = static_cast<double>(b) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (hz >= lo && hz <= mid && mid > lo)
        w = (hz - lo) / (mid - lo);
      else if (hz > mid && hz <= hi && hi > mid)
        w = (hi - hz) / (hi - mid);
      fb(m, b) = w;
    }
  }
  return fb;
}

Mat log_mel_spectrogram(const audio::Buffer& buf, const MelConfig& cfg) {
  const Mat spec = power_spectrogram(buf, cfg);
  const Mat fb = mel_filterbank(cfg);
  Mat mel = spec * fb.transpose();  // frames x n_mels
  for (int i = 0; i < mel.rows(); ++i)
    for (int j = 0; j < mel.cols(); ++j)
      mel(i, j) = std::log(std::max(mel(i, j), cfg.log_floor));
  return mel;
}

audio::Buffer griffin_lim(const Mat& log_mel, const MelConfig& cfg, int iterations) {
  const int bins = cfg.n_fft / 2 + 1;
  const int n_frames = static_cast<int>(log_mel.rows());
  const Mat fb = mel_filterbank(cfg);

  // Mel power back to linear power via transposed filterbank with column
  // normalization, then to magnitudes.
  Mat fbt = fb.transpose();  // bins x n_mels
  Eigen::VectorXd colsum = fb.colwise().sum();
  Mat mag(n_frames, bins);
  for (int f = 0; f < n_frames; ++f)
    for (int b = 0; b < bins; ++b) {
      double acc = 0.0;
      for (int m = 0; m < cfg.n_mels; ++m) acc += fbt(b, m) * std::exp(log_mel(f, m));
      const double norm = std::max(colsum(b), 1e-8);
      mag(f, b) = std::sqrt(std::max(acc / norm, 0.0));
    }

  const std::vector<double> win = hann_window(cfg.win_samples);
  const int n_samples = (n_frames - 1) * cfg.hop_samples + cfg.win_samples;
  std::vector<double> phase(static_cast<size_t>(n_frames) * bins, 0.0);

  audio::Buffer out;
  out.rate = cfg.sample_rate;
  std::vector<std::complex<double>> fx(static_cast<size_t>(cfg.n_fft));
  for (int it = 0; it < iterations; ++it) {
    // inverse STFT with current phases
    std::vector<double> sig(static_cast<size_t>(n_samples), 0.0);
    std::vector<double> wsum(static_cast<size_t>(n_samples), 1e-9);
    for (int f = 0; f < n_frames; ++f) {
      for (int b = 0; b < cfg.n_fft; ++b) {
        if (b < bins) {
          const double ph = phase[static_cast<size_t>(f) * bins + b];
          fx[static_cast<size_t>(b)] = std::polar(mag(f, b), ph);
        } else {
          const int mirror = cfg.n_fft - b;
          const double ph = phase[static_cast<size_t>(f) * bins + mirror];
          fx[static_cast<size_t>(b)] = std::conj(std::polar(mag(f, mirror), ph));
        }
      }
      fft(fx, true);
      const int off = f * cfg.hop_samples;
      for (int i = 0; i < cfg.win_samples; ++i) {
        sig[static_cast<size_t>(off + i)] += fx[static_cast<size_t>(i)].real() * win[i];
        wsum[static_cast<size_t>(off + i)] += win[i] * win[i];
      }
    }
    for (int i = 0; i < n_samples; ++i) sig[static_cast<size_t>(i)] /= wsum[static_cast<size_t>(i)];

    if (it == iterations - 1) {
      out.samples = std::move(sig);
      break;
    }
    // re-analyze to update phases
    for (int f = 0; f < n_frames; ++f) {
      const int off = f * cfg.hop_samples;
      for (int i = 0; i < cfg.n_fft; ++i) {
        const double s = (i < cfg.win_samples && off + i < n_samples)
                             ? sig[static_cast<size_t>(off + i)] * win[i]
                             : 0.0;
        fx[static_cast<size_t>(i)] = {s, 0.0};
      }
      fft(fx, false);
      for (int b = 0; b < bins; ++b)
        phase[static_cast<size_t>(f) * bins + b] = std::arg(fx[static_cast<size_t>(b)]);
    }
  }
  // normalize peak to avoid clipping on write
  double peak = 1e-9;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0)
    for (double& s : out.samples) s /= peak;
  return out;
}

}  // namespace talkerlab::dsp
