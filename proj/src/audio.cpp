#include "talkerlab/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace talkerlab::audio {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 16) & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 24) & 0xff));
}
void wr_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
}

}  // namespace

Buffer read_wav(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path.string());

  Buffer buf;
  size_t pos = 12;
  bool have_fmt = false, have_data = false;
  uint16_t channels = 0, bits = 0;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t sz = rd_u32(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + sz > bytes.size()) break;
    if (std::memcmp(id, "fmt ", 4) == 0 && sz >= 16) {
      const uint16_t fmt = rd_u16(bytes.data() + body);
      channels = rd_u16(bytes.data() + body + 2);
      buf.rate = static_cast<int>(rd_u32(bytes.data() + body + 4));
      bits = rd_u16(bytes.data() + body + 14);
      if (fmt != 1) throw std::runtime_error("wav is not PCM: " + path.string());
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("wav data before fmt: " + path.string());
      if (channels != 1 || bits != 16)
        throw std::runtime_error("expected 16-bit mono wav: " + path.string());
      const size_t n = sz / 2;
      buf.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(rd_u16(bytes.data() + body + 2 * i));
        buf.samples[i] = static_cast<double>(s) / 32768.0;
      }
      have_data = true;
    }
    pos = body + sz + (sz & 1);
  }
  if (!have_data) throw std::runtime_error("wav has no data chunk: " + path.string());
  return buf;
}

void write_wav(const fs::path& path, const Buffer& buf) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<uint8_t> out;
  const uint32_t data_bytes = static_cast<uint32_t>(buf.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  wr_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<uint32_t>(buf.rate));
  wr_u32(out, static_cast<uint32_t>(buf.rate * 2));
  wr_u16(out, 2);
  wr_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  wr_u32(out, data_bytes);
  for (double s : buf.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lrint(clamped * 32767.0));
    wr_u16(out, static_cast<uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

Buffer silence(double seconds, int rate) {
  Buffer b;
  b.rate = rate;
  b.samples.assign(static_cast<size_t>(std::lround(seconds * rate)), 0.0);
  return b;
}

Buffer tone(double hz, double seconds, double amplitude, int rate) {
  Buffer b;
  b.rate = rate;
  const size_t n = static_cast<size_t>(std::lround(seconds * rate));
  b.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    b.samples[i] = amplitude * std::sin(2.0 * M_PI * hz * static_cast<double>(i) / rate);
  return b;
}

Buffer white_noise(double seconds, double amplitude, Rng& rng, int rate) {
  Buffer b;
  b.rate = rate;
  const size_t n = static_cast<size_t>(std::lround(seconds * rate));
  b.samples.resize(n);
  for (size_t i = 0; i < n; ++i) b.samples[i] = amplitude * (2.0 * uniform(rng) - 1.0);
  return b;
}

Buffer concat(const std::vector<Buffer>& parts) {
  Buffer out;
  if (parts.empty()) return out;
  out.rate = parts.front().rate;
  for (const Buffer& p : parts) {
    if (p.rate != out.rate) throw std::runtime_error("concat: sample rate mismatch");
    out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
  }
  return out;
}

Buffer slice(const Buffer& buf, double start_s, double end_s) {
  Buffer out;
  out.rate = buf.rate;
  const auto n = static_cast<long>(buf.samples.size());
  long a = std::clamp(static_cast<long>(std::lround(start_s * buf.rate)), 0L, n);
  long b = std::clamp(static_cast<long>(std::lround(end_s * buf.rate)), a, n);
  out.samples.assign(buf.samples.begin() + a, buf.samples.begin() + b);
  return out;
}

void mix_into(Buffer& base, const Buffer& add, double start_s) {
  if (base.rate != add.rate) throw std::runtime_error("mix_into: sample rate mismatch");
  const size_t off = static_cast<size_t>(std::lround(start_s * base.rate));
  for (size_t i = 0; i < add.samples.size() && off + i < base.samples.size(); ++i)
    base.samples[off + i] += add.samples[i];
}

}  // namespace talkerlab::audio
