#include "melle/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace melle::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct Reader {
  std::vector<char> bytes;
  std::size_t pos = 0;
  const std::string& path;

  explicit Reader(const std::string& p) : path(p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open wav file: " + p);
    bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("truncated wav file: " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v;
    std::memcpy(&v, bytes.data() + pos, 2);
    pos += 2;
    return v;
  }
  std::string tag() {
    need(4);
    std::string t(bytes.data() + pos, 4);
    pos += 4;
    return t;
  }
};

float decode_sample(const char* p, std::uint16_t fmt, std::uint16_t bits) {
  switch (bits) {
    case 8: {  // unsigned
      const auto v = static_cast<unsigned char>(*p);
      return (static_cast<float>(v) - 128.0f) / 128.0f;
    }
    case 16: {
      std::int16_t v;
      std::memcpy(&v, p, 2);
      return static_cast<float>(v) / 32768.0f;
    }
    case 24: {
      const auto b0 = static_cast<unsigned char>(p[0]);
      const auto b1 = static_cast<unsigned char>(p[1]);
      const auto b2 = static_cast<unsigned char>(p[2]);
      std::int32_t v = (b2 << 16) | (b1 << 8) | b0;
      if (v & 0x800000) v |= ~0xFFFFFF;
      return static_cast<float>(v) / 8388608.0f;
    }
    case 32: {
      if (fmt == kFormatFloat) {
        float v;
        std::memcpy(&v, p, 4);
        return v;
      }
      std::int32_t v;
      std::memcpy(&v, p, 4);
      return static_cast<float>(static_cast<double>(v) / 2147483648.0);
    }
    default:
      throw std::runtime_error("unsupported wav bit depth: " + std::to_string(bits));
  }
}

double sinc(double u) {
  if (u == 0.0) return 1.0;
  const double pu = std::numbers::pi * u;
  return std::sin(pu) / pu;
}

double blackman(double xi) {  // xi in [-1, 1]
  return 0.42 + 0.5 * std::cos(std::numbers::pi * xi) +
         0.08 * std::cos(2.0 * std::numbers::pi * xi);
}

}  // namespace

Wave read_wav(const std::string& path, std::uint32_t target_rate) {
  Reader r(path);
  if (r.tag() != "RIFF") throw std::runtime_error("not a riff file: " + path);
  r.u32();  // riff payload size, untrusted
  if (r.tag() != "WAVE") throw std::runtime_error("not a wave file: " + path);

  std::uint16_t fmt = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_pos = 0, data_len = 0;
  bool have_fmt = false;

  while (r.pos + 8 <= r.bytes.size()) {
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    r.need(size);
    if (id == "fmt ") {
      if (size < 16) throw std::runtime_error("malformed fmt chunk: " + path);
      const std::size_t base = r.pos;
      fmt = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      if (fmt == kFormatExtensible) {
        if (size < 40) throw std::runtime_error("malformed extensible fmt chunk: " + path);
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        fmt = r.u16();  // first two bytes of the subformat guid
      }
      r.pos = base + size;
      have_fmt = true;
    } else if (id == "data") {
      data_pos = r.pos;
      data_len = size;
      r.pos += size;
    } else {
      r.pos += size;  // LIST, fact, cue, ...
    }
    if (r.pos % 2 == 1) ++r.pos;  // chunks are word-aligned
  }

  if (!have_fmt || data_pos == 0) throw std::runtime_error("wav missing fmt or data chunk: " + path);
  if (fmt != kFormatPcm && fmt != kFormatFloat)
    throw std::runtime_error("unsupported wav encoding " + std::to_string(fmt) + ": " + path);
  if (fmt == kFormatFloat && bits != 32)
    throw std::runtime_error("unsupported float wav bit depth: " + path);
  if (channels == 0 || rate == 0) throw std::runtime_error("malformed wav header: " + path);

  const std::size_t bytes_per = bits / 8;
  if (bytes_per == 0 || bits % 8 != 0)
    throw std::runtime_error("unsupported wav bit depth: " + std::to_string(bits));
  const std::size_t frame_bytes = bytes_per * channels;
  const std::size_t frames = data_len / frame_bytes;

  Wave w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  const char* base = r.bytes.data() + data_pos;
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c)
      acc += decode_sample(base + i * frame_bytes + c * bytes_per, fmt, bits);
    w.samples[i] = static_cast<float>(acc / channels);
  }

  if (target_rate != 0 && w.sample_rate != target_rate) {
    w.samples = resample(w.samples, w.sample_rate, target_rate);
    w.sample_rate = target_rate;
  }
  for (float& s : w.samples) s = std::clamp(s, -1.0f, 1.0f);
  return w;
}

void write_wav(const std::string& path, const std::vector<float>& samples,
               std::uint32_t sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav file: " + path);
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  auto put_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  f.write("RIFF", 4);
  put_u32(36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(kFormatPcm);
  put_u16(1);
  put_u32(sample_rate);
  put_u32(sample_rate * 2);
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_len);
  for (float s : samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    f.write(reinterpret_cast<const char*>(&q), 2);
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

std::vector<float> resample(const std::vector<float>& in, std::uint32_t from, std::uint32_t to) {
  if (from == 0 || to == 0) throw std::runtime_error("resample: zero rate");
  if (from == to || in.empty()) return in;
  const double step = static_cast<double>(from) / to;  // input samples per output sample
  const double cutoff = 0.475 * std::min(1.0, static_cast<double>(to) / from);
  const double half = std::ceil(8.0 / (2.0 * cutoff));  // 8 sinc lobes each side
  const std::size_t out_len =
      static_cast<std::size_t>(std::llround(static_cast<double>(in.size()) * to / from));
  std::vector<float> out(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) * step;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - half));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + half));
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      const double x = static_cast<double>(i) - t;
      const double w = blackman(x / half) * sinc(2.0 * cutoff * x);
      wsum += w;
      if (i >= 0 && i < static_cast<std::ptrdiff_t>(in.size())) acc += w * in[i];
    }
    out[n] = static_cast<float>(acc / wsum);
  }
  return out;
}

}  // namespace melle::audio
