// wav.hpp: RIFF/WAVE reading and writing (16-bit PCM and 32-bit float).
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "earshot/common.hpp"

namespace earshot {

/// Deinterleaved multichannel audio, samples in [-1, 1] nominal range.
struct AudioBuffer {
  std::vector<std::vector<double>> channels;
  double sample_rate = 0.0;

  int num_channels() const { return static_cast<int>(channels.size()); }
  size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
};

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

inline void append_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}
inline void append_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace detail

/// Read a WAV file. Accepts PCM16 and IEEE float32, any channel count.
/// Throws io_error on malformed or unsupported files.
inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for reading: " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw io_error("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, num_channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  const uint8_t* data = nullptr;
  uint32_t data_size = 0;

  size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    uint32_t size = detail::read_u32(raw.data() + pos + 4);
    pos += 8;
    if (pos + size > raw.size()) throw io_error("truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw io_error("fmt chunk too small in " + path);
      const uint8_t* p = raw.data() + pos;
      format = detail::read_u16(p);
      num_channels = detail::read_u16(p + 2);
      sample_rate = detail::read_u32(p + 4);
      bits = detail::read_u16(p + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = raw.data() + pos;
      data_size = size;
    }
    pos += size + (size & 1);  // chunks are word aligned
  }
  if (!have_fmt || data == nullptr) throw io_error("missing fmt or data chunk in " + path);
  if (num_channels == 0) throw io_error("zero channels in " + path);
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw io_error("unsupported encoding (need PCM16 or float32) in " + path);

  const uint32_t bytes_per_sample = bits / 8;
  const uint32_t frame_bytes = bytes_per_sample * num_channels;
  const size_t num_frames = data_size / frame_bytes;

  AudioBuffer buf;
  buf.sample_rate = sample_rate;
  buf.channels.assign(num_channels, std::vector<double>(num_frames));
  for (size_t n = 0; n < num_frames; ++n) {
    for (int c = 0; c < num_channels; ++c) {
      const uint8_t* p = data + n * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        int16_t v = static_cast<int16_t>(detail::read_u16(p));
        buf.channels[c][n] = v / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        buf.channels[c][n] = v;
      }
    }
  }
  return buf;
}

/// Write a WAV file. PCM16 output is clipped to [-1, 1); float32 is written
/// as-is. Throws io_error if the buffer is empty or channels differ in length.
inline void write_wav(const std::string& path, const AudioBuffer& buf,
                      WavEncoding enc = WavEncoding::float32) {
  if (buf.channels.empty()) throw io_error("refusing to write empty buffer: " + path);
  const size_t num_frames = buf.channels[0].size();
  for (const auto& ch : buf.channels)
    if (ch.size() != num_frames)
      throw io_error("channel length mismatch writing " + path);

  const int nch = buf.num_channels();
  const uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const uint16_t fmt = enc == WavEncoding::pcm16 ? 1 : 3;
  const uint32_t rate = static_cast<uint32_t>(buf.sample_rate);
  const uint32_t frame_bytes = nch * bits / 8;
  const uint32_t data_size = static_cast<uint32_t>(num_frames * frame_bytes);

  std::vector<uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::append_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::append_u32(out, 16);
  detail::append_u16(out, fmt);
  detail::append_u16(out, static_cast<uint16_t>(nch));
  detail::append_u32(out, rate);
  detail::append_u32(out, rate * frame_bytes);
  detail::append_u16(out, static_cast<uint16_t>(frame_bytes));
  detail::append_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::append_u32(out, data_size);

  for (size_t n = 0; n < num_frames; ++n) {
    for (int c = 0; c < nch; ++c) {
      const double v = buf.channels[c][n];
      if (enc == WavEncoding::pcm16) {
        double s = std::max(-1.0, std::min(32767.0 / 32768.0, v));
        int16_t q = static_cast<int16_t>(std::lrint(s * 32768.0));
        detail::append_u16(out, static_cast<uint16_t>(q));
      } else {
        float s = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &s, 4);
        detail::append_u32(out, u);
      }
    }
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw io_error("short write: " + path);
}

}  // namespace earshot
