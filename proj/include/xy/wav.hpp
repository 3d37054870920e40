#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xy/checkpoint.hpp"
#include "xy/common.hpp"

namespace xy {

struct Audio {
    int sample_rate = 0;
    std::vector<real> samples;  // mono, [-1, 1]
};

// PCM16 mono only; samples quantized with round(x * 32767) clamped to int16
inline void save_wav(const std::string& path, const Audio& audio) {
    XY_CHECK(audio.sample_rate > 0, "save_wav: bad sample rate");
    std::ofstream os(path, std::ios::binary);
    XY_CHECK(os.is_open(), "cannot open for write: " + path);
    const uint32_t data_size = static_cast<uint32_t>(audio.samples.size() * 2);
    os.write("RIFF", 4);
    io::write_le<uint32_t>(os, 36 + data_size);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    io::write_le<uint32_t>(os, 16);
    io::write_le<uint16_t>(os, 1);  // PCM
    io::write_le<uint16_t>(os, 1);  // mono
    io::write_le<uint32_t>(os, static_cast<uint32_t>(audio.sample_rate));
    io::write_le<uint32_t>(os, static_cast<uint32_t>(audio.sample_rate * 2));
    io::write_le<uint16_t>(os, 2);
    io::write_le<uint16_t>(os, 16);
    os.write("data", 4);
    io::write_le<uint32_t>(os, data_size);
    for (real s : audio.samples) {
        real scaled = std::round(s * 32767.0);
        scaled = std::min(real(32767.0), std::max(real(-32768.0), scaled));
        io::write_le<int16_t>(os, static_cast<int16_t>(scaled));
    }
    XY_CHECK(os.good(), "wav write failed");
}

inline Audio load_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    XY_CHECK(is.is_open(), "cannot open for read: " + path);
    char tag[4];
    is.read(tag, 4);
    XY_CHECK(is.good() && std::memcmp(tag, "RIFF", 4) == 0, "not a RIFF file: " + path);
    io::read_le<uint32_t>(is);
    is.read(tag, 4);
    XY_CHECK(is.good() && std::memcmp(tag, "WAVE", 4) == 0, "not a WAVE file: " + path);

    Audio audio;
    bool have_fmt = false;
    while (is.read(tag, 4)) {
        const uint32_t chunk_size = io::read_le<uint32_t>(is);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            XY_CHECK(chunk_size >= 16, "malformed fmt chunk");
            const uint16_t format = io::read_le<uint16_t>(is);
            const uint16_t channels = io::read_le<uint16_t>(is);
            const uint32_t rate = io::read_le<uint32_t>(is);
            io::read_le<uint32_t>(is);
            io::read_le<uint16_t>(is);
            const uint16_t bits = io::read_le<uint16_t>(is);
            XY_CHECK(format == 1, "only PCM wav supported");
            XY_CHECK(channels == 1, "only mono wav supported");
            XY_CHECK(bits == 16, "only 16-bit wav supported");
            audio.sample_rate = static_cast<int>(rate);
            is.ignore(chunk_size - 16);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            XY_CHECK(have_fmt, "data chunk before fmt chunk");
            const uint32_t n = chunk_size / 2;
            audio.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i)
                audio.samples[i] = static_cast<real>(io::read_le<int16_t>(is)) / 32767.0;
            return audio;
        } else {
            is.ignore(chunk_size + (chunk_size & 1));
        }
    }
    XY_CHECK(false, "wav file has no data chunk: " + path);
    return audio;
}

}  // namespace xy
