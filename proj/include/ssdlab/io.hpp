#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdlab/matrix.hpp"

namespace ssdlab {

// Shortest round-trip decimal representation; fixed across platforms for a
// given double, which keeps CSV outputs diffable between runs.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double parsed = std::strtod(buf, nullptr);
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    (void)parsed;
    return buf;
}

// Comma-separated, header row, '.' decimal separator, LF line endings.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    void numeric_row(const std::vector<double>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(cells[i]);
        }
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

// PGM P2 (ASCII): human-inspectable and bit-exact.
inline void write_pgm(const std::string& path, const Vector& img, std::size_t h,
                      std::size_t w, unsigned maxval = 255) {
    if (img.size() != h * w) throw std::invalid_argument("write_pgm: size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
    f << "P2\n" << w << " " << h << "\n" << maxval << "\n";
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double v = std::clamp(img[r * w + c], 0.0, 1.0);
            unsigned q = static_cast<unsigned>(std::lround(v * maxval));
            if (c) f << ' ';
            f << q;
        }
        f << '\n';
    }
}

struct PgmImage {
    std::size_t height = 0;
    std::size_t width = 0;
    Vector pixels;  // scaled to [0, 1]
};

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P2") throw std::runtime_error("read_pgm: not a P2 file: " + path);
    auto next_token = [&f, &path]() {
        std::string tok;
        while (f >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(f, rest);
                continue;
            }
            return tok;
        }
        throw std::runtime_error("read_pgm: truncated file " + path);
    };
    PgmImage img;
    img.width = std::stoul(next_token());
    img.height = std::stoul(next_token());
    unsigned maxval = static_cast<unsigned>(std::stoul(next_token()));
    if (maxval == 0) throw std::runtime_error("read_pgm: zero maxval in " + path);
    img.pixels.resize(img.width * img.height);
    for (double& p : img.pixels)
        p = static_cast<double>(std::stoul(next_token())) / maxval;
    return img;
}

// FNV-1a 64-bit over the file bytes; manifests use this to pin outputs.
inline std::string file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("file_checksum: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!f) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

}  // namespace ssdlab
