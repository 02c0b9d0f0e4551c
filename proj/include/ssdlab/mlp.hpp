#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdlab/matrix.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

// Sinusoidal time embedding: [sin(2^k pi t), cos(2^k pi t)] for k < K.
inline Vector time_features(double t, std::size_t k_freqs) {
    Vector f(2 * k_freqs);
    for (std::size_t k = 0; k < k_freqs; ++k) {
        double w = std::ldexp(3.14159265358979323846, static_cast<int>(k)) * t;
        f[2 * k] = std::sin(w);
        f[2 * k + 1] = std::cos(w);
    }
    return f;
}

struct DenseLayer {
    Matrix w;  // out x in, row-major
    Vector b;  // out
};

// Flattened-image MLP velocity field v(z, t). Input is z concatenated with
// the sinusoidal time embedding; hidden layers use tanh; the output layer is
// linear and zero-initialized so the initial field is identically zero.
struct VelocityModel {
    std::size_t dim = 0;  // input/output pixel count
    std::size_t time_freqs = 8;
    std::vector<std::size_t> hidden;
    std::vector<DenseLayer> layers;

    std::size_t feature_dim() const { return dim + 2 * time_freqs; }

    static VelocityModel init(std::size_t dim, std::vector<std::size_t> hidden,
                              std::size_t time_freqs, RngStream& rng) {
        VelocityModel m;
        m.dim = dim;
        m.time_freqs = time_freqs;
        m.hidden = std::move(hidden);
        std::size_t in = m.feature_dim();
        for (std::size_t h : m.hidden) {
            DenseLayer l;
            l.w = Matrix(h, in);
            l.b = Vector(h, 0.0);
            double bound = std::sqrt(1.0 / static_cast<double>(in));
            for (double& v : l.w.data) v = bound * (2.0 * rng.uniform() - 1.0);
            m.layers.push_back(std::move(l));
            in = h;
        }
        DenseLayer out;
        out.w = Matrix(dim, in);  // zero-initialized
        out.b = Vector(dim, 0.0);
        m.layers.push_back(std::move(out));
        return m;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.w.data.size() + l.b.size();
        return n;
    }

    // Per-sample activation record used by the backward pass.
    struct Tape {
        Vector input;                     // z ++ time features
        std::vector<Vector> activations;  // post-nonlinearity per hidden layer
        Vector output;
    };

    Vector forward(const Vector& z, double t, Tape* tape = nullptr) const {
        if (z.size() != dim)
            throw std::invalid_argument("VelocityModel::forward: input dimension mismatch");
        Vector x = z;
        Vector tf = time_features(t, time_freqs);
        x.insert(x.end(), tf.begin(), tf.end());
        if (tape) {
            tape->input = x;
            tape->activations.clear();
        }
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const DenseLayer& l = layers[li];
            Vector y(l.b);
            for (std::size_t r = 0; r < l.w.rows; ++r) {
                const double* row = l.w.data.data() + r * l.w.cols;
                double acc = 0.0;
                for (std::size_t c = 0; c < l.w.cols; ++c) acc += row[c] * x[c];
                y[r] += acc;
            }
            if (li + 1 < layers.size()) {
                for (double& v : y) v = std::tanh(v);
                if (tape) tape->activations.push_back(y);
            }
            x = std::move(y);
        }
        if (tape) tape->output = x;
        return x;
    }

    struct Gradients {
        std::vector<DenseLayer> layers;

        static Gradients zeros_like(const VelocityModel& m) {
            Gradients g;
            for (const auto& l : m.layers) {
                DenseLayer gl;
                gl.w = Matrix(l.w.rows, l.w.cols);
                gl.b = Vector(l.b.size(), 0.0);
                g.layers.push_back(std::move(gl));
            }
            return g;
        }

        void scale(double s) {
            for (auto& l : layers) {
                for (double& v : l.w.data) v *= s;
                for (double& v : l.b) v *= s;
            }
        }
    };

    // Accumulates parameter gradients for d(loss)/d(output) = grad_out into
    // `grads`. If grad_input is non-null it receives d(loss)/dz (the first
    // `dim` entries of the input gradient; time features are constants).
    void backward(const Tape& tape, const Vector& grad_out, Gradients& grads,
                  Vector* grad_input = nullptr) const {
        Vector g = grad_out;
        for (std::size_t li = layers.size(); li-- > 0;) {
            const DenseLayer& l = layers[li];
            DenseLayer& gl = grads.layers[li];
            const Vector& in = (li == 0) ? tape.input : tape.activations[li - 1];
            // dW += g * in^T, db += g
            for (std::size_t r = 0; r < l.w.rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                gl.b[r] += gr;
                double* wrow = gl.w.data.data() + r * l.w.cols;
                for (std::size_t c = 0; c < l.w.cols; ++c) wrow[c] += gr * in[c];
            }
            bool need_input = li > 0 || grad_input != nullptr;
            if (!need_input) break;
            Vector gin(l.w.cols, 0.0);
            for (std::size_t r = 0; r < l.w.rows; ++r) {
                double gr = g[r];
                if (gr == 0.0) continue;
                const double* wrow = l.w.data.data() + r * l.w.cols;
                for (std::size_t c = 0; c < l.w.cols; ++c) gin[c] += gr * wrow[c];
            }
            if (li > 0) {
                const Vector& act = tape.activations[li - 1];
                for (std::size_t c = 0; c < gin.size(); ++c)
                    gin[c] *= 1.0 - act[c] * act[c];  // tanh'
            }
            g = std::move(gin);
        }
        if (grad_input) grad_input->assign(g.begin(), g.begin() + static_cast<long>(dim));
    }

    // Checkpoint layout: magic "SSDM", u32 version, u32 dim, u32 time_freqs,
    // u32 hidden count, u32 hidden sizes, then all parameters as little-endian
    // f64 in layer order (weights row-major, then biases).
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("VelocityModel::save: cannot open " + path);
        f.write("SSDM", 4);
        auto put_u32 = [&f](std::uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
            f.write(reinterpret_cast<const char*>(b), 4);
        };
        auto put_f64 = [&f](double d) {
            std::uint64_t v;
            std::memcpy(&v, &d, 8);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
            f.write(reinterpret_cast<const char*>(b), 8);
        };
        put_u32(1);  // format version
        put_u32(static_cast<std::uint32_t>(dim));
        put_u32(static_cast<std::uint32_t>(time_freqs));
        put_u32(static_cast<std::uint32_t>(hidden.size()));
        for (std::size_t h : hidden) put_u32(static_cast<std::uint32_t>(h));
        for (const auto& l : layers) {
            for (double v : l.w.data) put_f64(v);
            for (double v : l.b) put_f64(v);
        }
        if (!f) throw std::runtime_error("VelocityModel::save: write failed for " + path);
    }

    static VelocityModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("VelocityModel::load: cannot open " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, "SSDM", 4) != 0)
            throw std::runtime_error("VelocityModel::load: bad magic in " + path);
        auto get_u32 = [&f]() {
            unsigned char b[4];
            f.read(reinterpret_cast<char*>(b), 4);
            return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                   (static_cast<std::uint32_t>(b[2]) << 16) |
                   (static_cast<std::uint32_t>(b[3]) << 24);
        };
        auto get_f64 = [&f]() {
            unsigned char b[8];
            f.read(reinterpret_cast<char*>(b), 8);
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
            double d;
            std::memcpy(&d, &v, 8);
            return d;
        };
        std::uint32_t version = get_u32();
        if (version != 1)
            throw std::runtime_error("VelocityModel::load: unsupported format version");
        VelocityModel m;
        m.dim = get_u32();
        m.time_freqs = get_u32();
        std::uint32_t nh = get_u32();
        for (std::uint32_t i = 0; i < nh; ++i) m.hidden.push_back(get_u32());
        std::size_t in = m.feature_dim();
        for (std::size_t h : m.hidden) {
            m.layers.push_back({Matrix(h, in), Vector(h, 0.0)});
            in = h;
        }
        m.layers.push_back({Matrix(m.dim, in), Vector(m.dim, 0.0)});
        for (auto& l : m.layers) {
            for (double& v : l.w.data) v = get_f64();
            for (double& v : l.b) v = get_f64();
        }
        if (!f) throw std::runtime_error("VelocityModel::load: truncated file " + path);
        return m;
    }
};

}  // namespace ssdlab
