#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "ssdlab/trainer.hpp"

using namespace ssdlab;

namespace {

VelocityModel small_model(std::size_t dim, RngStream& rng) {
    VelocityModel m = VelocityModel::init(dim, {12, 12}, 2, rng);
    // randomize the output layer too so gradients flow everywhere
    auto& out = m.layers.back();
    double bound = std::sqrt(1.0 / static_cast<double>(out.w.cols));
    for (double& v : out.w.data) v = bound * (2.0 * rng.uniform() - 1.0);
    for (double& v : out.b) v = 0.1 * (2.0 * rng.uniform() - 1.0);
    return m;
}

TrainingBatch random_batch(std::size_t dim, std::size_t n, double eta, RngStream& rng) {
    std::vector<Vector> data;
    for (std::size_t i = 0; i < 8; ++i) data.push_back(standard_normal(rng, dim));
    SSDLossConfig cfg{eta, true};
    return make_batch(data, n, cfg, rng);
}

double loss_only(const VelocityModel& m, const TrainingBatch& b, const SSDLossConfig& cfg) {
    auto g = VelocityModel::Gradients::zeros_like(m);
    return ssd_loss(m, b, cfg, g);
}

}  // namespace

TEST_CASE("forward: zero-initialized final layer outputs zero") {
    RngStream rng(1);
    VelocityModel m = VelocityModel::init(6, {16}, 4, rng);
    Vector out = m.forward(standard_normal(rng, 6), 0.37);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("forward determinism") {
    RngStream rng(2);
    VelocityModel m = small_model(5, rng);
    Vector z = standard_normal(rng, 5);
    Vector a = m.forward(z, 0.5);
    Vector b = m.forward(z, 0.5);
    CHECK(a == b);
}

TEST_CASE("forward rejects wrong input dimension") {
    RngStream rng(3);
    VelocityModel m = small_model(5, rng);
    CHECK_THROWS_AS(m.forward({1.0, 2.0}, 0.5), std::invalid_argument);
}

TEST_CASE("ssd_loss eta=0 equals plain flow-matching MSE") {
    RngStream rng(4);
    VelocityModel m = small_model(6, rng);
    TrainingBatch b = random_batch(6, 5, 0.0, rng);
    SSDLossConfig cfg{0.0, true};
    double loss = loss_only(m, b, cfg);
    double expect = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        Vector v = m.forward(b.z[k], b.t[k]);
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            double r = v[j] - (b.x1[k][j] - b.x0[k][j]);
            s += r * r;
        }
        expect += s / 6.0;
    }
    expect /= static_cast<double>(b.size());
    CHECK(loss == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("ssd_loss clean-image target regresses on the data sample") {
    RngStream rng(17);
    VelocityModel m = small_model(6, rng);
    TrainingBatch b = random_batch(6, 4, 0.0, rng);
    SSDLossConfig cfg{0.0, true, RegressionTarget::clean_image};
    double loss = loss_only(m, b, cfg);
    double expect = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        Vector v = m.forward(b.z[k], b.t[k]);
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            double r = v[j] - b.x1[k][j];
            s += r * r;
        }
        expect += s / 6.0;
    }
    expect /= static_cast<double>(b.size());
    CHECK(loss == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("ssd_loss clean-image gradients match central finite differences") {
    RngStream rng(18);
    VelocityModel m = small_model(5, rng);
    TrainingBatch b = random_batch(5, 3, 0.5, rng);
    SSDLossConfig cfg{0.5, true, RegressionTarget::clean_image};
    auto g = VelocityModel::Gradients::zeros_like(m);
    ssd_loss(m, b, cfg, g);
    const double h = 1e-6;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        for (std::size_t i = 0; i < m.layers[li].w.data.size(); i += 7) {
            double save = m.layers[li].w.data[i];
            m.layers[li].w.data[i] = save + h;
            double up = loss_only(m, b, cfg);
            m.layers[li].w.data[i] = save - h;
            double dn = loss_only(m, b, cfg);
            m.layers[li].w.data[i] = save;
            double fd = (up - dn) / (2.0 * h);
            double an = g.layers[li].w.data[i];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            CHECK(std::abs(fd - an) / denom <= 1e-4);
        }
    }
}

TEST_CASE("ssd_loss masked gradient sparsity in the final layer") {
    RngStream rng(5);
    VelocityModel m = small_model(4, rng);
    TrainingBatch b = random_batch(4, 1, 0.0, rng);
    // force a single unmasked coordinate
    b.masks[0].bits = {0, 0, 1, 0};
    auto g = VelocityModel::Gradients::zeros_like(m);
    SSDLossConfig cfg{0.5, true};
    ssd_loss(m, b, cfg, g);
    const auto& gw = g.layers.back().w;
    for (std::size_t r = 0; r < gw.rows; ++r) {
        double mass = 0.0;
        for (std::size_t c = 0; c < gw.cols; ++c) mass += std::abs(gw(r, c));
        if (r == 2)
            CHECK(mass > 0.0);
        else
            CHECK(mass == 0.0);
    }
}

TEST_CASE("ssd_loss gradients match central finite differences at every eta") {
    RngStream rng(6);
    VelocityModel m = small_model(8, rng);
    for (double eta : {0.0, 0.5, 0.8, 0.98}) {
        TrainingBatch b = random_batch(8, 3, eta, rng);
        SSDLossConfig cfg{eta, true};
        auto g = VelocityModel::Gradients::zeros_like(m);
        ssd_loss(m, b, cfg, g);
        const double h = 1e-6;
        // probe a spread of parameters in every layer
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            auto& w = m.layers[li].w.data;
            for (std::size_t idx = 0; idx < w.size(); idx += std::max<std::size_t>(1, w.size() / 7)) {
                double orig = w[idx];
                w[idx] = orig + h;
                double lp = loss_only(m, b, cfg);
                w[idx] = orig - h;
                double lm = loss_only(m, b, cfg);
                w[idx] = orig;
                double fd = (lp - lm) / (2.0 * h);
                double an = g.layers[li].w.data[idx];
                double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
                CHECK(std::abs(fd - an) / scale <= 1e-4);
            }
            auto& bias = m.layers[li].b;
            for (std::size_t idx = 0; idx < bias.size();
                 idx += std::max<std::size_t>(1, bias.size() / 3)) {
                double orig = bias[idx];
                bias[idx] = orig + h;
                double lp = loss_only(m, b, cfg);
                bias[idx] = orig - h;
                double lm = loss_only(m, b, cfg);
                bias[idx] = orig;
                double fd = (lp - lm) / (2.0 * h);
                double an = g.layers[li].b[idx];
                double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
                CHECK(std::abs(fd - an) / scale <= 1e-4);
            }
        }
    }
}

TEST_CASE("masked-coordinate gradient neutrality") {
    // perturbing the regression target at masked coordinates (the interpolants
    // z are precomputed in the batch and left untouched) must leave the loss
    // and every gradient entry bitwise unchanged: masked coordinates carry
    // exactly zero signal
    RngStream rng(7);
    VelocityModel m = small_model(6, rng);
    TrainingBatch b = random_batch(6, 4, 0.5, rng);
    for (RegressionTarget target : {RegressionTarget::velocity, RegressionTarget::clean_image}) {
        SSDLossConfig cfg{0.5, false, target};
        auto g1 = VelocityModel::Gradients::zeros_like(m);
        double l1 = ssd_loss(m, b, cfg, g1);

        TrainingBatch b2 = b;
        for (std::size_t k = 0; k < b2.size(); ++k)
            for (std::size_t j = 0; j < 6; ++j)
                if (!b2.masks[k].bits[j]) {
                    b2.x1[k][j] += 3.7;
                    b2.x0[k][j] -= 1.3;
                }
        auto g2 = VelocityModel::Gradients::zeros_like(m);
        double l2 = ssd_loss(m, b2, cfg, g2);

        CHECK(l1 == l2);
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            CHECK(g1.layers[li].w.data == g2.layers[li].w.data);
            CHECK(g1.layers[li].b == g2.layers[li].b);
        }
    }
}

TEST_CASE("expected SSD loss scales by (1-eta) with normalization off") {
    RngStream rng(8);
    const std::size_t dim = 6;
    VelocityModel m = small_model(dim, rng);
    // one fixed (z, t, target) pair, expectation over masks only
    Vector z = standard_normal(rng, dim);
    Vector target = standard_normal(rng, dim);
    double t = 0.4;
    Vector v = m.forward(z, t);
    Vector r2(dim);
    double full = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
        double r = v[j] - target[j];
        r2[j] = r * r;
        full += r2[j];
    }
    double eta = 0.5;
    MaskConfig mc(eta, dim);
    double acc = 0.0;
    const std::size_t n_masks = 10000;
    for (std::size_t i = 0; i < n_masks; ++i) {
        MaskSample mask = sample_mask(rng, mc);
        for (std::size_t j = 0; j < dim; ++j)
            if (mask.bits[j]) acc += r2[j];
    }
    acc /= static_cast<double>(n_masks);
    CHECK(acc == doctest::Approx((1.0 - eta) * full).epsilon(0.02));
}

TEST_CASE("train: lr=0 leaves parameters unchanged") {
    RngStream rng(9);
    VelocityModel m = small_model(4, rng);
    VelocityModel before = m;
    std::vector<Vector> data{standard_normal(rng, 4), standard_normal(rng, 4)};
    AdamState opt = AdamState::for_model(m, 0.0);
    SSDLossConfig cfg{0.5, true};
    RngStream train_rng(10);
    train(m, data, cfg, opt, 3, 2, train_rng);
    for (std::size_t li = 0; li < m.layers.size(); ++li)
        CHECK(m.layers[li].w.data == before.layers[li].w.data);
}

TEST_CASE("train: same seed gives identical loss traces") {
    RngStream rng(11);
    std::vector<Vector> data;
    for (int i = 0; i < 6; ++i) data.push_back(standard_normal(rng, 4));
    auto run = [&data]() {
        RngStream init(20);
        VelocityModel m = VelocityModel::init(4, {8}, 2, init);
        AdamState opt = AdamState::for_model(m, 1e-3);
        SSDLossConfig cfg{0.5, true};
        RngStream train_rng(21);
        return train(m, data, cfg, opt, 5, 3, train_rng).epoch_loss;
    };
    CHECK(run() == run());
}

TEST_CASE("train: single-image memorization end to end") {
    RngStream rng(12);
    const std::size_t dim = 4;
    Vector target = {1.0, -1.0, 0.5, 0.25};
    std::vector<Vector> data{target};
    RngStream init(30);
    VelocityModel m = VelocityModel::init(dim, {32, 32}, 4, init);
    AdamState opt = AdamState::for_model(m, 1e-2);
    SSDLossConfig cfg{0.0, true};
    RngStream train_rng(31);
    auto res = train(m, data, cfg, opt, 300, 8, train_rng);
    CHECK(res.epoch_loss.back() < res.epoch_loss.front());
    // velocity near t=1 should point from z toward the image
    Vector z = target;
    for (double& v : z) v += 0.05;
    Vector vel = m.forward(z, 0.95);
    // target velocity is x1 - x0; at low noise the field should be finite
    // and the trained model should reconstruct through the sampler
    for (double v : vel) CHECK(std::isfinite(v));
}

TEST_CASE("model checkpoint round trip") {
    RngStream rng(13);
    VelocityModel m = small_model(5, rng);
    std::string path = "checkpoint_test.ssdm";
    m.save(path);
    VelocityModel loaded = VelocityModel::load(path);
    CHECK(loaded.dim == m.dim);
    CHECK(loaded.hidden == m.hidden);
    CHECK(loaded.time_freqs == m.time_freqs);
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        CHECK(loaded.layers[li].w.data == m.layers[li].w.data);
        CHECK(loaded.layers[li].b == m.layers[li].b);
    }
    Vector z = standard_normal(rng, 5);
    CHECK(loaded.forward(z, 0.3) == m.forward(z, 0.3));
    std::remove(path.c_str());
}
