#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <random>

#include "bts/crf.hpp"

using namespace bts;

namespace {

SliceTensor random_slice(int channels, int h, int w, std::uint64_t seed) {
    SliceTensor s;
    s.channels = channels;
    s.height = h;
    s.width = w;
    s.data.resize(std::size_t(channels) * h * w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 255.0f);
    for (auto& v : s.data) v = d(rng);
    return s;
}

Tensor random_scores(int labels, int h, int w, std::uint64_t seed) {
    Tensor t(labels, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (auto& v : t.v) v = d(rng);
    return t;
}

// Direct transcription of the update: for every pixel i and label u,
//   z(i,u) = -phi(i,u) - sum_v mu(u,v) * sum_m w_m * sum_{j != i} k_m(i,j) q(j,v)
// followed by a per-pixel softmax. Written without reusing any library loop
// structure so it can serve as the oracle.
Tensor oracle_iteration(const Tensor& qin, const Tensor& unary, const PixelFeatures& feats,
                        const CrfParameters& p) {
    std::size_t m = feats.pixels();
    Tensor out(p.labels, qin.h, qin.w);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> msg1(p.labels, 0.0), msg2(p.labels, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            auto [k1, k2] = pairwise_kernels(feats, i, j, p);
            for (int v = 0; v < p.labels; ++v) {
                msg1[v] += k1 * qin.v[std::size_t(v) * m + j];
                msg2[v] += k2 * qin.v[std::size_t(v) * m + j];
            }
        }
        std::vector<double> z(p.labels);
        for (int u = 0; u < p.labels; ++u) {
            double pairwise = 0.0;
            for (int v = 0; v < p.labels; ++v)
                pairwise += p.mu_at(u, v) * (p.w1 * msg1[v] + p.w2 * msg2[v]);
            z[u] = -unary.v[std::size_t(u) * m + i] - pairwise;
        }
        double zmax = z[0];
        for (double x : z) zmax = std::max(zmax, x);
        double denom = 0.0;
        for (int u = 0; u < p.labels; ++u) denom += std::exp(z[u] - zmax);
        for (int u = 0; u < p.labels; ++u)
            out.v[std::size_t(u) * m + i] = std::exp(z[u] - zmax) / denom;
    }
    return out;
}

}  // namespace

TEST_CASE("kernel values at analytic feature configurations") {
    SliceTensor s = random_slice(3, 2, 3, 1);
    // identical intensities everywhere
    for (auto& v : s.data) v = 42.0f;
    PixelFeatures f = features_from_slice(s);
    CrfParameters p = default_crf();

    auto [k1_same, k2_same] = pairwise_kernels(f, 0, 0, p);
    CHECK(k1_same == doctest::Approx(1.0));
    CHECK(k2_same == doctest::Approx(1.0));

    // pixels (0,0) and (y,x) with ||ds||^2 = 2 theta_gamma^2 => k2 = e^-1
    // theta_gamma = 3 so ds = (3, 3)
    CHECK(f.w == 3);
    SliceTensor s2 = random_slice(1, 4, 4, 2);
    for (auto& v : s2.data) v = 7.0f;
    PixelFeatures f2 = features_from_slice(s2);
    auto [k1b, k2b] = pairwise_kernels(f2, 0, std::size_t(3) * 4 + 3, p);
    CHECK(k2b == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(k1b == doctest::Approx(std::exp(-(9.0 + 9.0) / (2 * 160.0 * 160.0))).epsilon(1e-12));
}

TEST_CASE("kernels match a direct formula oracle on random features") {
    SliceTensor s = random_slice(3, 5, 6, 3);
    PixelFeatures f = features_from_slice(s);
    CrfParameters p = default_crf();
    p.theta_alpha = 50.0;
    p.theta_beta = 10.0;
    p.theta_gamma = 2.5;
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t i = rng() % f.pixels(), j = rng() % f.pixels();
        int yi = int(i) / f.w, xi = int(i) % f.w;
        int yj = int(j) / f.w, xj = int(j) % f.w;
        double ds2 = double(yi - yj) * (yi - yj) + double(xi - xj) * (xi - xj);
        double de2 = 0.0;
        for (int c = 0; c < f.c; ++c) {
            double d = f.intensity[(std::size_t(c) * f.h + yi) * f.w + xi] -
                       f.intensity[(std::size_t(c) * f.h + yj) * f.w + xj];
            de2 += d * d;
        }
        double k1 = std::exp(-ds2 / (2 * p.theta_alpha * p.theta_alpha) -
                             de2 / (2 * p.theta_beta * p.theta_beta));
        double k2 = std::exp(-ds2 / (2 * p.theta_gamma * p.theta_gamma));
        auto [a, b] = pairwise_kernels(f, i, j, p);
        CHECK(a == doctest::Approx(k1).epsilon(1e-12));
        CHECK(b == doctest::Approx(k2).epsilon(1e-12));
    }
}

TEST_CASE("default parameters carry the published bandwidths") {
    CrfParameters p = default_crf();
    CHECK(p.theta_alpha == 160.0);
    CHECK(p.theta_beta == 3.0);
    CHECK(p.theta_gamma == 3.0);
    CHECK(p.iterations == 5);
    CHECK(p.w1 == 1.0);
    CHECK(p.w2 == 1.0);
    for (int u = 0; u < 5; ++u)
        for (int v = 0; v < 5; ++v) CHECK(p.mu_at(u, v) == (u == v ? 0.0 : 1.0));
}

TEST_CASE("zero pairwise weights reduce the update to softmax of the unary") {
    SliceTensor s = random_slice(3, 4, 4, 5);
    PixelFeatures f = features_from_slice(s);
    CrfParameters p = default_crf();
    p.w1 = p.w2 = 0.0;
    Tensor unary = random_scores(5, 4, 4, 6);
    Tensor qin = softmax_channels(random_scores(5, 4, 4, 7));
    Tensor out = mean_field_iteration(qin, unary, f, p, MessageMode::Exact);
    Tensor neg = unary;
    for (auto& v : neg.v) v = -v;
    Tensor want = softmax_channels(neg);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        CHECK(out.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
}

TEST_CASE("zero compatibility behaves exactly like zero weights") {
    SliceTensor s = random_slice(3, 4, 5, 8);
    PixelFeatures f = features_from_slice(s);
    Tensor unary = random_scores(5, 4, 5, 9);
    Tensor qin = softmax_channels(random_scores(5, 4, 5, 10));
    CrfParameters pw = default_crf();
    pw.w1 = pw.w2 = 0.0;
    CrfParameters pm = default_crf();
    std::fill(pm.mu.begin(), pm.mu.end(), 0.0);
    Tensor a = mean_field_iteration(qin, unary, f, pw, MessageMode::Exact);
    Tensor b = mean_field_iteration(qin, unary, f, pm, MessageMode::Exact);
    for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]));
}

TEST_CASE("2-pixel 2-label update matches the longhand expansion") {
    // hand-set everything; evaluate the four pairwise terms explicitly
    CrfParameters p;
    p.labels = 2;
    p.w1 = 0.7;
    p.w2 = 0.4;
    p.mu = {0.0, 1.3, 0.9, 0.0};
    p.theta_alpha = 5.0;
    p.theta_beta = 4.0;
    p.theta_gamma = 2.0;

    SliceTensor s;
    s.channels = 1;
    s.height = 1;
    s.width = 2;
    s.data = {10.0f, 30.0f};
    PixelFeatures f = features_from_slice(s);

    Tensor unary(2, 1, 2);
    unary.v = {0.3, -0.2, 1.1, 0.5};  // [label][pixel]
    Tensor qin(2, 1, 2);
    qin.v = {0.6, 0.25, 0.4, 0.75};

    double k1 = std::exp(-1.0 / (2 * 25.0) - 400.0 / (2 * 16.0));
    double k2 = std::exp(-1.0 / (2 * 4.0));

    // pixel 0: messages come only from pixel 1
    double m0_l0 = p.w1 * k1 * qin.v[1] + p.w2 * k2 * qin.v[1];
    double m0_l1 = p.w1 * k1 * qin.v[3] + p.w2 * k2 * qin.v[3];
    double z00 = -unary.v[0] - (p.mu[0] * m0_l0 + p.mu[1] * m0_l1);
    double z01 = -unary.v[2] - (p.mu[2] * m0_l0 + p.mu[3] * m0_l1);
    double q00 = std::exp(z00) / (std::exp(z00) + std::exp(z01));
    // pixel 1: messages come only from pixel 0
    double m1_l0 = p.w1 * k1 * qin.v[0] + p.w2 * k2 * qin.v[0];
    double m1_l1 = p.w1 * k1 * qin.v[2] + p.w2 * k2 * qin.v[2];
    double z10 = -unary.v[1] - (p.mu[0] * m1_l0 + p.mu[1] * m1_l1);
    double z11 = -unary.v[3] - (p.mu[2] * m1_l0 + p.mu[3] * m1_l1);
    double q10 = std::exp(z10) / (std::exp(z10) + std::exp(z11));

    Tensor out = mean_field_iteration(qin, unary, f, p, MessageMode::Exact);
    CHECK(out.v[0] == doctest::Approx(q00).epsilon(1e-10));
    CHECK(out.v[1] == doctest::Approx(q10).epsilon(1e-10));
    CHECK(out.v[2] == doctest::Approx(1.0 - q00).epsilon(1e-10));
    CHECK(out.v[3] == doctest::Approx(1.0 - q10).epsilon(1e-10));
}

TEST_CASE("T=1 with zero weights recovers the softmax of the scores") {
    SliceTensor s = random_slice(3, 5, 5, 11);
    Tensor scores = random_scores(5, 5, 5, 12);
    CrfParameters p = default_crf();
    p.w1 = p.w2 = 0.0;
    p.iterations = 1;
    Tensor q = crf_rnn_forward(scores, s, p, MessageMode::Exact);
    Tensor want = softmax_channels(scores);
    for (std::size_t i = 0; i < q.v.size(); ++i)
        CHECK(q.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
}

TEST_CASE("T=3 recursion equals three chained oracle iterations") {
    SliceTensor s = random_slice(3, 6, 6, 13);
    Tensor scores = random_scores(5, 6, 6, 14);
    CrfParameters p = default_crf();
    p.iterations = 3;
    PixelFeatures f = features_from_slice(s);
    Tensor unary = scores;
    for (auto& v : unary.v) v = -v;
    Tensor q = softmax_channels(scores);
    for (int t = 0; t < 3; ++t) q = oracle_iteration(q, unary, f, p);
    Tensor got = crf_rnn_forward(scores, s, p, MessageMode::Exact);
    for (std::size_t i = 0; i < q.v.size(); ++i)
        CHECK(got.v[i] == doctest::Approx(q.v[i]).epsilon(1e-8));
}

TEST_CASE("windowed messages approximate the exact ones on smooth slices") {
    SliceTensor s = random_slice(3, 10, 10, 15);
    Tensor scores = random_scores(5, 10, 10, 16);
    CrfParameters p = default_crf();
    p.theta_alpha = 2.0;  // small bandwidths so the window captures the mass
    p.iterations = 2;
    Tensor exact = crf_rnn_forward(scores, s, p, MessageMode::Exact);
    Tensor win = crf_rnn_forward(scores, s, p, MessageMode::Windowed);
    for (std::size_t i = 0; i < exact.v.size(); ++i)
        CHECK(win.v[i] == doctest::Approx(exact.v[i]).epsilon(2e-2));
}

TEST_CASE("free energy analytic values") {
    // single pixel, uniform Q over 5 labels, zero potentials: only -H(Q)
    SliceTensor s;
    s.channels = 1;
    s.height = 1;
    s.width = 1;
    s.data = {0.0f};
    PixelFeatures f = features_from_slice(s);
    CrfParameters p = default_crf();
    Tensor q(5, 1, 1), unary(5, 1, 1);
    for (auto& v : q.v) v = 0.2;
    CHECK(free_energy(q, unary, f, p) == doctest::Approx(std::log(0.2)).epsilon(1e-12));

    // delta Q on the label with the smallest unary, zero pairwise
    CrfParameters pz = default_crf();
    pz.w1 = pz.w2 = 0.0;
    unary.v = {3.0, 1.0, 0.25, 2.0, 5.0};
    Tensor qd(5, 1, 1);
    qd.v = {0.0, 0.0, 1.0, 0.0, 0.0};
    CHECK(free_energy(qd, unary, f, pz) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("converged beliefs are a fixed point of the update") {
    SliceTensor s = random_slice(3, 6, 6, 17);
    Tensor scores = random_scores(5, 6, 6, 18);
    CrfParameters p = default_crf();
    p.iterations = 60;
    Tensor q = crf_rnn_forward(scores, s, p, MessageMode::Exact);
    PixelFeatures f = features_from_slice(s);
    Tensor unary = scores;
    for (auto& v : unary.v) v = -v;
    Tensor again = mean_field_iteration(q, unary, f, p, MessageMode::Exact);
    for (std::size_t i = 0; i < q.v.size(); ++i)
        CHECK(again.v[i] == doctest::Approx(q.v[i]).epsilon(1e-6));
}

TEST_CASE("crf parameter files round-trip") {
    CrfParameters p = default_crf();
    p.w1 = 1.5;
    p.w2 = 0.25;
    p.mu_at(0, 2) = -0.75;
    p.iterations = 7;
    std::string path = "/tmp/bts_test_crf.json";
    save_crf(path, p);
    CrfParameters r = load_crf(path);
    CHECK(r.w1 == p.w1);
    CHECK(r.w2 == p.w2);
    CHECK(r.mu == p.mu);
    CHECK(r.iterations == 7);
    CHECK(r.theta_alpha == p.theta_alpha);
    std::remove(path.c_str());
}

TEST_CASE("tape forward agrees with the plain forward") {
    SliceTensor s = random_slice(3, 5, 5, 19);
    Tensor scores = random_scores(5, 5, 5, 20);
    CrfParameters p = default_crf();
    p.iterations = 3;
    PixelFeatures f = features_from_slice(s);
    CrfTape tape;
    Tensor q1 = crf_forward_tape(scores, f, p, tape);
    Tensor q2 = crf_rnn_forward(scores, s, p, MessageMode::Exact);
    for (std::size_t i = 0; i < q1.v.size(); ++i)
        CHECK(q1.v[i] == doctest::Approx(q2.v[i]).epsilon(1e-12));
    CHECK(tape.q.size() == 4);
    CHECK(tape.msg1.size() == 3);
}

TEST_CASE("w and mu gradients match finite differences through the recursion") {
    SliceTensor s = random_slice(3, 4, 4, 21);
    Tensor scores = random_scores(5, 4, 4, 22);
    std::vector<std::uint8_t> labels(16);
    std::mt19937_64 rng(23);
    for (auto& l : labels) l = std::uint8_t(rng() % 5);
    CrfParameters p = default_crf();
    p.iterations = 2;
    PixelFeatures f = features_from_slice(s);

    auto loss_at = [&](const CrfParameters& pp) {
        CrfTape tape;
        Tensor q = crf_forward_tape(scores, f, pp, tape);
        double loss = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            loss -= std::log(std::max(q.v[std::size_t(labels[i]) * 16 + i], 1e-12));
        return loss / double(labels.size());
    };

    CrfTape tape;
    Tensor q = crf_forward_tape(scores, f, p, tape);
    Tensor dq(5, 4, 4);
    for (std::size_t i = 0; i < labels.size(); ++i)
        dq.v[std::size_t(labels[i]) * 16 + i] =
            -1.0 / (std::max(q.v[std::size_t(labels[i]) * 16 + i], 1e-12) * 16.0);
    CrfGradients grads;
    grads.mu.assign(25, 0.0);
    crf_backward_tape(dq, tape, p, grads, nullptr);

    double eps = 1e-5;
    auto fd = [&](auto&& set) {
        CrfParameters hi = p, lo = p;
        set(hi, eps);
        set(lo, -eps);
        return (loss_at(hi) - loss_at(lo)) / (2 * eps);
    };
    double fd_w1 = fd([](CrfParameters& pp, double e) { pp.w1 += e; });
    double fd_w2 = fd([](CrfParameters& pp, double e) { pp.w2 += e; });
    CHECK(grads.w1 == doctest::Approx(fd_w1).epsilon(1e-4));
    CHECK(grads.w2 == doctest::Approx(fd_w2).epsilon(1e-4));
    for (auto [u, v] : {std::pair{0, 1}, {2, 3}, {4, 0}, {1, 1}}) {
        double fd_mu = fd([&](CrfParameters& pp, double e) { pp.mu_at(u, v) += e; });
        CHECK(grads.mu[std::size_t(u) * 5 + v] == doctest::Approx(fd_mu).epsilon(1e-4));
    }
}

TEST_CASE("score gradients match finite differences through the recursion") {
    SliceTensor s = random_slice(3, 3, 3, 31);
    Tensor scores = random_scores(5, 3, 3, 32);
    std::vector<std::uint8_t> labels(9);
    std::mt19937_64 rng(33);
    for (auto& l : labels) l = std::uint8_t(rng() % 5);
    CrfParameters p = default_crf();
    p.iterations = 2;
    PixelFeatures f = features_from_slice(s);

    auto loss_at = [&](const Tensor& sc) {
        CrfTape tape;
        Tensor q = crf_forward_tape(sc, f, p, tape);
        double loss = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            loss -= std::log(std::max(q.v[std::size_t(labels[i]) * 9 + i], 1e-12));
        return loss / double(labels.size());
    };

    CrfTape tape;
    Tensor q = crf_forward_tape(scores, f, p, tape);
    Tensor dq(5, 3, 3);
    for (std::size_t i = 0; i < labels.size(); ++i)
        dq.v[std::size_t(labels[i]) * 9 + i] =
            -1.0 / (std::max(q.v[std::size_t(labels[i]) * 9 + i], 1e-12) * 9.0);
    CrfGradients grads;
    grads.mu.assign(25, 0.0);
    Tensor dscores;
    crf_backward_tape(dq, tape, p, grads, &dscores);

    double eps = 1e-5;
    std::uniform_int_distribution<std::size_t> pick(0, scores.v.size() - 1);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t idx = pick(rng);
        Tensor hi = scores, lo = scores;
        hi.v[idx] += eps;
        lo.v[idx] -= eps;
        double fdg = (loss_at(hi) - loss_at(lo)) / (2 * eps);
        CHECK(dscores.v[idx] == doctest::Approx(fdg).epsilon(1e-4));
    }
}

TEST_CASE("training step 2 freezes the network and obeys a zero rate") {
    auto fcnn = make_network(1, 3, 2, 41);
    auto fcnn_copy = fcnn;
    CrfParameters crf = default_crf();
    crf.iterations = 2;
    CrfParameters crf_copy = crf;

    SliceSample sample;
    sample.slice = random_slice(3, 6, 6, 42);
    sample.labels.resize(36);
    std::mt19937_64 rng(43);
    for (auto& l : sample.labels) l = std::uint8_t(rng() % 5);

    auto trace = train_step2(fcnn, crf, {sample}, 0.0, 2);
    CHECK(trace.size() == 2);
    CHECK(crf.w1 == crf_copy.w1);
    CHECK(crf.mu == crf_copy.mu);
    for (std::size_t i = 0; i < fcnn.front.size(); ++i)
        CHECK(fcnn.front[i].w == fcnn_copy.front[i].w);

    // a real rate moves the parameters and never touches the network
    auto trace2 = train_step2(fcnn, crf, {sample}, 1e-3, 1);
    CHECK((crf.w1 != crf_copy.w1 || crf.w2 != crf_copy.w2 || crf.mu != crf_copy.mu));
    for (std::size_t i = 0; i < fcnn.front.size(); ++i)
        CHECK(fcnn.front[i].w == fcnn_copy.front[i].w);
}

TEST_CASE("joint fine-tuning descends for a small enough rate") {
    auto fcnn = make_network(1, 3, 2, 51);
    CrfParameters crf = default_crf();
    crf.iterations = 2;

    SliceSample sample;
    sample.slice = random_slice(3, 8, 8, 52);
    sample.labels.resize(64);
    std::mt19937_64 rng(53);
    for (auto& l : sample.labels) l = std::uint8_t(rng() % 5);

    auto fcnn_zero = fcnn;
    CrfParameters crf_zero = crf;
    finetune_step3(fcnn_zero, crf_zero, {sample}, 0.0, 1);
    for (std::size_t i = 0; i < fcnn.front.size(); ++i)
        CHECK(fcnn_zero.front[i].w == fcnn.front[i].w);
    CHECK(crf_zero.mu == crf.mu);

    double rate = 1e-4;
    for (int attempt = 0; attempt < 6; ++attempt) {
        auto f = fcnn;
        auto c = crf;
        auto trace = finetune_step3(f, c, {sample}, rate, 2);
        if (trace[1] <= trace[0] + 1e-12) {
            CHECK(trace[1] <= trace[0] + 1e-12);
            return;
        }
        rate *= 0.5;
    }
    FAIL("loss did not descend for any tested rate");
}
