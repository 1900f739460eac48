#include "bts/crf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace bts {

using nlohmann::json;

CrfParameters default_crf(int labels) {
    if (labels < 2) throw std::runtime_error("default_crf: need at least 2 labels");
    CrfParameters p;
    p.labels = labels;
    p.mu.assign(std::size_t(labels) * labels, 0.0);
    for (int u = 0; u < labels; ++u)
        for (int v = 0; v < labels; ++v)
            if (u != v) p.mu_at(u, v) = 1.0;  // Potts
    return p;
}

namespace {

void validate(const CrfParameters& p) {
    if (p.labels < 2) throw std::runtime_error("crf: need at least 2 labels");
    if (!(p.theta_alpha > 0 && p.theta_beta > 0 && p.theta_gamma > 0))
        throw std::runtime_error("crf: kernel bandwidths must be positive");
    if (p.iterations < 1) throw std::runtime_error("crf: iteration count must be >= 1");
    if (p.mu.size() != std::size_t(p.labels) * p.labels)
        throw std::runtime_error("crf: compatibility table must be labels x labels");
    for (double m : p.mu)
        if (!std::isfinite(m)) throw std::runtime_error("crf: non-finite compatibility entry");
}

}  // namespace

void save_crf(const std::string& path, const CrfParameters& p) {
    validate(p);
    json mu = json::array();
    for (int u = 0; u < p.labels; ++u) {
        json row = json::array();
        for (int v = 0; v < p.labels; ++v) row.push_back(p.mu_at(u, v));
        mu.push_back(row);
    }
    json doc = {{"w", {p.w1, p.w2}},
                {"mu", mu},
                {"theta", {p.theta_alpha, p.theta_beta, p.theta_gamma}},
                {"T", p.iterations}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << doc.dump(2) << '\n';
}

CrfParameters load_crf(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed CRF parameter file: " + e.what());
    }
    CrfParameters p;
    p.w1 = doc.at("w").at(0).get<double>();
    p.w2 = doc.at("w").at(1).get<double>();
    auto mu = doc.at("mu");
    p.labels = int(mu.size());
    p.mu.assign(std::size_t(p.labels) * p.labels, 0.0);
    for (int u = 0; u < p.labels; ++u)
        for (int v = 0; v < p.labels; ++v) p.mu_at(u, v) = mu.at(u).at(v).get<double>();
    p.theta_alpha = doc.at("theta").at(0).get<double>();
    p.theta_beta = doc.at("theta").at(1).get<double>();
    p.theta_gamma = doc.at("theta").at(2).get<double>();
    p.iterations = doc.at("T").get<int>();
    validate(p);
    return p;
}

PixelFeatures features_from_slice(const SliceTensor& slice) {
    PixelFeatures f;
    f.h = slice.height;
    f.w = slice.width;
    f.c = slice.channels;
    f.intensity.assign(slice.data.begin(), slice.data.end());
    return f;
}

namespace {

double intensity_dist2(const PixelFeatures& f, std::size_t i, std::size_t j) {
    const std::size_t plane = f.pixels();
    double d2 = 0.0;
    for (int c = 0; c < f.c; ++c) {
        double d = f.intensity[c * plane + i] - f.intensity[c * plane + j];
        d2 += d * d;
    }
    return d2;
}

}  // namespace

std::pair<double, double> pairwise_kernels(const PixelFeatures& feats, std::size_t i,
                                           std::size_t j, const CrfParameters& params) {
    int yi = int(i) / feats.w, xi = int(i) % feats.w;
    int yj = int(j) / feats.w, xj = int(j) % feats.w;
    double ds2 = double(yi - yj) * (yi - yj) + double(xi - xj) * (xi - xj);
    double de2 = intensity_dist2(feats, i, j);
    double k1 = std::exp(-ds2 / (2.0 * params.theta_alpha * params.theta_alpha) -
                         de2 / (2.0 * params.theta_beta * params.theta_beta));
    double k2 = std::exp(-ds2 / (2.0 * params.theta_gamma * params.theta_gamma));
    return {k1, k2};
}

namespace {

// Accumulates both kernels' messages m_k[v](i) = sum_{j != i} k(i,j) q[v](j).
// Offsets beyond 3*theta (spatially) are dropped in windowed mode.
void accumulate_messages(const Tensor& q, const PixelFeatures& f, const CrfParameters& p,
                         MessageMode mode, Tensor& m1, Tensor& m2) {
    const int h = f.h, w = f.w, L = q.c;
    const std::size_t plane = f.pixels();
    const double inv_a = 1.0 / (2.0 * p.theta_alpha * p.theta_alpha);
    const double inv_b = 1.0 / (2.0 * p.theta_beta * p.theta_beta);
    const double inv_g = 1.0 / (2.0 * p.theta_gamma * p.theta_gamma);
    double r1sq = std::numeric_limits<double>::infinity();
    double r2sq = std::numeric_limits<double>::infinity();
    if (mode == MessageMode::Windowed) {
        r1sq = 9.0 * p.theta_alpha * p.theta_alpha;
        r2sq = 9.0 * p.theta_gamma * p.theta_gamma;
    }
    m1 = Tensor(L, h, w);
    m2 = Tensor(L, h, w);
    for (int dy = 0; dy < h; ++dy)
        for (int dx = -(w - 1); dx < w; ++dx) {
            if (dy == 0 && dx <= 0) continue;
            const double ds2 = double(dy) * dy + double(dx) * dx;
            const bool use1 = ds2 <= r1sq, use2 = ds2 <= r2sq;
            if (!use1 && !use2) continue;
            const double s1 = std::exp(-ds2 * inv_a);
            const double s2 = use2 ? std::exp(-ds2 * inv_g) : 0.0;
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = 0; y + dy < h; ++y)
                for (int x = x0; x < x1; ++x) {
                    const std::size_t i = std::size_t(y) * w + x;
                    const std::size_t j = std::size_t(y + dy) * w + (x + dx);
                    if (use1) {
                        const double k1 = s1 * std::exp(-intensity_dist2(f, i, j) * inv_b);
                        for (int v = 0; v < L; ++v) {
                            m1.v[v * plane + i] += k1 * q.v[v * plane + j];
                            m1.v[v * plane + j] += k1 * q.v[v * plane + i];
                        }
                    }
                    if (use2)
                        for (int v = 0; v < L; ++v) {
                            m2.v[v * plane + i] += s2 * q.v[v * plane + j];
                            m2.v[v * plane + j] += s2 * q.v[v * plane + i];
                        }
                }
        }
}

// z(u,i) = -phi(u,i) - sum_v mu(u,v) * (w1 m1 + w2 m2)(v,i), then softmax.
Tensor combine_and_normalize(const Tensor& unary, const Tensor& m1, const Tensor& m2,
                             const CrfParameters& p) {
    const int L = unary.c;
    const std::size_t plane = std::size_t(unary.h) * unary.w;
    Tensor z(L, unary.h, unary.w);
    for (int u = 0; u < L; ++u)
        for (std::size_t i = 0; i < plane; ++i) {
            double pair = 0.0;
            for (int v = 0; v < L; ++v)
                pair += p.mu_at(u, v) *
                        (p.w1 * m1.v[v * plane + i] + p.w2 * m2.v[v * plane + i]);
            double e = -unary.v[u * plane + i] - pair;
            if (!std::isfinite(e))
                throw std::runtime_error("mean_field_iteration: non-finite exponent at pixel " +
                                         std::to_string(i));
            z.v[u * plane + i] = e;
        }
    return softmax_channels(z);
}

}  // namespace

Tensor mean_field_iteration(const Tensor& qin, const Tensor& unary, const PixelFeatures& feats,
                            const CrfParameters& params, MessageMode mode) {
    validate(params);
    if (qin.c != params.labels || unary.c != params.labels)
        throw std::runtime_error("mean_field_iteration: label count mismatch");
    if (qin.h != feats.h || qin.w != feats.w || unary.h != feats.h || unary.w != feats.w)
        throw std::runtime_error("mean_field_iteration: dims mismatch");
    Tensor m1, m2;
    accumulate_messages(qin, feats, params, mode, m1, m2);
    return combine_and_normalize(unary, m1, m2, params);
}

Tensor crf_rnn_forward(const Tensor& scores, const SliceTensor& slice,
                       const CrfParameters& params, MessageMode mode) {
    validate(params);
    if (scores.h != slice.height || scores.w != slice.width)
        throw std::runtime_error("crf_rnn_forward: score/slice dims mismatch");
    PixelFeatures feats = features_from_slice(slice);
    Tensor unary(scores.c, scores.h, scores.w);
    for (std::size_t i = 0; i < unary.v.size(); ++i) unary.v[i] = -scores.v[i];
    Tensor q = softmax_channels(scores);
    for (int t = 0; t < params.iterations; ++t)
        q = mean_field_iteration(q, unary, feats, params, mode);
    return q;
}

double free_energy(const Tensor& q, const Tensor& unary, const PixelFeatures& feats,
                   const CrfParameters& params) {
    const int L = q.c;
    const std::size_t M = feats.pixels();
    const std::size_t plane = M;
    double unary_term = 0.0, entropy = 0.0;
    for (int u = 0; u < L; ++u)
        for (std::size_t i = 0; i < plane; ++i) {
            double qv = q.v[u * plane + i];
            unary_term += qv * unary.v[u * plane + i];
            if (qv > 0.0) entropy += qv * std::log(qv);
        }
    double pair_term = 0.0;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = i + 1; j < M; ++j) {
            auto [k1, k2] = pairwise_kernels(feats, i, j, params);
            double kk = params.w1 * k1 + params.w2 * k2;
            double mix = 0.0;
            for (int u = 0; u < L; ++u)
                for (int v = 0; v < L; ++v)
                    mix += q.v[u * plane + i] * params.mu_at(u, v) * q.v[v * plane + j];
            pair_term += kk * mix;
        }
    return unary_term + pair_term + entropy;
}

// ---- unrolled training ----

namespace {

void build_kernel_matrices(const PixelFeatures& f, const CrfParameters& p,
                           std::vector<double>& k1, std::vector<double>& k2) {
    const std::size_t M = f.pixels();
    k1.assign(M * M, 0.0);
    k2.assign(M * M, 0.0);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = i + 1; j < M; ++j) {
            auto [a, b] = pairwise_kernels(f, i, j, p);
            k1[i * M + j] = k1[j * M + i] = a;
            k2[i * M + j] = k2[j * M + i] = b;
        }
}

Tensor apply_kernel(const std::vector<double>& k, const Tensor& q) {
    const std::size_t M = std::size_t(q.h) * q.w;
    Tensor out(q.c, q.h, q.w);
    for (int v = 0; v < q.c; ++v) {
        const double* qp = q.plane(v);
        double* op = out.plane(v);
        for (std::size_t i = 0; i < M; ++i) {
            const double* row = k.data() + i * M;
            double acc = 0.0;
            for (std::size_t j = 0; j < M; ++j) acc += row[j] * qp[j];
            op[i] = acc;
        }
    }
    return out;
}

Tensor forward_prepared(const Tensor& scores, const CrfParameters& params, CrfTape& tape) {
    tape.scores = scores;
    tape.q.clear();
    tape.msg1.clear();
    tape.msg2.clear();
    Tensor unary(scores.c, scores.h, scores.w);
    for (std::size_t i = 0; i < unary.v.size(); ++i) unary.v[i] = -scores.v[i];
    tape.q.push_back(softmax_channels(scores));
    for (int t = 0; t < params.iterations; ++t) {
        tape.msg1.push_back(apply_kernel(tape.k1, tape.q.back()));
        tape.msg2.push_back(apply_kernel(tape.k2, tape.q.back()));
        tape.q.push_back(
            combine_and_normalize(unary, tape.msg1.back(), tape.msg2.back(), params));
    }
    return tape.q.back();
}

}  // namespace

Tensor crf_forward_tape(const Tensor& scores, const PixelFeatures& feats,
                        const CrfParameters& params, CrfTape& tape) {
    validate(params);
    if (scores.h != feats.h || scores.w != feats.w || scores.c != params.labels)
        throw std::runtime_error("crf_forward_tape: dims mismatch");
    tape.feats = feats;
    build_kernel_matrices(feats, params, tape.k1, tape.k2);
    return forward_prepared(scores, params, tape);
}

void crf_backward_tape(const Tensor& dq_final, const CrfTape& tape, const CrfParameters& params,
                       CrfGradients& grads, Tensor* dscores) {
    const int L = params.labels;
    const std::size_t plane = tape.feats.pixels();
    if (grads.mu.size() != params.mu.size()) grads.mu.assign(params.mu.size(), 0.0);
    Tensor dsc(L, dq_final.h, dq_final.w);
    Tensor dq = dq_final;
    const int T = int(tape.msg1.size());
    for (int t = T; t >= 1; --t) {
        const Tensor& qout = tape.q[t];
        const Tensor& m1 = tape.msg1[t - 1];
        const Tensor& m2 = tape.msg2[t - 1];
        Tensor dz = softmax_channels_backward(qout, dq);
        // z = P - pair term, so the unary path contributes +dz to dP.
        for (std::size_t i = 0; i < dsc.v.size(); ++i) dsc.v[i] += dz.v[i];
        Tensor da(L, dq.h, dq.w);
        for (int v = 0; v < L; ++v)
            for (std::size_t i = 0; i < plane; ++i) {
                double acc = 0.0;
                for (int u = 0; u < L; ++u) acc += dz.v[u * plane + i] * params.mu_at(u, v);
                da.v[v * plane + i] = -acc;
            }
        for (int u = 0; u < L; ++u)
            for (int v = 0; v < L; ++v) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i)
                    acc -= dz.v[u * plane + i] * (params.w1 * m1.v[v * plane + i] +
                                                  params.w2 * m2.v[v * plane + i]);
                grads.mu[std::size_t(u) * L + v] += acc;
            }
        Tensor dm1(L, dq.h, dq.w), dm2(L, dq.h, dq.w);
        for (std::size_t i = 0; i < da.v.size(); ++i) {
            grads.w1 += da.v[i] * m1.v[i];
            grads.w2 += da.v[i] * m2.v[i];
            dm1.v[i] = params.w1 * da.v[i];
            dm2.v[i] = params.w2 * da.v[i];
        }
        Tensor dqin = apply_kernel(tape.k1, dm1);
        Tensor back2 = apply_kernel(tape.k2, dm2);
        for (std::size_t i = 0; i < dqin.v.size(); ++i) dqin.v[i] += back2.v[i];
        dq = std::move(dqin);
    }
    // Initialization path: q[0] = softmax(P).
    Tensor dinit = softmax_channels_backward(tape.q[0], dq);
    for (std::size_t i = 0; i < dsc.v.size(); ++i) dsc.v[i] += dinit.v[i];
    if (dscores) *dscores = std::move(dsc);
}

// ---- steps 2 and 3 ----

namespace {

double final_loss_grad(const Tensor& q_final, const std::vector<std::uint8_t>& labels,
                       Tensor& dq_final) {
    const std::size_t plane = std::size_t(q_final.h) * q_final.w;
    if (labels.size() != plane)
        throw std::runtime_error("crf training: label count does not match pixels");
    dq_final = Tensor(q_final.c, q_final.h, q_final.w);
    double loss = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        int lab = labels[i];
        double qv = std::max(q_final.v[std::size_t(lab) * plane + i], 1e-12);
        loss -= std::log(qv);
        dq_final.v[std::size_t(lab) * plane + i] = -1.0 / (qv * double(plane));
    }
    return loss / double(plane);
}

void apply_crf_gradients(CrfParameters& crf, const CrfGradients& g, double lr) {
    if (!std::isfinite(g.w1) || !std::isfinite(g.w2))
        throw std::runtime_error("crf training: non-finite gradient");
    crf.w1 -= lr * g.w1;
    crf.w2 -= lr * g.w2;
    for (std::size_t i = 0; i < crf.mu.size(); ++i) {
        if (!std::isfinite(g.mu[i])) throw std::runtime_error("crf training: non-finite gradient");
        crf.mu[i] -= lr * g.mu[i];
    }
}

}  // namespace

std::vector<double> train_step2(const NetworkParameters& fcnn, CrfParameters& crf,
                                const std::vector<SliceSample>& samples, double learning_rate,
                                int epochs) {
    validate(crf);
    if (samples.empty()) throw std::runtime_error("train_step2: no training slices");
    // FCNN frozen: unaries and kernels are fixed, compute them once.
    std::vector<Tensor> scores;
    std::vector<CrfTape> tapes(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        scores.push_back(segment_slice(fcnn, samples[s].slice).scores);
        tapes[s].feats = features_from_slice(samples[s].slice);
        build_kernel_matrices(tapes[s].feats, crf, tapes[s].k1, tapes[s].k2);
    }
    std::vector<double> trace;
    for (int e = 0; e < epochs; ++e) {
        double total = 0.0;
        for (std::size_t s = 0; s < samples.size(); ++s) {
            Tensor q_final = forward_prepared(scores[s], crf, tapes[s]);
            Tensor dq_final;
            total += final_loss_grad(q_final, samples[s].labels, dq_final);
            CrfGradients grads;
            crf_backward_tape(dq_final, tapes[s], crf, grads, nullptr);
            apply_crf_gradients(crf, grads, learning_rate);
        }
        trace.push_back(total / double(samples.size()));
    }
    return trace;
}

std::vector<double> finetune_step3(NetworkParameters& fcnn, CrfParameters& crf,
                                   const std::vector<SliceSample>& samples, double learning_rate,
                                   int epochs) {
    validate(crf);
    if (samples.empty()) throw std::runtime_error("finetune_step3: no training slices");
    const int pad = reduction_per_side(fcnn.pool_n) / 2;
    std::vector<CrfTape> tapes(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        tapes[s].feats = features_from_slice(samples[s].slice);
        build_kernel_matrices(tapes[s].feats, crf, tapes[s].k1, tapes[s].k2);
    }
    std::vector<double> trace;
    FcnnTape ftape;
    for (int e = 0; e < epochs; ++e) {
        double total = 0.0;
        for (std::size_t s = 0; s < samples.size(); ++s) {
            Tensor base = slice_to_tensor(samples[s].slice);
            Tensor small = pad_tensor(base, pad);
            Tensor large = pad_tensor(base, 2 * pad);
            ProbabilityMaps maps = forward_tape(fcnn, small, large, ftape);
            Tensor q_final = forward_prepared(maps.scores, crf, tapes[s]);
            Tensor dq_final;
            total += final_loss_grad(q_final, samples[s].labels, dq_final);
            CrfGradients grads;
            Tensor dscores;
            crf_backward_tape(dq_final, tapes[s], crf, grads, &dscores);
            zero_gradients(fcnn);
            backward_tape(fcnn, ftape, dscores);
            sgd_update(fcnn, learning_rate, 0.0);
            apply_crf_gradients(crf, grads, learning_rate);
        }
        trace.push_back(total / double(samples.size()));
    }
    return trace;
}

}  // namespace bts
