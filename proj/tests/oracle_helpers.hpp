#pragma once

// Independent oracles for the test suites. Everything here is written as
// plain scalar loops against the definitions, deliberately sharing no code
// with the implementation paths it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "resdet/model.hpp"
#include "resdet/numerics.hpp"

namespace oracle {

using resdet::Matrix;
using resdet::Vec;

// Double-loop covariance with divisor n.
inline Matrix covariance(const Matrix& data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    Matrix cov(d, d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            double mean_a = 0.0, mean_b = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                mean_a += data(i, a);
                mean_b += data(i, b);
            }
            mean_a /= static_cast<double>(n);
            mean_b /= static_cast<double>(n);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) sum += (data(i, a) - mean_a) * (data(i, b) - mean_b);
            cov(a, b) = sum / static_cast<double>(n);
        }
    }
    return cov;
}

// Recursive word-level Levenshtein (memoized would be overkill at test sizes).
inline int edit_distance(const std::vector<int>& a, const std::vector<int>& b, std::size_t i = 0,
                         std::size_t j = 0) {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    const int swap = edit_distance(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    const int del = edit_distance(a, b, i + 1, j) + 1;
    const int ins = edit_distance(a, b, i, j + 1) + 1;
    return std::min({swap, del, ins});
}

// Scalar-loop forward pass of the toy classifier: attention encoder with a
// softmax head, dropout off. Mirrors the math, not the implementation.
inline Vec naive_forward_probs(const resdet::ClassifierModel& m, const std::vector<int>& ids) {
    const std::size_t L = ids.size();
    const std::size_t de = m.cfg.embed_dim;
    const std::size_t dm = m.cfg.model_dim;

    std::vector<std::vector<double>> h(L, std::vector<double>(de));
    std::vector<bool> valid(L);
    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < L; ++i) {
        valid[i] = ids[i] != 0;
        if (valid[i]) ++n_valid;
        for (std::size_t j = 0; j < de; ++j) h[i][j] = m.embedding(static_cast<std::size_t>(ids[i]), j);
    }

    std::vector<double> pooled(de, 0.0);
    if (m.cfg.encoder == resdet::EncoderKind::kAttention) {
        std::vector<std::vector<double>> q(L, std::vector<double>(de, 0.0)), k(q), v(q);
        for (std::size_t i = 0; i < L; ++i) {
            if (!valid[i]) continue;
            for (std::size_t a = 0; a < de; ++a)
                for (std::size_t b = 0; b < de; ++b) {
                    q[i][a] += m.wq(a, b) * h[i][b];
                    k[i][a] += m.wk(a, b) * h[i][b];
                    v[i][a] += m.wv(a, b) * h[i][b];
                }
        }
        for (std::size_t i = 0; i < L; ++i) {
            if (!valid[i]) continue;
            std::vector<double> scores(L, 0.0);
            double mx = -1e300;
            for (std::size_t j = 0; j < L; ++j) {
                if (!valid[j]) continue;
                double s = 0.0;
                for (std::size_t a = 0; a < de; ++a) s += q[i][a] * k[j][a];
                scores[j] = s / std::sqrt(static_cast<double>(de));
                mx = std::max(mx, scores[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < L; ++j)
                if (valid[j]) denom += std::exp(scores[j] - mx);
            for (std::size_t j = 0; j < L; ++j) {
                if (!valid[j]) continue;
                const double w = std::exp(scores[j] - mx) / denom;
                for (std::size_t a = 0; a < de; ++a)
                    pooled[a] += w * v[j][a] / static_cast<double>(n_valid);
            }
        }
    } else {
        for (std::size_t i = 0; i < L; ++i) {
            if (!valid[i]) continue;
            for (std::size_t a = 0; a < de; ++a) pooled[a] += h[i][a] / static_cast<double>(n_valid);
        }
    }

    std::vector<double> e(dm, 0.0);
    for (std::size_t a = 0; a < dm; ++a) {
        double t = m.bp[a];
        for (std::size_t b = 0; b < de; ++b) t += m.wp(a, b) * pooled[b];
        e[a] = std::tanh(t);
    }
    if (m.cfg.normalize_embedding) {
        double mean = 0.0;
        for (double x : e) mean += x;
        mean /= static_cast<double>(dm);
        double var = 0.0;
        for (double x : e) var += (x - mean) * (x - mean);
        var /= static_cast<double>(dm);
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (double& x : e) x = (x - mean) * rstd;
    }

    std::vector<double> logits(m.cfg.classes, 0.0);
    for (std::size_t c = 0; c < m.cfg.classes; ++c) {
        logits[c] = m.bc[c];
        for (std::size_t a = 0; a < dm; ++a) logits[c] += m.wc(c, a) * e[a];
    }
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double denom = 0.0;
    std::vector<double> probs(m.cfg.classes);
    for (std::size_t c = 0; c < m.cfg.classes; ++c) {
        probs[c] = std::exp(logits[c] - mx);
        denom += probs[c];
    }
    for (double& p : probs) p /= denom;
    return probs;
}

// Central finite differences of the cross-entropy loss w.r.t. one embedding
// coordinate.
template <class LossFn>
inline double central_difference(LossFn&& loss, double& coord, double step) {
    const double saved = coord;
    coord = saved + step;
    const double up = loss();
    coord = saved - step;
    const double down = loss();
    coord = saved;
    return (up - down) / (2.0 * step);
}

// Brute-force best-F1 threshold sweep: try a flag-all level plus every
// distinct score as a threshold, score > t flags.
struct BruteBest {
    double f1 = -1.0;
    double threshold = 0.0;
};

inline BruteBest brute_force_best_f1(const Vec& scores, const std::vector<int>& labels) {
    Vec candidates = scores;
    double lowest = scores[0];
    for (double s : scores) lowest = std::min(lowest, s);
    candidates.push_back(lowest - 1.0);
    BruteBest best;
    for (double t : candidates) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const bool flagged = scores[i] > t;
            if (labels[i] == 1 && flagged) ++tp;
            if (labels[i] == 0 && flagged) ++fp;
            if (labels[i] == 1 && !flagged) ++fn;
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
        if (f1 > best.f1) {
            best.f1 = f1;
            best.threshold = t;
        }
    }
    return best;
}

}  // namespace oracle
