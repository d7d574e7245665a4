#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "resdet/attacks.hpp"
#include "resdet/checkpoint.hpp"
#include "resdet/errors.hpp"
#include "resdet/model.hpp"
#include "resdet/numerics.hpp"
#include "resdet/rng.hpp"
#include "resdet/text.hpp"

namespace resdet {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Residue detector: a linear classifier on the encoder embedding,
// P(adv | x) = sigma(W . F_en(x) + b).

struct ResidueDetector {
    Vec w;
    double b = 0.0;
};

struct ResidueTrainOptions {
    double lr = 0.02;
    int epochs = 20;
    int batch_size = 200;
    std::uint64_t seed = 1;
};

struct ResidueTrainReport {
    std::vector<double> epoch_bce;  // full-set binary cross-entropy after each epoch
};

inline double residue_score(const ResidueDetector& det, const Vec& embedding) {
    if (embedding.size() != det.w.size()) throw DataError("residue_score: dimension mismatch");
    return sigmoid(dot(det.w, embedding) + det.b);
}

// Logistic regression fit by minibatch gradient descent on binary
// cross-entropy. Labels: 0 = original, 1 = adversarial. Parameters start at
// zero, so the untrained detector scores 0.5 everywhere.
inline ResidueDetector train_residue(const Matrix& embeddings, const std::vector<int>& labels,
                                     const ResidueTrainOptions& opts = {},
                                     ResidueTrainReport* report = nullptr) {
    if (embeddings.rows() != labels.size()) throw DataError("train_residue: embeddings/labels size mismatch");
    bool has0 = false, has1 = false;
    for (int label : labels) {
        if (label == 0) has0 = true;
        else if (label == 1) has1 = true;
        else throw DataError("train_residue: labels must be 0 or 1");
    }
    if (!has0 || !has1) throw DataError("train_residue: both labels must be present");

    const std::size_t d = embeddings.cols();
    ResidueDetector det;
    det.w.assign(d, 0.0);
    det.b = 0.0;

    auto full_bce = [&]() {
        double total = 0.0;
        for (std::size_t i = 0; i < embeddings.rows(); ++i) {
            const double p = residue_score(det, embeddings.row(i));
            const double y = static_cast<double>(labels[i]);
            total += -(y * std::log(std::max(p, 1e-300)) + (1.0 - y) * std::log(std::max(1.0 - p, 1e-300)));
        }
        return total / static_cast<double>(embeddings.rows());
    };

    Rng rng(opts.seed);
    std::vector<std::size_t> order(embeddings.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            Vec gw(d, 0.0);
            double gb = 0.0;
            for (std::size_t pos = start; pos < end; ++pos) {
                const std::size_t idx = order[pos];
                const Vec x = embeddings.row(idx);
                const double err = sigmoid(dot(det.w, x) + det.b) - static_cast<double>(labels[idx]);
                axpy(err, x, gw);
                gb += err;
            }
            const double step = opts.lr / static_cast<double>(end - start);
            for (std::size_t j = 0; j < d; ++j) det.w[j] -= step * gw[j];
            det.b -= step * gb;
        }
        if (report != nullptr) report->epoch_bce.push_back(full_bce());
    }
    return det;
}

// ---------------------------------------------------------------------------
// Mahalanobis distance to the closest class-conditional Gaussian with a
// pooled (tied) covariance.

struct MahalanobisModel {
    std::vector<Vec> means;
    Matrix precision;
    double ridge = 1e-6;
};

inline MahalanobisModel fit_mahalanobis(const Matrix& embeddings, const std::vector<int>& class_labels,
                                        double ridge = 1e-6) {
    if (embeddings.rows() != class_labels.size())
        throw DataError("fit_mahalanobis: embeddings/labels size mismatch");
    if (embeddings.rows() == 0) throw DataError("fit_mahalanobis: empty data");
    const std::size_t d = embeddings.cols();
    int max_label = 0;
    for (int label : class_labels) {
        if (label < 0) throw DataError("fit_mahalanobis: negative class label");
        max_label = std::max(max_label, label);
    }
    const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> counts(classes, 0);
    std::vector<Vec> means(classes, Vec(d, 0.0));
    for (std::size_t i = 0; i < embeddings.rows(); ++i) {
        const auto c = static_cast<std::size_t>(class_labels[i]);
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) means[c][j] += embeddings(i, j);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] < 2) throw DataError("fit_mahalanobis: every class needs at least 2 samples");
        for (double& v : means[c]) v /= static_cast<double>(counts[c]);
    }
    Matrix cov(d, d);
    for (std::size_t i = 0; i < embeddings.rows(); ++i) {
        const auto c = static_cast<std::size_t>(class_labels[i]);
        for (std::size_t a = 0; a < d; ++a) {
            const double da = embeddings(i, a) - means[c][a];
            for (std::size_t b = a; b < d; ++b) cov(a, b) += da * (embeddings(i, b) - means[c][b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) /= static_cast<double>(embeddings.rows());
            cov(b, a) = cov(a, b);
        }
    for (std::size_t a = 0; a < d; ++a) cov(a, a) += ridge;

    MahalanobisModel m;
    m.means = std::move(means);
    m.precision = spd_inverse(cov);
    m.ridge = ridge;
    return m;
}

// min over classes of sqrt((e - mu_k)^T P (e - mu_k)); higher means more
// adversarial.
inline double mahalanobis_score(const MahalanobisModel& m, const Vec& e) {
    if (m.means.empty() || e.size() != m.means.front().size())
        throw DataError("mahalanobis_score: dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    for (const Vec& mu : m.means) {
        const Vec diff = sub(e, mu);
        const double dist2 = dot(diff, matvec(m.precision, diff));
        best = std::min(best, std::sqrt(std::max(dist2, 0.0)));
    }
    return best;
}

// ---------------------------------------------------------------------------
// MC-dropout uncertainty measures (natural-log entropies).

enum class UncertaintyMeasure {
    kEntropyOfExpected,
    kExpectedEntropy,
    kMutualInformation,
    kConfidence,
    kKl,
    kReverseMi,
};

inline const char* uncertainty_measure_name(UncertaintyMeasure m) {
    switch (m) {
        case UncertaintyMeasure::kEntropyOfExpected: return "entropy_of_expected";
        case UncertaintyMeasure::kExpectedEntropy: return "expected_entropy";
        case UncertaintyMeasure::kMutualInformation: return "mutual_information";
        case UncertaintyMeasure::kConfidence: return "confidence";
        case UncertaintyMeasure::kKl: return "kl";
        case UncertaintyMeasure::kReverseMi: return "reverse_mi";
    }
    return "unknown";
}

inline constexpr UncertaintyMeasure kAllUncertaintyMeasures[] = {
    UncertaintyMeasure::kEntropyOfExpected, UncertaintyMeasure::kExpectedEntropy,
    UncertaintyMeasure::kMutualInformation, UncertaintyMeasure::kConfidence,
    UncertaintyMeasure::kKl,                UncertaintyMeasure::kReverseMi,
};

namespace detail {

inline double entropy(const Vec& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

inline double kl_divergence(const Vec& p, const Vec& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
    return kl;
}

}  // namespace detail

inline double uncertainty_measure(const std::vector<Vec>& samples, UncertaintyMeasure measure) {
    if (samples.size() < 2) throw DataError("uncertainty_measure: need at least 2 samples");
    const std::size_t m = samples.size();
    const std::size_t k = samples.front().size();
    Vec mean(k, 0.0);
    for (const Vec& p : samples) axpy(1.0 / static_cast<double>(m), p, mean);

    switch (measure) {
        case UncertaintyMeasure::kEntropyOfExpected:
            return detail::entropy(mean);
        case UncertaintyMeasure::kExpectedEntropy: {
            double h = 0.0;
            for (const Vec& p : samples) h += detail::entropy(p);
            return h / static_cast<double>(m);
        }
        case UncertaintyMeasure::kMutualInformation: {
            double h = 0.0;
            for (const Vec& p : samples) h += detail::entropy(p);
            return detail::entropy(mean) - h / static_cast<double>(m);
        }
        case UncertaintyMeasure::kConfidence: {
            double mx = 0.0;
            for (double v : mean) mx = std::max(mx, v);
            return 1.0 - mx;
        }
        case UncertaintyMeasure::kKl: {
            // Mean pairwise KL over ordered sample pairs.
            double total = 0.0;
            for (std::size_t a = 0; a < m; ++a)
                for (std::size_t b = 0; b < m; ++b)
                    if (a != b) total += detail::kl_divergence(samples[a], samples[b]);
            return total / static_cast<double>(m * (m - 1));
        }
        case UncertaintyMeasure::kReverseMi: {
            double total = 0.0;
            for (const Vec& p : samples) total += detail::kl_divergence(mean, p);
            return total / static_cast<double>(m);
        }
    }
    throw ConfigError("uncertainty_measure: unknown measure");
}

inline double uncertainty_score(const ClassifierModel& model, const TokenSequence& x,
                                UncertaintyMeasure measure, int m, std::uint64_t seed) {
    if (m < 2) throw DataError("uncertainty_score: m must be at least 2");
    return uncertainty_measure(model.mc_samples(x, m, seed), measure);
}

// ---------------------------------------------------------------------------
// n-gram language model with add-one smoothing; the score is perplexity.

class NGramLM {
public:
    NGramLM() = default;

    int order() const { return order_; }
    std::size_t vocab_size() const { return vocab_.size(); }

    // Conditional probability with add-one smoothing over the corpus
    // vocabulary. Histories never seen give the uniform 1/|V|; out-of-corpus
    // tokens get the zero-count mass.
    double cond_prob(const std::vector<int>& history, int token) const {
        const std::uint64_t key = history_key(history);
        long count = 0;
        long total = 0;
        auto ct = counts_.find(key);
        if (ct != counts_.end()) {
            total = totals_.at(key);
            auto wt = ct->second.find(token);
            if (wt != ct->second.end()) count = wt->second;
        }
        return (static_cast<double>(count) + 1.0) /
               (static_cast<double>(total) + static_cast<double>(vocab_.size()));
    }

    double perplexity(const TokenSequence& x) const {
        if (x.empty()) throw DataError("perplexity: empty sequence");
        double log_sum = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            log_sum += std::log(cond_prob(history_at(x, i), x.ids[i]));
        return std::exp(-log_sum / static_cast<double>(x.size()));
    }

    std::vector<int> history_at(const TokenSequence& x, std::size_t i) const {
        std::vector<int> h;
        for (int back = order_ - 1; back >= 1; --back) {
            const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(i) - back;
            h.push_back(idx < 0 ? kBos : x.ids[static_cast<std::size_t>(idx)]);
        }
        return h;
    }

    const std::set<int>& vocab() const { return vocab_; }

    friend NGramLM fit_ngram_lm(const std::vector<TokenSequence>& corpus, int n);

    static constexpr int kBos = -1;

private:
    // Exact packing: histories hold at most 2 ids (order <= 3) and ids stay
    // far below 2^31, so two 32-bit slots identify a history collision-free.
    static std::uint64_t history_key(const std::vector<int>& history) {
        std::uint64_t key = 0;
        for (int id : history)
            key = (key << 32) | static_cast<std::uint64_t>(static_cast<std::int64_t>(id) + 2);
        return key;
    }

    int order_ = 1;
    std::set<int> vocab_;
    std::unordered_map<std::uint64_t, std::unordered_map<int, long>> counts_;
    std::unordered_map<std::uint64_t, long> totals_;
};

inline NGramLM fit_ngram_lm(const std::vector<TokenSequence>& corpus, int n) {
    if (n < 1 || n > 3) throw ConfigError("fit_ngram_lm: order must be 1, 2 or 3");
    if (corpus.empty()) throw DataError("fit_ngram_lm: empty corpus");
    NGramLM lm;
    lm.order_ = n;
    for (const TokenSequence& seq : corpus) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            lm.vocab_.insert(seq.ids[i]);
            const std::uint64_t key = NGramLM::history_key(lm.history_at(seq, i));
            ++lm.counts_[key][seq.ids[i]];
            ++lm.totals_[key];
        }
    }
    if (lm.vocab_.empty()) throw DataError("fit_ngram_lm: corpus has no tokens");
    return lm;
}

inline double perplexity_score(const NGramLM& lm, const TokenSequence& x) { return lm.perplexity(x); }

// ---------------------------------------------------------------------------
// Frequency-guided word substitution: tokens rarer than the threshold are
// replaced by their most frequent lexicon candidate and the prediction shift
// is the score.

using FrequencyTable = std::unordered_map<int, long>;

// 10th percentile (nearest-rank) of the distinct-token training frequencies.
inline long fgws_default_threshold(const FrequencyTable& freq, double percentile = 0.10) {
    if (freq.empty()) throw DataError("fgws_default_threshold: empty frequency table");
    std::vector<long> counts;
    counts.reserve(freq.size());
    for (const auto& [token, count] : freq) counts.push_back(count);
    std::sort(counts.begin(), counts.end());
    const auto rank = static_cast<std::size_t>(
        std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(
                                        std::ceil(percentile * static_cast<double>(counts.size()))) -
                                        1));
    return counts[rank];
}

inline TokenSequence fgws_substitute(const TokenSequence& x, const FrequencyTable& freq, long threshold,
                                     const SynonymLexicon& lexicon) {
    TokenSequence out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const int token = x.ids[i];
        auto it = freq.find(token);
        const long f = it == freq.end() ? 0 : it->second;
        if (f >= threshold) continue;
        long best_freq = f;
        int best_tok = token;
        for (int cand : lexicon.candidates(token)) {
            auto ct = freq.find(cand);
            const long cf = ct == freq.end() ? 0 : ct->second;
            if (cf > best_freq || (cf == best_freq && cand < best_tok)) {
                best_freq = cf;
                best_tok = cand;
            }
        }
        if (best_freq > f) out.ids[i] = best_tok;
    }
    return out;
}

inline double fgws_score(const ClassifierModel& model, const TokenSequence& x, const FrequencyTable& freq,
                         long threshold, const SynonymLexicon& lexicon) {
    if (model.cfg.head != HeadKind::kSoftmax) throw DataError("fgws_score: requires a softmax head");
    const Vec probs = model.forward_probs(x);
    const std::size_t pred = argmax(probs);
    const TokenSequence substituted = fgws_substitute(x, freq, threshold, lexicon);
    if (substituted == x) return 0.0;
    const Vec probs_sub = model.forward_probs(substituted);
    return std::abs(probs[pred] - probs_sub[pred]);
}

// ---------------------------------------------------------------------------
// Detector checkpoints share the model container format, tagged by kind.

inline void save_residue_detector(const ResidueDetector& det, const std::string& path) {
    Checkpoint ck;
    ck.kind = "residue-detector";
    ck.tensors["w"] = vec_as_matrix(det.w);
    ck.scalars["b"] = det.b;
    ck.save(path);
}

inline ResidueDetector load_residue_detector(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.kind != "residue-detector") throw DataError("checkpoint: not a residue detector: " + path);
    ResidueDetector det;
    det.w = matrix_as_vec(ck.tensor("w"));
    det.b = ck.scalar("b");
    return det;
}

inline void save_mahalanobis(const MahalanobisModel& m, const std::string& path) {
    Checkpoint ck;
    ck.kind = "mahalanobis-detector";
    ck.tensors["precision"] = m.precision;
    ck.scalars["ridge"] = m.ridge;
    ck.scalars["classes"] = static_cast<double>(m.means.size());
    Matrix means(m.means.size(), m.means.empty() ? 0 : m.means.front().size());
    for (std::size_t i = 0; i < m.means.size(); ++i) means.set_row(i, m.means[i]);
    ck.tensors["means"] = means;
    ck.save(path);
}

inline MahalanobisModel load_mahalanobis(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.kind != "mahalanobis-detector") throw DataError("checkpoint: not a mahalanobis detector: " + path);
    MahalanobisModel m;
    m.precision = ck.tensor("precision");
    m.ridge = ck.scalar("ridge");
    const Matrix& means = ck.tensor("means");
    for (std::size_t i = 0; i < means.rows(); ++i) m.means.push_back(means.row(i));
    return m;
}

}  // namespace resdet
