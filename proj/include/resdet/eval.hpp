#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "resdet/errors.hpp"
#include "resdet/model.hpp"
#include "resdet/numerics.hpp"
#include "resdet/text.hpp"

namespace resdet {

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;
};

struct PRPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    ConfusionCounts counts;
};

struct DetectionReport {
    std::string detector_id;
    std::vector<PRPoint> curve;  // ascending thresholds
    double best_f1 = 0.0;
    double best_threshold = 0.0;
    std::size_t n_original = 0;
    std::size_t n_adversarial = 0;
};

// Threshold rule: score > beta flags a sample as adversarial. Candidate
// thresholds are the midpoints between consecutive sorted unique scores plus
// a flag-everything endpoint (min - 1) and a flag-nothing endpoint (max), so
// the brute-force optimum is always attainable. Zero-denominator F1 is 0;
// ties keep the lowest threshold.
inline DetectionReport evaluate_detection(const Vec& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DataError("evaluate_detection: scores/labels size mismatch");
    if (scores.empty()) throw DataError("evaluate_detection: empty input");
    if (!all_finite(scores)) throw DataError("evaluate_detection: non-finite score");
    long total_adv = 0, total_orig = 0;
    for (int label : labels) {
        if (label == 1) ++total_adv;
        else if (label == 0) ++total_orig;
        else throw DataError("evaluate_detection: labels must be 0 (original) or 1 (adversarial)");
    }
    if (total_adv == 0 || total_orig == 0)
        throw DataError("evaluate_detection: both original and adversarial samples are required");

    Vec unique_scores = scores;
    std::sort(unique_scores.begin(), unique_scores.end());
    unique_scores.erase(std::unique(unique_scores.begin(), unique_scores.end()), unique_scores.end());

    Vec thresholds;
    thresholds.push_back(unique_scores.front() - 1.0);
    for (std::size_t i = 0; i + 1 < unique_scores.size(); ++i)
        thresholds.push_back(0.5 * (unique_scores[i] + unique_scores[i + 1]));
    thresholds.push_back(unique_scores.back());

    // Sort samples by score descending; walking thresholds from high to low
    // turns counting into a prefix sum.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    DetectionReport report;
    report.n_original = static_cast<std::size_t>(total_orig);
    report.n_adversarial = static_cast<std::size_t>(total_adv);
    report.curve.resize(thresholds.size());
    report.best_f1 = -1.0;

    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const double beta = thresholds[t];
        long tp = 0, fp = 0;
        for (std::size_t idx : order) {
            if (!(scores[idx] > beta)) break;
            if (labels[idx] == 1) ++tp;
            else ++fp;
        }
        const long fn = total_adv - tp;
        const long tn = total_orig - fp;
        PRPoint point;
        point.threshold = beta;
        point.counts = {tp, fp, fn, tn};
        point.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        point.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        point.f1 = (point.precision + point.recall) > 0.0
                       ? 2.0 * point.precision * point.recall / (point.precision + point.recall)
                       : 0.0;
        report.curve[t] = point;
        if (point.f1 > report.best_f1) {
            report.best_f1 = point.f1;
            report.best_threshold = beta;
        }
    }
    return report;
}

// Fraction of originally correctly classified samples whose adversarial
// counterpart is misclassified.
inline double fooling_rate(const std::vector<int>& true_labels, const std::vector<int>& original_preds,
                           const std::vector<int>& adversarial_preds) {
    if (true_labels.size() != original_preds.size() || true_labels.size() != adversarial_preds.size())
        throw DataError("fooling_rate: size mismatch");
    long correct = 0, fooled = 0;
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        if (original_preds[i] != true_labels[i]) continue;
        ++correct;
        if (adversarial_preds[i] != true_labels[i]) ++fooled;
    }
    if (correct == 0) throw DataError("fooling_rate: no originally correct samples");
    return static_cast<double>(fooled) / static_cast<double>(correct);
}

inline double fooling_rate(const ClassifierModel& model, const Dataset& originals,
                           const std::vector<TokenSequence>& adversarial) {
    if (model.cfg.head != HeadKind::kSoftmax) throw DataError("fooling_rate: requires a softmax head");
    if (originals.size() != adversarial.size()) throw DataError("fooling_rate: size mismatch");
    std::vector<int> orig_preds(originals.size()), adv_preds(originals.size());
    for (std::size_t i = 0; i < originals.size(); ++i) {
        orig_preds[i] = model.predict(originals.inputs[i]);
        adv_preds[i] = model.predict(adversarial[i]);
    }
    return fooling_rate(originals.labels, orig_preds, adv_preds);
}

// Mean over samples of score(adv) - score(orig); regression head only.
inline double mean_score_shift(const ClassifierModel& model, const std::vector<TokenSequence>& originals,
                               const std::vector<TokenSequence>& adversarial) {
    if (model.cfg.head != HeadKind::kRegression) throw DataError("mean_score_shift: requires a regression head");
    if (originals.size() != adversarial.size()) throw DataError("mean_score_shift: size mismatch");
    if (originals.empty()) throw DataError("mean_score_shift: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < originals.size(); ++i)
        total += model.forward_score(adversarial[i]) - model.forward_score(originals[i]);
    return total / static_cast<double>(originals.size());
}

struct NormStats {
    double l2_mean = 0.0, l2_std = 0.0;
    double linf_mean = 0.0, linf_std = 0.0;
};

// Per-sample l2 / l-inf norms of the flattened embedding difference, with
// dataset mean and population standard deviation.
inline NormStats perturbation_norms(const std::vector<EmbeddingSequence>& original,
                                    const std::vector<EmbeddingSequence>& perturbed) {
    if (original.size() != perturbed.size()) throw DataError("perturbation_norms: size mismatch");
    if (original.empty()) throw DataError("perturbation_norms: empty input");
    Vec l2(original.size()), linf(original.size());
    for (std::size_t s = 0; s < original.size(); ++s) {
        const EmbeddingSequence& a = original[s];
        const EmbeddingSequence& b = perturbed[s];
        if (a.size() != b.size()) throw DataError("perturbation_norms: sequence length mismatch");
        double sq = 0.0, mx = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.vectors[i].size() != b.vectors[i].size())
                throw DataError("perturbation_norms: vector dimension mismatch");
            for (std::size_t j = 0; j < a.vectors[i].size(); ++j) {
                const double d = b.vectors[i][j] - a.vectors[i][j];
                sq += d * d;
                mx = std::max(mx, std::abs(d));
            }
        }
        l2[s] = std::sqrt(sq);
        linf[s] = mx;
    }
    auto mean_std = [](const Vec& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        return std::pair<double, double>(mean, std::sqrt(var));
    };
    NormStats stats;
    std::tie(stats.l2_mean, stats.l2_std) = mean_std(l2);
    std::tie(stats.linf_mean, stats.linf_std) = mean_std(linf);
    return stats;
}

}  // namespace resdet
