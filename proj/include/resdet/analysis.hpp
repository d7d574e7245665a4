#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "resdet/detectors.hpp"
#include "resdet/errors.hpp"
#include "resdet/eval.hpp"
#include "resdet/model.hpp"
#include "resdet/numerics.hpp"

namespace resdet {

// Eigenbasis of the covariance of original (unattacked) encoder embeddings.
struct PCAModel {
    Vec mean;
    Vec eigenvalues;      // magnitude-descending
    Matrix eigenvectors;  // column i is q_i

    std::size_t dim() const { return mean.size(); }
};

inline PCAModel fit_pca(const Matrix& embeddings) {
    if (embeddings.rows() < 2) throw DataError("fit_pca: need at least 2 samples");
    PCAModel pca;
    pca.mean.assign(embeddings.cols(), 0.0);
    for (std::size_t i = 0; i < embeddings.rows(); ++i)
        for (std::size_t j = 0; j < embeddings.cols(); ++j) pca.mean[j] += embeddings(i, j);
    for (double& v : pca.mean) v /= static_cast<double>(embeddings.rows());
    const Matrix cov = covariance(embeddings);
    EigenDecomposition eig = symmetric_eig(cov);
    pca.eigenvalues = std::move(eig.eigenvalues);
    pca.eigenvectors = std::move(eig.eigenvectors);
    return pca;
}

// Per-rank mean magnitudes rho_i = mean_j |e_j^T q_i| over a sample set,
// with per-rank population standard deviations. Projections are uncentered:
// the PCA mean is not subtracted before projecting.
struct ResidueProfile {
    Vec mean_abs;   // rho_i
    Vec stddev;     // population std of rho_{i,j} over samples
    std::size_t count = 0;
};

inline ResidueProfile component_profile(const PCAModel& pca, const Matrix& embeddings) {
    if (embeddings.rows() == 0) throw DataError("component_profile: empty sample set");
    if (embeddings.cols() != pca.dim()) throw DataError("component_profile: dimension mismatch");
    const std::size_t d = pca.dim();
    const std::size_t n = embeddings.rows();
    ResidueProfile profile;
    profile.count = n;
    profile.mean_abs.assign(d, 0.0);
    profile.stddev.assign(d, 0.0);
    Matrix mags(n, d);
    for (std::size_t s = 0; s < n; ++s) {
        const Vec e = embeddings.row(s);
        for (std::size_t i = 0; i < d; ++i) {
            double proj = 0.0;
            for (std::size_t k = 0; k < d; ++k) proj += e[k] * pca.eigenvectors(k, i);
            mags(s, i) = std::abs(proj);
            profile.mean_abs[i] += mags(s, i);
        }
    }
    for (double& v : profile.mean_abs) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < d; ++i) {
        double var = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double diff = mags(s, i) - profile.mean_abs[i];
            var += diff * diff;
        }
        profile.stddev[i] = std::sqrt(var / static_cast<double>(n));
    }
    return profile;
}

struct NSigmaResult {
    double value = 0.0;
    std::size_t included = 0;  // ranks entering the average
    std::size_t excluded = 0;  // ranks dropped for degenerate original variance
};

// Mean absolute profile gap in units of the original profile's per-rank
// standard deviation. Ranks whose original variance falls below the floor are
// excluded from the average rather than producing infinities.
inline NSigmaResult n_sigma(const ResidueProfile& original, const ResidueProfile& attacked,
                            double variance_floor = 1e-12) {
    if (original.mean_abs.size() != attacked.mean_abs.size())
        throw DataError("n_sigma: profile dimension mismatch");
    NSigmaResult result;
    double total = 0.0;
    for (std::size_t i = 0; i < original.mean_abs.size(); ++i) {
        const double var = original.stddev[i] * original.stddev[i];
        if (var <= variance_floor) {
            ++result.excluded;
            continue;
        }
        total += std::abs(attacked.mean_abs[i] - original.mean_abs[i]) / original.stddev[i];
        ++result.included;
    }
    if (result.included == 0) throw DataError("n_sigma: every rank has degenerate variance");
    result.value = total / static_cast<double>(result.included);
    return result;
}

struct WindowSpec {
    std::size_t start = 0;  // p
    std::size_t width = 0;  // w
};

// Removes every eigencomponent outside [start, start + width):
// x = e - sum_{i outside} (q_i^T e) q_i.
inline Vec windowed_projection(const PCAModel& pca, const Vec& e, const WindowSpec& win) {
    const std::size_t d = pca.dim();
    if (e.size() != d) throw DataError("windowed_projection: dimension mismatch");
    if (win.start + win.width > d) throw DataError("windowed_projection: window exceeds dimension");
    Vec out = e;
    for (std::size_t i = 0; i < d; ++i) {
        if (i >= win.start && i < win.start + win.width) continue;
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) proj += e[k] * pca.eigenvectors(k, i);
        for (std::size_t k = 0; k < d; ++k) out[k] -= proj * pca.eigenvectors(k, i);
    }
    return out;
}

inline Matrix windowed_projection(const PCAModel& pca, const Matrix& embeddings, const WindowSpec& win) {
    Matrix out(embeddings.rows(), embeddings.cols());
    for (std::size_t i = 0; i < embeddings.rows(); ++i)
        out.set_row(i, windowed_projection(pca, embeddings.row(i), win));
    return out;
}

struct WindowSweepPoint {
    std::size_t start = 0;
    double accuracy = 0.0;  // frozen output stage on projected original test embeddings
    double f1 = 0.0;        // fresh residue detector on projected embeddings
};

struct WindowSweepInputs {
    const ClassifierModel* model = nullptr;
    PCAModel pca;
    Matrix train_embeddings;             // originals + attacked, for detector training
    std::vector<int> train_detector_labels;
    Matrix test_embeddings;              // originals + attacked, for detector evaluation
    std::vector<int> test_detector_labels;
    Matrix test_class_embeddings;        // original test samples only
    std::vector<int> test_class_labels;
    std::size_t width = 5;
    ResidueTrainOptions residue_options;
};

// For every window start p: project all embeddings, evaluate the frozen
// output stage on the projections, train a fresh residue detector on the
// projected training set and report its best test F1.
inline std::vector<WindowSweepPoint> window_sweep(const WindowSweepInputs& in) {
    if (in.model == nullptr) throw DataError("window_sweep: model is required");
    const std::size_t d = in.pca.dim();
    if (in.width == 0 || in.width > d) throw DataError("window_sweep: invalid window width");
    std::vector<WindowSweepPoint> points;
    for (std::size_t p = 0; p + in.width <= d; ++p) {
        const WindowSpec win{p, in.width};
        WindowSweepPoint point;
        point.start = p;

        const Matrix test_class_proj = windowed_projection(in.pca, in.test_class_embeddings, win);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < test_class_proj.rows(); ++i) {
            const Vec probs = in.model->classify(test_class_proj.row(i));
            if (static_cast<int>(argmax(probs)) == in.test_class_labels[i]) ++correct;
        }
        point.accuracy = static_cast<double>(correct) / static_cast<double>(test_class_proj.rows());

        const Matrix train_proj = windowed_projection(in.pca, in.train_embeddings, win);
        const Matrix test_proj = windowed_projection(in.pca, in.test_embeddings, win);
        const ResidueDetector det = train_residue(train_proj, in.train_detector_labels, in.residue_options);
        Vec scores(test_proj.rows());
        for (std::size_t i = 0; i < test_proj.rows(); ++i) scores[i] = residue_score(det, test_proj.row(i));
        point.f1 = evaluate_detection(scores, in.test_detector_labels).best_f1;

        points.push_back(point);
    }
    return points;
}

}  // namespace resdet
