#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <unordered_map>
#include <variant>
#include <vector>

#include "resdet/errors.hpp"
#include "resdet/model.hpp"
#include "resdet/text.hpp"

namespace resdet {

// Ordered substitute candidates per token. Self-mappings are dropped on
// insertion so the lexicon invariant holds by construction.
struct SynonymLexicon {
    std::unordered_map<int, std::vector<int>> entries;

    void add(int token, const std::vector<int>& synonyms) {
        auto& list = entries[token];
        for (int s : synonyms)
            if (s != token && std::find(list.begin(), list.end(), s) == list.end()) list.push_back(s);
        if (list.empty()) entries.erase(token);
    }

    const std::vector<int>& candidates(int token) const {
        static const std::vector<int> kEmpty;
        auto it = entries.find(token);
        return it == entries.end() ? kEmpty : it->second;
    }

    bool empty() const { return entries.empty(); }
};

enum class AttackKind { kSubstitution, kConcatenation, kPgd, kGrid };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::kSubstitution: return "substitution";
        case AttackKind::kConcatenation: return "concatenation";
        case AttackKind::kPgd: return "pgd";
        case AttackKind::kGrid: return "grid";
    }
    return "unknown";
}

struct AttackConfig {
    AttackKind kind = AttackKind::kSubstitution;
    int budget_n = 0;       // edit budget for discrete attacks
    double epsilon = 0.0;   // l-inf budget for continuous attacks
    double step_size = 0.0; // PGD alpha
    int steps = 0;          // PGD iterations
    std::uint64_t seed = 0;
};

using AttackInput = std::variant<TokenSequence, EmbeddingSequence, Grid>;

struct AdversarialExample {
    AttackInput original;
    AttackInput perturbed;
    AttackKind kind = AttackKind::kSubstitution;
    double budget = 0.0;    // configured N or epsilon
    double realized = 0.0;  // realized edit count or ||delta||_inf
    bool success = false;
};

inline const TokenSequence& tokens_of(const AttackInput& in) {
    return std::get<TokenSequence>(in);
}

// Word-level Levenshtein distance; swap, addition and deletion each cost 1.
inline int edit_distance(const TokenSequence& a, const TokenSequence& b) {
    const std::size_t la = a.size();
    const std::size_t lb = b.size();
    std::vector<int> prev(lb + 1), cur(lb + 1);
    for (std::size_t j = 0; j <= lb; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= la; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= lb; ++j) {
            const int swap_cost = prev[j - 1] + (a.ids[i - 1] == b.ids[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, swap_cost});
        }
        std::swap(prev, cur);
    }
    return prev[lb];
}

struct SaliencyRanking {
    std::vector<std::size_t> order;  // positions, most salient first
    Vec scores;                      // aligned with positions, not with order
};

// Saliency of position i: drop in the probability of the model's predicted
// class when token i is replaced by the unknown token. Ties rank the lower
// index first.
inline SaliencyRanking saliency_rank(const ClassifierModel& model, const TokenSequence& x,
                                     int probe_token = Vocabulary::kUnk) {
    if (x.empty()) throw DataError("saliency_rank: empty sequence");
    if (model.cfg.head != HeadKind::kSoftmax) throw DataError("saliency_rank: requires a softmax head");
    const Vec base_probs = model.forward_probs(x);
    const std::size_t truth = argmax(base_probs);
    SaliencyRanking out;
    out.scores.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        TokenSequence probe = x;
        probe.ids[i] = probe_token;
        out.scores[i] = base_probs[truth] - model.forward_probs(probe)[truth];
    }
    out.order.resize(x.size());
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
    return out;
}

namespace detail {

using DetectorScorer = std::function<double(const TokenSequence&)>;

// Shared greedy core for the substitution attack and its detection-aware
// variant. Each round applies the (position, candidate) pair that most
// reduces the predicted-class probability, scanning untouched positions in
// saliency order; a candidate must strictly reduce the probability to be
// applied. Position ties keep the more salient position, candidate ties the
// lowest token id. Already-substituted positions are not revisited.
inline AdversarialExample substitute_greedy(const ClassifierModel& model, const TokenSequence& x,
                                            int budget, const SynonymLexicon& lexicon,
                                            const DetectorScorer& scorer, double beta) {
    if (x.empty()) throw DataError("substitution attack: empty sequence");
    const Vec base_probs = model.forward_probs(x);
    const int original_pred = static_cast<int>(argmax(base_probs));
    const auto truth = static_cast<std::size_t>(original_pred);

    SaliencyRanking saliency = saliency_rank(model, x);
    std::vector<char> used(x.size(), 0);
    TokenSequence current = x;
    double current_p = base_probs[truth];
    int edits = 0;

    while (edits < budget) {
        double best_p = current_p;
        std::size_t best_pos = x.size();
        int best_tok = -1;
        for (std::size_t rank = 0; rank < saliency.order.size(); ++rank) {
            const std::size_t pos = saliency.order[rank];
            if (used[pos]) continue;
            std::vector<int> cands = lexicon.candidates(x.ids[pos]);
            std::sort(cands.begin(), cands.end());
            for (int cand : cands) {
                if (cand == current.ids[pos]) continue;
                TokenSequence trial = current;
                trial.ids[pos] = cand;
                if (scorer && scorer(trial) > beta) continue;
                const double p = model.forward_probs(trial)[truth];
                if (p < best_p) {
                    best_p = p;
                    best_pos = pos;
                    best_tok = cand;
                }
            }
        }
        if (best_pos == x.size()) break;  // nothing strictly reduces the probability
        current.ids[best_pos] = best_tok;
        used[best_pos] = 1;
        current_p = best_p;
        ++edits;
    }

    AdversarialExample ex;
    ex.original = x;
    ex.perturbed = current;
    ex.kind = AttackKind::kSubstitution;
    ex.budget = static_cast<double>(budget);
    ex.realized = static_cast<double>(edit_distance(x, current));
    ex.success = model.predict(current) != original_pred;
    return ex;
}

}  // namespace detail

// Saliency-ranked synonym substitution with budget N.
inline AdversarialExample pwws_substitute(const ClassifierModel& model, const TokenSequence& x,
                                          const AttackConfig& cfg, const SynonymLexicon& lexicon) {
    return detail::substitute_greedy(model, x, cfg.budget_n, lexicon, nullptr, 0.0);
}

// Substitution attack that rejects any candidate the detector flags
// (score > beta); the next-best unflagged candidate is used instead.
inline AdversarialExample detection_aware_attack(const ClassifierModel& model, const TokenSequence& x,
                                                 const AttackConfig& cfg, const SynonymLexicon& lexicon,
                                                 const detail::DetectorScorer& detector_score, double beta) {
    if (!detector_score) throw DataError("detection_aware_attack: detector scorer is required");
    return detail::substitute_greedy(model, x, cfg.budget_n, lexicon, detector_score, beta);
}

// Greedy universal suffix of length N: each appended word is the vocabulary
// argmax of the dataset-mean objective (mean true-class cross-entropy for a
// softmax head, mean output score for regression). Ties take the lowest
// token id.
inline TokenSequence concat_universal(const ClassifierModel& model, const Dataset& data,
                                      const AttackConfig& cfg, const Vocabulary& vocab) {
    if (data.empty()) throw DataError("concat_universal: empty dataset");
    const bool regression = model.cfg.head == HeadKind::kRegression;

    auto objective = [&](const TokenSequence& suffix) {
        double total = 0.0;
        for (std::size_t s = 0; s < data.size(); ++s) {
            TokenSequence joined = data.inputs[s];
            joined.ids.insert(joined.ids.end(), suffix.ids.begin(), suffix.ids.end());
            if (regression) {
                total += model.forward_score(joined);
            } else {
                const Vec probs = model.forward_probs(joined);
                const auto label = static_cast<std::size_t>(data.labels[s]);
                total += -std::log(std::max(probs[label], 1e-300));
            }
        }
        return total / static_cast<double>(data.size());
    };

    TokenSequence suffix;
    for (int step = 0; step < cfg.budget_n; ++step) {
        double best_obj = -std::numeric_limits<double>::infinity();
        int best_tok = -1;
        for (int tok = 2; tok < static_cast<int>(vocab.size()); ++tok) {  // skip pad and unk
            TokenSequence trial = suffix;
            trial.ids.push_back(tok);
            const double obj = objective(trial);
            if (obj > best_obj) {
                best_obj = obj;
                best_tok = tok;
            }
        }
        if (best_tok < 0) throw DataError("concat_universal: vocabulary has no usable tokens");
        suffix.ids.push_back(best_tok);
    }
    return suffix;
}

inline TokenSequence append_suffix(const TokenSequence& x, const TokenSequence& suffix) {
    TokenSequence joined = x;
    joined.ids.insert(joined.ids.end(), suffix.ids.begin(), suffix.ids.end());
    return joined;
}

// Projected gradient ascent on the input embeddings: delta starts at zero,
// each step follows the raw loss gradient and is clipped coordinate-wise to
// the l-inf ball of radius epsilon. The loss is the cross-entropy of the
// model's original prediction.
inline AdversarialExample pgd_embedding_attack(const ClassifierModel& model, const TokenSequence& x,
                                               const AttackConfig& cfg) {
    if (model.cfg.head != HeadKind::kSoftmax) throw DataError("pgd_embedding_attack: requires a softmax head");
    if (cfg.epsilon < 0.0) throw ConfigError("pgd_embedding_attack: epsilon must be non-negative");
    const EmbeddingSequence base = model.embed(x);
    const int original_pred = model.predict(base);

    std::vector<Vec> delta(base.size(), Vec(model.cfg.embed_dim, 0.0));
    EmbeddingSequence current = base;
    for (int step = 0; step < cfg.steps; ++step) {
        const EmbeddingSequence grad = model.loss_grad_wrt_embeddings(current, original_pred);
        for (std::size_t i = 0; i < base.size(); ++i) {
            if (!base.valid[i]) continue;
            for (std::size_t j = 0; j < model.cfg.embed_dim; ++j) {
                double d = delta[i][j] + cfg.step_size * grad.vectors[i][j];
                d = std::clamp(d, -cfg.epsilon, cfg.epsilon);
                delta[i][j] = d;
                current.vectors[i][j] = base.vectors[i][j] + d;
            }
        }
    }

    double realized = 0.0;
    for (const Vec& d : delta) realized = std::max(realized, norm_inf(d));

    AdversarialExample ex;
    ex.original = base;
    ex.perturbed = current;
    ex.kind = AttackKind::kPgd;
    ex.budget = cfg.epsilon;
    ex.realized = realized;
    ex.success = model.predict(current) != original_pred;
    return ex;
}

// Permitted pixel levels Z_q = {round(k*255/(q-1))}; endpoints are exactly
// 0 and 255.
inline std::vector<int> quantization_levels(int q) {
    if (q < 2) throw ConfigError("quantization_levels: need at least 2 levels");
    std::vector<int> levels(static_cast<std::size_t>(q));
    for (int k = 0; k < q; ++k)
        levels[static_cast<std::size_t>(k)] =
            static_cast<int>(std::lround(static_cast<double>(k) * 255.0 / static_cast<double>(q - 1)));
    return levels;
}

// Snaps each value to the nearest permitted level; ties snap downward.
inline Grid quantize_grid(const Grid& g, int q) {
    const std::vector<int> levels = quantization_levels(q);
    Grid out{g.side, Vec(g.values.size())};
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        const double v = g.values[i];
        if (v < 0.0 || v > 255.0) throw DataError("quantize_grid: value outside 0..255");
        int best = levels[0];
        double best_dist = std::abs(v - levels[0]);
        for (std::size_t k = 1; k < levels.size(); ++k) {
            const double dist = std::abs(v - levels[k]);
            if (dist < best_dist) {
                best_dist = dist;
                best = levels[k];
            }
        }
        out.values[i] = static_cast<double>(best);
    }
    return out;
}

inline bool grid_is_quantized(const Grid& g, int q) {
    const std::vector<int> levels = quantization_levels(q);
    for (double v : g.values)
        if (std::find(levels.begin(), levels.end(), static_cast<int>(v)) == levels.end() ||
            v != std::floor(v))
            return false;
    return true;
}

// Discrete-grid analog of the substitution attack: pixels are ranked by a
// mid-gray probe, then each round flips the (pixel, adjacent level) pair that
// most reduces the predicted-class probability. Outputs stay inside Z_q.
inline AdversarialExample discrete_grid_attack(const GridModel& model, const Grid& grid,
                                               const AttackConfig& cfg) {
    const int q = model.cfg.levels;
    if (!grid_is_quantized(grid, q)) throw DataError("discrete_grid_attack: grid is not quantized");
    const std::vector<int> levels = quantization_levels(q);
    const Vec base_probs = model.forward_probs(grid);
    const int original_pred = static_cast<int>(argmax(base_probs));
    const auto truth = static_cast<std::size_t>(original_pred);

    const double probe_value = quantize_grid(Grid{1, Vec{128.0}}, q).values[0];
    Vec saliency(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        Grid probe = grid;
        probe.values[i] = probe_value;
        saliency[i] = base_probs[truth] - model.forward_probs(probe)[truth];
    }
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });

    auto level_index = [&](double value) {
        for (std::size_t k = 0; k < levels.size(); ++k)
            if (static_cast<int>(value) == levels[k]) return k;
        throw DataError("discrete_grid_attack: value left the quantization set");
    };

    Grid current = grid;
    std::vector<char> used(grid.size(), 0);
    double current_p = base_probs[truth];
    int edits = 0;
    while (edits < cfg.budget_n) {
        double best_p = current_p;
        std::size_t best_pixel = grid.size();
        double best_value = 0.0;
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            const std::size_t pixel = order[rank];
            if (used[pixel]) continue;
            const std::size_t idx = level_index(current.values[pixel]);
            std::vector<double> cands;
            if (idx > 0) cands.push_back(static_cast<double>(levels[idx - 1]));
            if (idx + 1 < levels.size()) cands.push_back(static_cast<double>(levels[idx + 1]));
            std::sort(cands.begin(), cands.end());
            for (double cand : cands) {
                Grid trial = current;
                trial.values[pixel] = cand;
                const double p = model.forward_probs(trial)[truth];
                if (p < best_p) {
                    best_p = p;
                    best_pixel = pixel;
                    best_value = cand;
                }
            }
        }
        if (best_pixel == grid.size()) break;
        current.values[best_pixel] = best_value;
        used[best_pixel] = 1;
        current_p = best_p;
        ++edits;
    }

    int changed = 0;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid.values[i] != current.values[i]) ++changed;

    AdversarialExample ex;
    ex.original = grid;
    ex.perturbed = current;
    ex.kind = AttackKind::kGrid;
    ex.budget = static_cast<double>(cfg.budget_n);
    ex.realized = static_cast<double>(changed);
    ex.success = model.predict(current) != original_pred;
    return ex;
}

// Continuous analog for the grid domain: PGD directly on pixel values.
inline AdversarialExample pgd_grid_attack(const GridModel& model, const Grid& grid,
                                          const AttackConfig& cfg) {
    const int original_pred = model.predict(grid);
    Grid current = grid;
    Vec delta(grid.size(), 0.0);
    for (int step = 0; step < cfg.steps; ++step) {
        const Grid grad = model.loss_grad_wrt_pixels(current, original_pred);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            double d = delta[i] + cfg.step_size * grad.values[i];
            d = std::clamp(d, -cfg.epsilon, cfg.epsilon);
            delta[i] = d;
            current.values[i] = grid.values[i] + d;
        }
    }
    AdversarialExample ex;
    ex.original = grid;
    ex.perturbed = current;
    ex.kind = AttackKind::kPgd;
    ex.budget = cfg.epsilon;
    ex.realized = norm_inf(delta);
    ex.success = model.predict(current) != original_pred;
    return ex;
}

}  // namespace resdet
