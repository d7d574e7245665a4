#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "resdet/errors.hpp"
#include "resdet/numerics.hpp"
#include "resdet/rng.hpp"
#include "resdet/text.hpp"

namespace resdet {

// Per-position input embeddings h_1..h_L. Padding positions keep a vector but
// are excluded from attention, pooling and gradients.
struct EmbeddingSequence {
    std::vector<Vec> vectors;
    std::vector<std::uint8_t> valid;

    std::size_t size() const { return vectors.size(); }
    bool empty() const { return vectors.empty(); }
};

enum class EncoderKind { kAttention, kMeanPool };
enum class HeadKind { kSoftmax, kRegression };

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 16;  // per-token embedding width
    std::size_t model_dim = 32;  // sentence embedding width
    std::size_t classes = 4;
    EncoderKind encoder = EncoderKind::kAttention;
    HeadKind head = HeadKind::kSoftmax;
    double dropout_rate = 0.1;
    bool normalize_embedding = false;  // optional layer norm on the sentence embedding
    std::uint64_t seed = 1;
};

struct ParamGrads {
    Matrix wq, wk, wv, wp;
    Vec bp;
    Matrix wc;
    Vec bc;
    Vec wr;
    double br = 0.0;
};

// Everything the backward pass needs from one forward evaluation.
struct ForwardTrace {
    EmbeddingSequence input;
    std::vector<Vec> q, k, v;
    std::vector<Vec> attn;  // attn[i][j]: weight of position j in the mix for i
    std::vector<Vec> mixed;
    Vec pooled;
    Vec preact;
    Vec tanh_out;
    Vec embedding;  // sentence embedding (after optional layer norm)
    double norm_mean = 0.0, norm_rstd = 0.0;
    Vec dropout_scale;  // empty when dropout was not applied
    Vec head_in;
    Vec logits, probs;
    double score = 0.0;
    std::size_t n_valid = 0;
};

inline Vec softmax(const Vec& z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    Vec p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

inline std::size_t argmax(const Vec& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// Toy text classifier, decomposed into an encoding stage (token embeddings ->
// one self-attention mixing layer -> pooled, projected sentence embedding) and
// an output stage (dropout -> linear softmax or scalar regression head).
struct ClassifierModel {
    ModelConfig cfg;
    Matrix embedding;      // vocab_size x embed_dim
    Matrix wq, wk, wv;     // embed_dim x embed_dim
    Matrix wp;             // model_dim x embed_dim
    Vec bp;                // model_dim
    Matrix wc;             // classes x model_dim
    Vec bc;                // classes
    Vec wr;                // model_dim
    double br = 0.0;

    static ClassifierModel init(const ModelConfig& cfg) {
        if (cfg.vocab_size == 0) throw ConfigError("ClassifierModel: vocab_size must be set");
        ClassifierModel m;
        m.cfg = cfg;
        Rng rng(cfg.seed);
        auto fill_normal = [&rng](Matrix& mat, std::size_t r, std::size_t c, double std) {
            mat = Matrix(r, c);
            for (double& v : mat.raw()) v = rng.normal(0.0, std);
        };
        fill_normal(m.embedding, cfg.vocab_size, cfg.embed_dim, 0.5);
        const double attn_std = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
        fill_normal(m.wq, cfg.embed_dim, cfg.embed_dim, attn_std);
        fill_normal(m.wk, cfg.embed_dim, cfg.embed_dim, attn_std);
        fill_normal(m.wv, cfg.embed_dim, cfg.embed_dim, attn_std);
        fill_normal(m.wp, cfg.model_dim, cfg.embed_dim, attn_std);
        m.bp.assign(cfg.model_dim, 0.0);
        const double head_std = 1.0 / std::sqrt(static_cast<double>(cfg.model_dim));
        fill_normal(m.wc, cfg.classes, cfg.model_dim, head_std);
        m.bc.assign(cfg.classes, 0.0);
        m.wr.assign(cfg.model_dim, 0.0);
        for (double& v : m.wr) v = rng.normal(0.0, head_std);
        m.br = 0.0;
        return m;
    }

    EmbeddingSequence embed(const TokenSequence& x) const {
        EmbeddingSequence seq;
        seq.vectors.reserve(x.size());
        seq.valid.reserve(x.size());
        for (int id : x.ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= embedding.rows())
                throw DataError("embed: token id outside the vocabulary");
            seq.vectors.push_back(embedding.row(static_cast<std::size_t>(id)));
            seq.valid.push_back(id != Vocabulary::kPad ? 1 : 0);
        }
        return seq;
    }

    ForwardTrace forward(const EmbeddingSequence& h, Rng* dropout_rng = nullptr) const {
        const std::size_t len = h.size();
        if (len == 0) throw DataError("forward: empty sequence");
        ForwardTrace t;
        t.input = h;
        t.n_valid = 0;
        for (std::uint8_t flag : h.valid)
            if (flag) ++t.n_valid;
        if (t.n_valid == 0) throw DataError("forward: sequence has no non-padding tokens");

        const std::size_t de = cfg.embed_dim;
        t.pooled.assign(de, 0.0);
        if (cfg.encoder == EncoderKind::kAttention) {
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(de));
            t.q.resize(len);
            t.k.resize(len);
            t.v.resize(len);
            for (std::size_t i = 0; i < len; ++i) {
                if (!h.valid[i]) continue;
                t.q[i] = matvec(wq, h.vectors[i]);
                t.k[i] = matvec(wk, h.vectors[i]);
                t.v[i] = matvec(wv, h.vectors[i]);
            }
            t.attn.assign(len, Vec(len, 0.0));
            t.mixed.assign(len, Vec(de, 0.0));
            for (std::size_t i = 0; i < len; ++i) {
                if (!h.valid[i]) continue;
                double mx = -1e300;
                Vec scores(len, 0.0);
                for (std::size_t j = 0; j < len; ++j) {
                    if (!h.valid[j]) continue;
                    scores[j] = dot(t.q[i], t.k[j]) * inv_sqrt;
                    mx = std::max(mx, scores[j]);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    if (!h.valid[j]) continue;
                    t.attn[i][j] = std::exp(scores[j] - mx);
                    sum += t.attn[i][j];
                }
                for (std::size_t j = 0; j < len; ++j) {
                    if (!h.valid[j]) continue;
                    t.attn[i][j] /= sum;
                    axpy(t.attn[i][j], t.v[j], t.mixed[i]);
                }
                axpy(1.0 / static_cast<double>(t.n_valid), t.mixed[i], t.pooled);
            }
        } else {
            for (std::size_t i = 0; i < len; ++i)
                if (h.valid[i]) axpy(1.0 / static_cast<double>(t.n_valid), h.vectors[i], t.pooled);
        }

        t.preact = matvec(wp, t.pooled);
        for (std::size_t i = 0; i < cfg.model_dim; ++i) t.preact[i] += bp[i];
        t.tanh_out.resize(cfg.model_dim);
        for (std::size_t i = 0; i < cfg.model_dim; ++i) t.tanh_out[i] = std::tanh(t.preact[i]);

        if (cfg.normalize_embedding) {
            const double n = static_cast<double>(cfg.model_dim);
            double mean = 0.0;
            for (double v : t.tanh_out) mean += v;
            mean /= n;
            double var = 0.0;
            for (double v : t.tanh_out) var += (v - mean) * (v - mean);
            var /= n;
            t.norm_mean = mean;
            t.norm_rstd = 1.0 / std::sqrt(var + 1e-5);
            t.embedding.resize(cfg.model_dim);
            for (std::size_t i = 0; i < cfg.model_dim; ++i)
                t.embedding[i] = (t.tanh_out[i] - mean) * t.norm_rstd;
        } else {
            t.embedding = t.tanh_out;
        }

        t.head_in = t.embedding;
        if (dropout_rng != nullptr) {
            const double keep = 1.0 - cfg.dropout_rate;
            t.dropout_scale.resize(cfg.model_dim);
            for (std::size_t i = 0; i < cfg.model_dim; ++i) {
                const bool kept = cfg.dropout_rate <= 0.0 || dropout_rng->uniform01() >= cfg.dropout_rate;
                t.dropout_scale[i] = kept ? 1.0 / keep : 0.0;
                t.head_in[i] *= t.dropout_scale[i];
            }
        }

        if (cfg.head == HeadKind::kSoftmax) {
            t.logits = matvec(wc, t.head_in);
            for (std::size_t i = 0; i < cfg.classes; ++i) t.logits[i] += bc[i];
            t.probs = softmax(t.logits);
        } else {
            t.score = dot(wr, t.head_in) + br;
        }
        return t;
    }

    // Encoder stage F_en: the sentence embedding, dropout off.
    Vec encode(const EmbeddingSequence& h) const { return forward(h).embedding; }
    Vec encode(const TokenSequence& x) const { return encode(embed(x)); }

    // Output stage F_cl on a given sentence embedding, dropout off.
    Vec classify(const Vec& sentence_embedding) const {
        if (cfg.head != HeadKind::kSoftmax) throw DataError("classify: model has no softmax head");
        if (sentence_embedding.size() != cfg.model_dim)
            throw DataError("classify: embedding dimension mismatch");
        Vec logits = matvec(wc, sentence_embedding);
        for (std::size_t i = 0; i < cfg.classes; ++i) logits[i] += bc[i];
        return softmax(logits);
    }

    double regress(const Vec& sentence_embedding) const {
        if (cfg.head != HeadKind::kRegression) throw DataError("regress: model has no regression head");
        if (sentence_embedding.size() != cfg.model_dim)
            throw DataError("regress: embedding dimension mismatch");
        return dot(wr, sentence_embedding) + br;
    }

    Vec forward_probs(const TokenSequence& x) const {
        if (cfg.head != HeadKind::kSoftmax) throw DataError("forward_probs: model has no softmax head");
        return forward(embed(x)).probs;
    }

    Vec forward_probs(const EmbeddingSequence& h) const {
        if (cfg.head != HeadKind::kSoftmax) throw DataError("forward_probs: model has no softmax head");
        return forward(h).probs;
    }

    double forward_score(const TokenSequence& x) const {
        if (cfg.head != HeadKind::kRegression) throw DataError("forward_score: model has no regression head");
        return forward(embed(x)).score;
    }

    double forward_score(const EmbeddingSequence& h) const {
        if (cfg.head != HeadKind::kRegression) throw DataError("forward_score: model has no regression head");
        return forward(h).score;
    }

    int predict(const TokenSequence& x) const { return static_cast<int>(argmax(forward_probs(x))); }
    int predict(const EmbeddingSequence& h) const { return static_cast<int>(argmax(forward_probs(h))); }

    struct BackwardResult {
        EmbeddingSequence input_grad;
        ParamGrads params;
    };

    // dhead is dL/dlogits for the softmax head or {dL/dscore} for regression.
    BackwardResult backward(const ForwardTrace& t, const Vec& dhead, bool want_params) const {
        const std::size_t len = t.input.size();
        const std::size_t de = cfg.embed_dim;
        const std::size_t dm = cfg.model_dim;
        BackwardResult out;
        out.input_grad.vectors.assign(len, Vec(de, 0.0));
        out.input_grad.valid = t.input.valid;
        if (want_params) {
            out.params.wq = Matrix(de, de);
            out.params.wk = Matrix(de, de);
            out.params.wv = Matrix(de, de);
            out.params.wp = Matrix(dm, de);
            out.params.bp.assign(dm, 0.0);
            out.params.wc = Matrix(cfg.classes, dm);
            out.params.bc.assign(cfg.classes, 0.0);
            out.params.wr.assign(dm, 0.0);
            out.params.br = 0.0;
        }

        Vec dhead_in(dm, 0.0);
        if (cfg.head == HeadKind::kSoftmax) {
            dhead_in = matvec_t(wc, dhead);
            if (want_params) {
                for (std::size_t i = 0; i < cfg.classes; ++i) {
                    out.params.bc[i] = dhead[i];
                    for (std::size_t j = 0; j < dm; ++j) out.params.wc(i, j) = dhead[i] * t.head_in[j];
                }
            }
        } else {
            const double dscore = dhead[0];
            for (std::size_t j = 0; j < dm; ++j) dhead_in[j] = dscore * wr[j];
            if (want_params) {
                for (std::size_t j = 0; j < dm; ++j) out.params.wr[j] = dscore * t.head_in[j];
                out.params.br = dscore;
            }
        }

        Vec demb = dhead_in;
        if (!t.dropout_scale.empty())
            for (std::size_t i = 0; i < dm; ++i) demb[i] *= t.dropout_scale[i];

        Vec dtanh(dm, 0.0);
        if (cfg.normalize_embedding) {
            // Layer-norm backward in terms of the normalized output.
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t i = 0; i < dm; ++i) {
                mean_d += demb[i];
                mean_dx += demb[i] * t.embedding[i];
            }
            mean_d /= static_cast<double>(dm);
            mean_dx /= static_cast<double>(dm);
            for (std::size_t i = 0; i < dm; ++i)
                dtanh[i] = t.norm_rstd * (demb[i] - mean_d - t.embedding[i] * mean_dx);
        } else {
            dtanh = demb;
        }

        Vec dpre(dm);
        for (std::size_t i = 0; i < dm; ++i) dpre[i] = dtanh[i] * (1.0 - t.tanh_out[i] * t.tanh_out[i]);

        Vec dpooled = matvec_t(wp, dpre);
        if (want_params) {
            for (std::size_t i = 0; i < dm; ++i) {
                out.params.bp[i] = dpre[i];
                for (std::size_t j = 0; j < de; ++j) out.params.wp(i, j) = dpre[i] * t.pooled[j];
            }
        }

        const double inv_n = 1.0 / static_cast<double>(t.n_valid);
        if (cfg.encoder == EncoderKind::kMeanPool) {
            for (std::size_t i = 0; i < len; ++i) {
                if (!t.input.valid[i]) continue;
                for (std::size_t j = 0; j < de; ++j) out.input_grad.vectors[i][j] = dpooled[j] * inv_n;
            }
            return out;
        }

        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(de));
        std::vector<Vec> dq(len, Vec(de, 0.0)), dk(len, Vec(de, 0.0)), dv(len, Vec(de, 0.0));
        for (std::size_t i = 0; i < len; ++i) {
            if (!t.input.valid[i]) continue;
            // dL/dm_i = dpooled / n_valid
            Vec dmix = scaled(dpooled, inv_n);
            Vec dattn(len, 0.0);
            for (std::size_t j = 0; j < len; ++j) {
                if (!t.input.valid[j]) continue;
                dattn[j] = dot(dmix, t.v[j]);
                axpy(t.attn[i][j], dmix, dv[j]);
            }
            double weighted = 0.0;
            for (std::size_t j = 0; j < len; ++j)
                if (t.input.valid[j]) weighted += t.attn[i][j] * dattn[j];
            for (std::size_t j = 0; j < len; ++j) {
                if (!t.input.valid[j]) continue;
                const double dscore_ij = t.attn[i][j] * (dattn[j] - weighted) * inv_sqrt;
                axpy(dscore_ij, t.k[j], dq[i]);
                axpy(dscore_ij, t.q[i], dk[j]);
            }
        }
        for (std::size_t i = 0; i < len; ++i) {
            if (!t.input.valid[i]) continue;
            Vec dh = matvec_t(wq, dq[i]);
            axpy(1.0, matvec_t(wk, dk[i]), dh);
            axpy(1.0, matvec_t(wv, dv[i]), dh);
            out.input_grad.vectors[i] = dh;
            if (want_params) {
                for (std::size_t a = 0; a < de; ++a)
                    for (std::size_t b = 0; b < de; ++b) {
                        out.params.wq(a, b) += dq[i][a] * t.input.vectors[i][b];
                        out.params.wk(a, b) += dk[i][a] * t.input.vectors[i][b];
                        out.params.wv(a, b) += dv[i][a] * t.input.vectors[i][b];
                    }
            }
        }
        return out;
    }

    // Gradient of the training loss (cross-entropy) w.r.t. each input embedding.
    EmbeddingSequence loss_grad_wrt_embeddings(const EmbeddingSequence& h, int label) const {
        if (cfg.head != HeadKind::kSoftmax)
            throw DataError("loss_grad_wrt_embeddings: label form requires a softmax head");
        if (label < 0 || static_cast<std::size_t>(label) >= cfg.classes)
            throw DataError("loss_grad_wrt_embeddings: label out of range");
        ForwardTrace t = forward(h);
        Vec dlogits = t.probs;
        dlogits[static_cast<std::size_t>(label)] -= 1.0;
        return backward(t, dlogits, false).input_grad;
    }

    EmbeddingSequence loss_grad_wrt_embeddings(const TokenSequence& x, int label) const {
        return loss_grad_wrt_embeddings(embed(x), label);
    }

    // Squared-error loss (score - target)^2 for the regression head.
    EmbeddingSequence loss_grad_wrt_embeddings_reg(const EmbeddingSequence& h, double target) const {
        if (cfg.head != HeadKind::kRegression)
            throw DataError("loss_grad_wrt_embeddings_reg: requires a regression head");
        ForwardTrace t = forward(h);
        Vec dhead{2.0 * (t.score - target)};
        return backward(t, dhead, false).input_grad;
    }

    EmbeddingSequence loss_grad_wrt_embeddings_reg(const TokenSequence& x, double target) const {
        return loss_grad_wrt_embeddings_reg(embed(x), target);
    }

    double loss(const ForwardTrace& t, int label, double target) const {
        if (cfg.head == HeadKind::kSoftmax)
            return -std::log(std::max(t.probs[static_cast<std::size_t>(label)], 1e-300));
        const double diff = t.score - target;
        return diff * diff;
    }

    // M stochastic forward passes with dropout active.
    std::vector<Vec> mc_samples(const TokenSequence& x, int m, std::uint64_t seed) const {
        if (cfg.head != HeadKind::kSoftmax) throw DataError("mc_samples: requires a softmax head");
        if (m < 1) throw DataError("mc_samples: m must be at least 1");
        Rng rng(seed);
        EmbeddingSequence h = embed(x);
        std::vector<Vec> out;
        out.reserve(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) out.push_back(forward(h, &rng).probs);
        return out;
    }

    std::vector<Vec> mc_samples(const TokenSequence& x, int m) const {
        return mc_samples(x, m, Rng::derive_seed(cfg.seed, 0x6d63u));
    }
};

struct TrainOptions {
    double lr = 0.1;
    int epochs = 20;
    int batch_size = 32;
    std::uint64_t seed = 1;
    bool use_dropout = true;
};

struct TrainReport {
    std::vector<double> epoch_loss;
};

// Plain SGD; classification labels are used directly, the regression target is
// the label value cast to double.
inline TrainReport train_model(ClassifierModel& model, const Dataset& data, const TrainOptions& opts) {
    if (data.empty()) throw DataError("train_model: empty dataset");
    if (data.inputs.size() != data.labels.size()) throw DataError("train_model: inputs/labels size mismatch");
    if (opts.batch_size < 1) throw ConfigError("train_model: batch_size must be positive");
    if (model.cfg.head == HeadKind::kSoftmax)
        for (int label : data.labels)
            if (label < 0 || static_cast<std::size_t>(label) >= model.cfg.classes)
                throw DataError("train_model: label outside the class range");

    TrainReport report;
    Rng rng(opts.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::size_t de = model.cfg.embed_dim;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            ParamGrads acc;
            acc.wq = Matrix(de, de);
            acc.wk = Matrix(de, de);
            acc.wv = Matrix(de, de);
            acc.wp = Matrix(model.cfg.model_dim, de);
            acc.bp.assign(model.cfg.model_dim, 0.0);
            acc.wc = Matrix(model.cfg.classes, model.cfg.model_dim);
            acc.bc.assign(model.cfg.classes, 0.0);
            acc.wr.assign(model.cfg.model_dim, 0.0);
            acc.br = 0.0;
            Matrix emb_grad(model.embedding.rows(), de);

            for (std::size_t pos = start; pos < end; ++pos) {
                const std::size_t idx = order[pos];
                const TokenSequence& x = data.inputs[idx];
                const int label = data.labels[idx];
                ForwardTrace t = model.forward(model.embed(x), opts.use_dropout ? &rng : nullptr);
                epoch_loss += model.loss(t, label, static_cast<double>(label));
                Vec dhead;
                if (model.cfg.head == HeadKind::kSoftmax) {
                    dhead = t.probs;
                    dhead[static_cast<std::size_t>(label)] -= 1.0;
                } else {
                    dhead = {2.0 * (t.score - static_cast<double>(label))};
                }
                auto grads = model.backward(t, dhead, true);
                auto add_mat = [](Matrix& dst, const Matrix& src) {
                    for (std::size_t i = 0; i < dst.raw().size(); ++i) dst.raw()[i] += src.raw()[i];
                };
                add_mat(acc.wq, grads.params.wq);
                add_mat(acc.wk, grads.params.wk);
                add_mat(acc.wv, grads.params.wv);
                add_mat(acc.wp, grads.params.wp);
                axpy(1.0, grads.params.bp, acc.bp);
                add_mat(acc.wc, grads.params.wc);
                axpy(1.0, grads.params.bc, acc.bc);
                axpy(1.0, grads.params.wr, acc.wr);
                acc.br += grads.params.br;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const auto row = static_cast<std::size_t>(x.ids[i]);
                    for (std::size_t j = 0; j < de; ++j)
                        emb_grad(row, j) += grads.input_grad.vectors[i][j];
                }
            }

            const double step = opts.lr * inv_batch;
            auto apply = [step](Matrix& param, const Matrix& grad) {
                for (std::size_t i = 0; i < param.raw().size(); ++i) param.raw()[i] -= step * grad.raw()[i];
            };
            apply(model.wq, acc.wq);
            apply(model.wk, acc.wk);
            apply(model.wv, acc.wv);
            apply(model.wp, acc.wp);
            apply(model.wc, acc.wc);
            apply(model.embedding, emb_grad);
            for (std::size_t i = 0; i < acc.bp.size(); ++i) model.bp[i] -= step * acc.bp[i];
            for (std::size_t i = 0; i < acc.bc.size(); ++i) model.bc[i] -= step * acc.bc[i];
            for (std::size_t i = 0; i < acc.wr.size(); ++i) model.wr[i] -= step * acc.wr[i];
            model.br -= step * acc.br;
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Quantized-grid analog: flatten -> tanh hidden layer -> softmax.

struct Grid {
    std::size_t side = 0;
    Vec values;  // row-major, raw pixel units

    std::size_t size() const { return values.size(); }
    bool operator==(const Grid& other) const = default;
};

struct GridModelConfig {
    std::size_t side = 8;
    int levels = 4;  // quantization level count q
    std::size_t hidden = 32;
    std::size_t classes = 4;
    double dropout_rate = 0.1;
    std::uint64_t seed = 1;
};

struct GridModel {
    GridModelConfig cfg;
    Matrix w1;  // hidden x side^2
    Vec b1;
    Matrix w2;  // classes x hidden
    Vec b2;

    static GridModel init(const GridModelConfig& cfg) {
        GridModel m;
        m.cfg = cfg;
        Rng rng(cfg.seed);
        const std::size_t in = cfg.side * cfg.side;
        m.w1 = Matrix(cfg.hidden, in);
        for (double& v : m.w1.raw()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        m.b1.assign(cfg.hidden, 0.0);
        m.w2 = Matrix(cfg.classes, cfg.hidden);
        for (double& v : m.w2.raw()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
        m.b2.assign(cfg.classes, 0.0);
        return m;
    }

    struct Trace {
        Vec scaled_in;  // pixels / 255
        Vec hidden;     // tanh layer, the grid "encoder embedding"
        Vec dropout_scale;
        Vec head_in;
        Vec probs;
    };

    Trace forward(const Grid& g, Rng* dropout_rng = nullptr) const {
        if (g.side != cfg.side || g.values.size() != cfg.side * cfg.side)
            throw DataError("GridModel: grid shape mismatch");
        Trace t;
        t.scaled_in.resize(g.values.size());
        for (std::size_t i = 0; i < g.values.size(); ++i) t.scaled_in[i] = g.values[i] / 255.0;
        Vec pre = matvec(w1, t.scaled_in);
        t.hidden.resize(cfg.hidden);
        for (std::size_t i = 0; i < cfg.hidden; ++i) t.hidden[i] = std::tanh(pre[i] + b1[i]);
        t.head_in = t.hidden;
        if (dropout_rng != nullptr) {
            const double keep = 1.0 - cfg.dropout_rate;
            t.dropout_scale.resize(cfg.hidden);
            for (std::size_t i = 0; i < cfg.hidden; ++i) {
                const bool kept = cfg.dropout_rate <= 0.0 || dropout_rng->uniform01() >= cfg.dropout_rate;
                t.dropout_scale[i] = kept ? 1.0 / keep : 0.0;
                t.head_in[i] *= t.dropout_scale[i];
            }
        }
        Vec logits = matvec(w2, t.head_in);
        for (std::size_t i = 0; i < cfg.classes; ++i) logits[i] += b2[i];
        t.probs = softmax(logits);
        return t;
    }

    Vec encode(const Grid& g) const { return forward(g).hidden; }

    Vec classify(const Vec& hidden) const {
        if (hidden.size() != cfg.hidden) throw DataError("GridModel::classify: dimension mismatch");
        Vec logits = matvec(w2, hidden);
        for (std::size_t i = 0; i < cfg.classes; ++i) logits[i] += b2[i];
        return softmax(logits);
    }

    Vec forward_probs(const Grid& g) const { return forward(g).probs; }
    int predict(const Grid& g) const { return static_cast<int>(argmax(forward_probs(g))); }

    // dL/dpixel for cross-entropy of `label`, in raw pixel units.
    Grid loss_grad_wrt_pixels(const Grid& g, int label) const {
        if (label < 0 || static_cast<std::size_t>(label) >= cfg.classes)
            throw DataError("loss_grad_wrt_pixels: label out of range");
        Trace t = forward(g);
        Vec dlogits = t.probs;
        dlogits[static_cast<std::size_t>(label)] -= 1.0;
        Vec dhidden = matvec_t(w2, dlogits);
        Vec dpre(cfg.hidden);
        for (std::size_t i = 0; i < cfg.hidden; ++i)
            dpre[i] = dhidden[i] * (1.0 - t.hidden[i] * t.hidden[i]);
        Vec din = matvec_t(w1, dpre);
        Grid out{g.side, Vec(g.values.size())};
        for (std::size_t i = 0; i < din.size(); ++i) out.values[i] = din[i] / 255.0;
        return out;
    }

    std::vector<Vec> mc_samples(const Grid& g, int m, std::uint64_t seed) const {
        if (m < 1) throw DataError("mc_samples: m must be at least 1");
        Rng rng(seed);
        std::vector<Vec> out;
        out.reserve(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) out.push_back(forward(g, &rng).probs);
        return out;
    }
};

inline TrainReport train_grid_model(GridModel& model, const std::vector<Grid>& grids,
                                    const std::vector<int>& labels, const TrainOptions& opts) {
    if (grids.empty()) throw DataError("train_grid_model: empty dataset");
    if (grids.size() != labels.size()) throw DataError("train_grid_model: inputs/labels size mismatch");
    TrainReport report;
    Rng rng(opts.seed);
    std::vector<std::size_t> order(grids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t in = model.cfg.side * model.cfg.side;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            Matrix g1(model.cfg.hidden, in), g2(model.cfg.classes, model.cfg.hidden);
            Vec gb1(model.cfg.hidden, 0.0), gb2(model.cfg.classes, 0.0);
            for (std::size_t pos = start; pos < end; ++pos) {
                const std::size_t idx = order[pos];
                auto t = model.forward(grids[idx], opts.use_dropout ? &rng : nullptr);
                const auto label = static_cast<std::size_t>(labels[idx]);
                epoch_loss += -std::log(std::max(t.probs[label], 1e-300));
                Vec dlogits = t.probs;
                dlogits[label] -= 1.0;
                Vec dhead = matvec_t(model.w2, dlogits);
                if (!t.dropout_scale.empty())
                    for (std::size_t i = 0; i < dhead.size(); ++i) dhead[i] *= t.dropout_scale[i];
                Vec dpre(model.cfg.hidden);
                for (std::size_t i = 0; i < model.cfg.hidden; ++i)
                    dpre[i] = dhead[i] * (1.0 - t.hidden[i] * t.hidden[i]);
                for (std::size_t i = 0; i < model.cfg.classes; ++i) {
                    gb2[i] += dlogits[i];
                    for (std::size_t j = 0; j < model.cfg.hidden; ++j)
                        g2(i, j) += dlogits[i] * t.head_in[j];
                }
                for (std::size_t i = 0; i < model.cfg.hidden; ++i) {
                    gb1[i] += dpre[i];
                    for (std::size_t j = 0; j < in; ++j) g1(i, j) += dpre[i] * t.scaled_in[j];
                }
            }
            const double step = opts.lr * inv_batch;
            for (std::size_t i = 0; i < model.w1.raw().size(); ++i) model.w1.raw()[i] -= step * g1.raw()[i];
            for (std::size_t i = 0; i < model.w2.raw().size(); ++i) model.w2.raw()[i] -= step * g2.raw()[i];
            for (std::size_t i = 0; i < gb1.size(); ++i) model.b1[i] -= step * gb1[i];
            for (std::size_t i = 0; i < gb2.size(); ++i) model.b2[i] -= step * gb2[i];
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(grids.size()));
    }
    return report;
}

}  // namespace resdet
