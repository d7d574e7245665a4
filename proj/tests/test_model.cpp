#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracle_helpers.hpp"
#include "resdet/model.hpp"
#include "resdet/rng.hpp"

using namespace resdet;

namespace {

ModelConfig tiny_config(std::uint64_t seed, HeadKind head = HeadKind::kSoftmax,
                        EncoderKind encoder = EncoderKind::kAttention) {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.embed_dim = 4;
    cfg.model_dim = 6;
    cfg.classes = 3;
    cfg.head = head;
    cfg.encoder = encoder;
    cfg.seed = seed;
    return cfg;
}

TokenSequence random_sequence(Rng& rng, int max_id, std::size_t len) {
    TokenSequence x;
    for (std::size_t i = 0; i < len; ++i) x.ids.push_back(rng.uniform_int(2, max_id));
    return x;
}

double ce_loss(const Vec& probs, int label) {
    return -std::log(probs[static_cast<std::size_t>(label)]);
}

}  // namespace

TEST_CASE("embed is a table lookup", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    const TokenSequence x{{7}};
    const EmbeddingSequence h = m.embed(x);
    REQUIRE(h.size() == 1);
    CHECK(h.vectors[0] == m.embedding.row(7));

    const TokenSequence rep{{3, 3, 3}};
    const EmbeddingSequence hr = m.embed(rep);
    CHECK(hr.vectors[0] == hr.vectors[1]);
    CHECK(hr.vectors[1] == hr.vectors[2]);
}

TEST_CASE("embed rejects out-of-vocabulary ids", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    CHECK_THROWS_AS(m.embed(TokenSequence{{99}}), DataError);
    CHECK_THROWS_AS(m.embed(TokenSequence{{-1}}), DataError);
}

TEST_CASE("fixed seed and fixed input give bit-identical outputs", "[model]") {
    const TokenSequence x{{2, 9, 4, 4, 11}};
    ClassifierModel a = ClassifierModel::init(tiny_config(77));
    ClassifierModel b = ClassifierModel::init(tiny_config(77));
    const Vec pa = a.forward_probs(x);
    const Vec pb = b.forward_probs(x);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    // Inference is deterministic call to call as well.
    CHECK(a.forward_probs(x) == pa);
    CHECK(a.encode(x) == a.encode(x));
}

TEST_CASE("all-zero embeddings with zero biases encode to zero", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    for (double& v : m.embedding.raw()) v = 0.0;
    for (double& v : m.bp) v = 0.0;
    const Vec e = m.encode(TokenSequence{{2, 3, 4}});
    for (double v : e) CHECK(v == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("mean-pool encoding of repeated tokens equals the single token", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(8, HeadKind::kSoftmax, EncoderKind::kMeanPool));
    const Vec single = m.encode(TokenSequence{{5}});
    const Vec repeated = m.encode(TokenSequence{{5, 5, 5, 5}});
    for (std::size_t i = 0; i < single.size(); ++i)
        CHECK(repeated[i] == Catch::Approx(single[i]).margin(1e-12));
}

TEST_CASE("encode matches the scalar-loop golden vector", "[model]") {
    // Frozen from the scalar-loop oracle at seed 99, ids {3, 7, 2, 9}.
    const Vec golden{-0.12279888120358244, 0.034823347448929745, -0.17560866174322431,
                     0.13619779900299683,  -0.084197565240646463, -0.1020758106158145};
    ClassifierModel m = ClassifierModel::init(tiny_config(99));
    const Vec e = m.encode(TokenSequence{{3, 7, 2, 9}});
    REQUIRE(e.size() == golden.size());
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == Catch::Approx(golden[i]).margin(1e-12));
}

TEST_CASE("forward probabilities match the scalar-loop oracle", "[model]") {
    Rng rng(123);
    for (int trial = 0; trial < 8; ++trial) {
        ClassifierModel m = ClassifierModel::init(tiny_config(200 + static_cast<std::uint64_t>(trial)));
        const TokenSequence x = random_sequence(rng, 11, static_cast<std::size_t>(rng.uniform_int(1, 7)));
        const Vec probs = m.forward_probs(x);
        const Vec expected = oracle::naive_forward_probs(m, x.ids);
        for (std::size_t i = 0; i < probs.size(); ++i)
            CHECK(probs[i] == Catch::Approx(expected[i]).margin(1e-10));
    }
}

TEST_CASE("classify of zero weights is uniform", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    for (double& v : m.wc.raw()) v = 0.0;
    for (double& v : m.bc) v = 0.0;
    const Vec probs = m.classify(Vec(m.cfg.model_dim, 0.37));
    for (double p : probs) CHECK(p == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("probabilities sum to one", "[model]") {
    Rng rng(321);
    ClassifierModel m = ClassifierModel::init(tiny_config(13));
    for (int trial = 0; trial < 20; ++trial) {
        const TokenSequence x = random_sequence(rng, 11, 5);
        const Vec probs = m.forward_probs(x);
        double sum = 0.0;
        for (double p : probs) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("classify rejects dimension mismatch", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    CHECK_THROWS_AS(m.classify(Vec(3, 0.0)), DataError);
}

TEST_CASE("fused forward equals the encoder/head composition exactly", "[model]") {
    Rng rng(55);
    ClassifierModel m = ClassifierModel::init(tiny_config(21));
    for (int trial = 0; trial < 10; ++trial) {
        const TokenSequence x = random_sequence(rng, 11, 6);
        const Vec composed = m.classify(m.encode(m.embed(x)));
        const Vec fused = m.forward_probs(x);
        CHECK(composed == fused);
    }
}

TEST_CASE("gradient at a padding position is zero", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(31));
    const TokenSequence x{{4, Vocabulary::kPad, 9}};
    const EmbeddingSequence grad = m.loss_grad_wrt_embeddings(x, 1);
    for (double v : grad.vectors[1]) CHECK(v == 0.0);
    double sum = 0.0;
    for (double v : grad.vectors[0]) sum += std::abs(v);
    CHECK(sum > 0.0);
}

TEST_CASE("mean-pool regression gradient matches the hand-derived form", "[model]") {
    // score = wr . tanh(Wp (mean h) + bp) + br with squared-error loss;
    // dL/dh_i = (2 (score - target) / L) Wp^T (wr * (1 - tanh^2)).
    ClassifierModel m = ClassifierModel::init(tiny_config(41, HeadKind::kRegression, EncoderKind::kMeanPool));
    const TokenSequence x{{2, 6, 10}};
    const double target = 0.25;
    const EmbeddingSequence grad = m.loss_grad_wrt_embeddings_reg(x, target);

    const EmbeddingSequence h = m.embed(x);
    const std::size_t de = m.cfg.embed_dim, dm = m.cfg.model_dim, L = x.size();
    Vec pooled(de, 0.0);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < de; ++j) pooled[j] += h.vectors[i][j] / static_cast<double>(L);
    Vec tanh_out(dm);
    double score = m.br;
    for (std::size_t a = 0; a < dm; ++a) {
        double t = m.bp[a];
        for (std::size_t b = 0; b < de; ++b) t += m.wp(a, b) * pooled[b];
        tanh_out[a] = std::tanh(t);
        score += m.wr[a] * tanh_out[a];
    }
    Vec expected(de, 0.0);
    for (std::size_t b = 0; b < de; ++b)
        for (std::size_t a = 0; a < dm; ++a)
            expected[b] += m.wp(a, b) * m.wr[a] * (1.0 - tanh_out[a] * tanh_out[a]);
    const double factor = 2.0 * (score - target) / static_cast<double>(L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t b = 0; b < de; ++b)
            CHECK(grad.vectors[i][b] == Catch::Approx(factor * expected[b]).margin(1e-12));
}

TEST_CASE("input-embedding gradients match central finite differences", "[model]") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        const bool regression = trial % 4 == 3;
        ClassifierModel m = ClassifierModel::init(tiny_config(
            500 + static_cast<std::uint64_t>(trial),
            regression ? HeadKind::kRegression : HeadKind::kSoftmax));
        const TokenSequence x = random_sequence(rng, 11, static_cast<std::size_t>(rng.uniform_int(2, 6)));
        const int label = rng.uniform_int(0, 2);
        const double target = 0.8;

        EmbeddingSequence h = m.embed(x);
        const EmbeddingSequence analytic = regression ? m.loss_grad_wrt_embeddings_reg(h, target)
                                                      : m.loss_grad_wrt_embeddings(h, label);
        auto loss_at = [&]() {
            if (regression) {
                const double diff = m.forward_score(h) - target;
                return diff * diff;
            }
            return ce_loss(m.forward_probs(h), label);
        };
        double num = 0.0, denom = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) {
            for (std::size_t j = 0; j < m.cfg.embed_dim; ++j) {
                const double fd = oracle::central_difference(loss_at, h.vectors[i][j], 1e-4);
                const double diff = analytic.vectors[i][j] - fd;
                num += diff * diff;
                denom += fd * fd;
            }
        }
        CHECK(std::sqrt(num) < 1e-4 * std::max(std::sqrt(denom), 1e-8));
    }
}

TEST_CASE("loss_grad rejects invalid labels", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    CHECK_THROWS_AS(m.loss_grad_wrt_embeddings(TokenSequence{{2, 3}}, 7), DataError);
    CHECK_THROWS_AS(m.loss_grad_wrt_embeddings(TokenSequence{{2, 3}}, -1), DataError);
}

TEST_CASE("training with zero epochs is a no-op", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    const Matrix before = m.embedding;
    Dataset data;
    data.inputs = {TokenSequence{{2, 3}}, TokenSequence{{4, 5}}};
    data.labels = {0, 1};
    TrainOptions opts;
    opts.epochs = 0;
    const TrainReport report = train_model(m, data, opts);
    CHECK(report.epoch_loss.empty());
    CHECK(m.embedding == before);
}

TEST_CASE("training rejects empty data", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    CHECK_THROWS_AS(train_model(m, Dataset{}, TrainOptions{}), DataError);
}

TEST_CASE("training fits a linearly separable toy corpus", "[model]") {
    ModelConfig cfg = tiny_config(7);
    cfg.vocab_size = 20;
    cfg.classes = 2;
    ClassifierModel m = ClassifierModel::init(cfg);
    Rng rng(71);
    Dataset data;
    for (int s = 0; s < 60; ++s) {
        const int cls = s % 2;
        TokenSequence x;
        for (int i = 0; i < 5; ++i) x.ids.push_back(rng.uniform_int(10, 19));
        x.ids[static_cast<std::size_t>(rng.uniform_int(0, 4))] = cls == 0 ? 2 : 3;  // planted keyword
        data.inputs.push_back(x);
        data.labels.push_back(cls);
    }
    TrainOptions opts;
    opts.epochs = 50;
    opts.lr = 0.35;
    opts.batch_size = 8;
    opts.seed = 9;
    train_model(m, data, opts);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (m.predict(data.inputs[i]) == data.labels[i]) ++correct;
    CHECK(correct == data.size());
}

TEST_CASE("training is deterministic given the seed", "[model]") {
    Rng rng(81);
    Dataset data;
    for (int s = 0; s < 30; ++s) {
        data.inputs.push_back(random_sequence(rng, 11, 5));
        data.labels.push_back(s % 3);
    }
    TrainOptions opts;
    opts.epochs = 5;
    opts.seed = 4242;
    ClassifierModel a = ClassifierModel::init(tiny_config(19));
    ClassifierModel b = ClassifierModel::init(tiny_config(19));
    const TrainReport ra = train_model(a, data, opts);
    const TrainReport rb = train_model(b, data, opts);
    REQUIRE(ra.epoch_loss.size() == rb.epoch_loss.size());
    for (std::size_t i = 0; i < ra.epoch_loss.size(); ++i) CHECK(ra.epoch_loss[i] == rb.epoch_loss[i]);
    CHECK(a.embedding == b.embedding);
    CHECK(a.wc == b.wc);
}

TEST_CASE("mc_samples with dropout rate zero are identical", "[model]") {
    ModelConfig cfg = tiny_config(5);
    cfg.dropout_rate = 0.0;
    ClassifierModel m = ClassifierModel::init(cfg);
    const auto samples = m.mc_samples(TokenSequence{{2, 3, 4}}, 10, 123);
    for (const Vec& p : samples) CHECK(p == samples.front());
}

TEST_CASE("mc_samples with dropout rate 0.5 vary", "[model]") {
    ModelConfig cfg = tiny_config(5);
    cfg.dropout_rate = 0.5;
    ClassifierModel m = ClassifierModel::init(cfg);
    const auto samples = m.mc_samples(TokenSequence{{2, 3, 4}}, 100, 123);
    Vec mean(m.cfg.classes, 0.0);
    for (const Vec& p : samples) axpy(1.0 / 100.0, p, mean);
    double var = 0.0;
    for (const Vec& p : samples)
        for (std::size_t c = 0; c < p.size(); ++c) var += (p[c] - mean[c]) * (p[c] - mean[c]);
    CHECK(var > 0.0);
    for (const Vec& p : samples) {
        double sum = 0.0;
        for (double v : p) sum += v;
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("mc_samples rejects a regression head", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5, HeadKind::kRegression));
    CHECK_THROWS_AS(m.mc_samples(TokenSequence{{2}}, 4, 1), DataError);
}

TEST_CASE("encode rejects empty and all-padding sequences", "[model]") {
    ClassifierModel m = ClassifierModel::init(tiny_config(5));
    CHECK_THROWS_AS(m.encode(TokenSequence{}), DataError);
    CHECK_THROWS_AS(m.encode(TokenSequence{{Vocabulary::kPad, Vocabulary::kPad}}), DataError);
}

TEST_CASE("layer-norm flag keeps gradients consistent with finite differences", "[model]") {
    ModelConfig cfg = tiny_config(91);
    cfg.normalize_embedding = true;
    ClassifierModel m = ClassifierModel::init(cfg);
    EmbeddingSequence h = m.embed(TokenSequence{{2, 5, 9}});
    const EmbeddingSequence analytic = m.loss_grad_wrt_embeddings(h, 2);
    auto loss_at = [&]() { return ce_loss(m.forward_probs(h), 2); };
    for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t j = 0; j < m.cfg.embed_dim; ++j) {
            const double fd = oracle::central_difference(loss_at, h.vectors[i][j], 1e-4);
            CHECK(analytic.vectors[i][j] == Catch::Approx(fd).margin(1e-6));
        }
}

TEST_CASE("grid model forward and pixel gradients", "[model]") {
    GridModelConfig cfg;
    cfg.side = 4;
    cfg.hidden = 6;
    cfg.classes = 3;
    cfg.seed = 3;
    GridModel m = GridModel::init(cfg);
    Grid g{4, Vec(16, 85.0)};
    g.values[3] = 170.0;
    const Vec probs = m.forward_probs(g);
    double sum = 0.0;
    for (double p : probs) sum += p;
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));

    const Grid grad = m.loss_grad_wrt_pixels(g, 1);
    auto loss_at = [&]() { return -std::log(m.forward_probs(g)[1]); };
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double fd = oracle::central_difference(loss_at, g.values[i], 1e-3);
        CHECK(grad.values[i] == Catch::Approx(fd).margin(1e-7));
    }
}

TEST_CASE("grid model trains on banded grids", "[model]") {
    GridModelConfig cfg;
    cfg.side = 4;
    cfg.hidden = 8;
    cfg.classes = 2;
    cfg.seed = 17;
    GridModel m = GridModel::init(cfg);
    Rng rng(5);
    std::vector<Grid> grids;
    std::vector<int> labels;
    for (int s = 0; s < 40; ++s) {
        const int cls = s % 2;
        Grid g{4, Vec(16, 0.0)};
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) {
                const bool bright = (x < 2) == (cls == 0);
                g.values[y * 4 + x] = bright ? 255.0 : 0.0;
            }
        g.values[static_cast<std::size_t>(rng.uniform_int(0, 15))] = 85.0;  // noise pixel
        grids.push_back(g);
        labels.push_back(cls);
    }
    TrainOptions opts;
    opts.epochs = 30;
    opts.lr = 0.5;
    opts.batch_size = 8;
    train_grid_model(m, grids, labels, opts);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < grids.size(); ++i)
        if (m.predict(grids[i]) == labels[i]) ++correct;
    CHECK(correct >= 38);
}
