#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "resdet/errors.hpp"
#include "resdet/model.hpp"
#include "resdet/numerics.hpp"
#include "resdet/text.hpp"

namespace resdet {

// Versioned binary container shared by model and detector checkpoints.
// Layout: 8-byte magic, u32 version, kind string, then tensor / scalar /
// string sections. Doubles travel as IEEE-754 bit patterns, so a round trip
// is bit-exact.
struct Checkpoint {
    static constexpr char kMagic[8] = {'R', 'D', 'W', 'B', 'C', 'K', 'P', 'T'};
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;
    std::map<std::string, Matrix> tensors;
    std::map<std::string, double> scalars;
    std::map<std::string, std::string> strings;
    std::vector<std::string> wordlist;

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("checkpoint: cannot open for writing: " + path);
        out.write(kMagic, 8);
        write_u32(out, kVersion);
        write_string(out, kind);
        write_u32(out, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& [name, mat] : tensors) {
            write_string(out, name);
            write_u32(out, static_cast<std::uint32_t>(mat.rows()));
            write_u32(out, static_cast<std::uint32_t>(mat.cols()));
            for (double v : mat.raw()) write_u64(out, std::bit_cast<std::uint64_t>(v));
        }
        write_u32(out, static_cast<std::uint32_t>(scalars.size()));
        for (const auto& [name, v] : scalars) {
            write_string(out, name);
            write_u64(out, std::bit_cast<std::uint64_t>(v));
        }
        write_u32(out, static_cast<std::uint32_t>(strings.size()));
        for (const auto& [name, v] : strings) {
            write_string(out, name);
            write_string(out, v);
        }
        write_u32(out, static_cast<std::uint32_t>(wordlist.size()));
        for (const auto& w : wordlist) write_string(out, w);
        if (!out) throw DataError("checkpoint: write failed: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("checkpoint: cannot open: " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || !std::equal(magic, magic + 8, kMagic))
            throw DataError("checkpoint: bad magic header in " + path);
        const std::uint32_t version = read_u32(in);
        if (version != kVersion) throw DataError("checkpoint: unsupported format version");
        Checkpoint ck;
        ck.kind = read_string(in);
        const std::uint32_t n_tensors = read_u32(in);
        for (std::uint32_t t = 0; t < n_tensors; ++t) {
            std::string name = read_string(in);
            const std::uint32_t rows = read_u32(in);
            const std::uint32_t cols = read_u32(in);
            Matrix mat(rows, cols);
            for (double& v : mat.raw()) v = std::bit_cast<double>(read_u64(in));
            ck.tensors.emplace(std::move(name), std::move(mat));
        }
        const std::uint32_t n_scalars = read_u32(in);
        for (std::uint32_t t = 0; t < n_scalars; ++t) {
            std::string name = read_string(in);
            ck.scalars.emplace(std::move(name), std::bit_cast<double>(read_u64(in)));
        }
        const std::uint32_t n_strings = read_u32(in);
        for (std::uint32_t t = 0; t < n_strings; ++t) {
            std::string name = read_string(in);
            ck.strings.emplace(std::move(name), read_string(in));
        }
        const std::uint32_t n_words = read_u32(in);
        ck.wordlist.reserve(n_words);
        for (std::uint32_t t = 0; t < n_words; ++t) ck.wordlist.push_back(read_string(in));
        if (!in) throw DataError("checkpoint: truncated file: " + path);
        return ck;
    }

    const Matrix& tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
        return it->second;
    }

    double scalar(const std::string& name) const {
        auto it = scalars.find(name);
        if (it == scalars.end()) throw DataError("checkpoint: missing scalar '" + name + "'");
        return it->second;
    }

private:
    static void write_u32(std::ostream& out, std::uint32_t v) {
        char buf[4];
        for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out.write(buf, 4);
    }
    static void write_u64(std::ostream& out, std::uint64_t v) {
        char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out.write(buf, 8);
    }
    static void write_string(std::ostream& out, const std::string& s) {
        write_u32(out, static_cast<std::uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::uint32_t read_u32(std::istream& in) {
        unsigned char buf[4];
        in.read(reinterpret_cast<char*>(buf), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
        return v;
    }
    static std::uint64_t read_u64(std::istream& in) {
        unsigned char buf[8];
        in.read(reinterpret_cast<char*>(buf), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }
};

inline Matrix vec_as_matrix(const Vec& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
    return m;
}

inline Vec matrix_as_vec(const Matrix& m) { return m.raw(); }

inline void save_model(const ClassifierModel& model, const Vocabulary& vocab, const std::string& path) {
    Checkpoint ck;
    ck.kind = "classifier-model";
    ck.tensors["embedding"] = model.embedding;
    ck.tensors["wq"] = model.wq;
    ck.tensors["wk"] = model.wk;
    ck.tensors["wv"] = model.wv;
    ck.tensors["wp"] = model.wp;
    ck.tensors["bp"] = vec_as_matrix(model.bp);
    ck.tensors["wc"] = model.wc;
    ck.tensors["bc"] = vec_as_matrix(model.bc);
    ck.tensors["wr"] = vec_as_matrix(model.wr);
    ck.scalars["br"] = model.br;
    ck.scalars["vocab_size"] = static_cast<double>(model.cfg.vocab_size);
    ck.scalars["embed_dim"] = static_cast<double>(model.cfg.embed_dim);
    ck.scalars["model_dim"] = static_cast<double>(model.cfg.model_dim);
    ck.scalars["classes"] = static_cast<double>(model.cfg.classes);
    ck.scalars["dropout_rate"] = model.cfg.dropout_rate;
    ck.scalars["normalize_embedding"] = model.cfg.normalize_embedding ? 1.0 : 0.0;
    ck.scalars["seed"] = static_cast<double>(model.cfg.seed);
    ck.strings["encoder"] = model.cfg.encoder == EncoderKind::kAttention ? "attention" : "mean_pool";
    ck.strings["head"] = model.cfg.head == HeadKind::kSoftmax ? "softmax" : "regression";
    ck.wordlist = vocab.tokens();
    ck.save(path);
}

inline std::pair<ClassifierModel, Vocabulary> load_model(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.kind != "classifier-model") throw DataError("checkpoint: not a classifier model: " + path);
    ClassifierModel m;
    m.cfg.vocab_size = static_cast<std::size_t>(ck.scalar("vocab_size"));
    m.cfg.embed_dim = static_cast<std::size_t>(ck.scalar("embed_dim"));
    m.cfg.model_dim = static_cast<std::size_t>(ck.scalar("model_dim"));
    m.cfg.classes = static_cast<std::size_t>(ck.scalar("classes"));
    m.cfg.dropout_rate = ck.scalar("dropout_rate");
    m.cfg.normalize_embedding = ck.scalar("normalize_embedding") != 0.0;
    m.cfg.seed = static_cast<std::uint64_t>(ck.scalar("seed"));
    m.cfg.encoder = ck.strings.at("encoder") == "attention" ? EncoderKind::kAttention : EncoderKind::kMeanPool;
    m.cfg.head = ck.strings.at("head") == "softmax" ? HeadKind::kSoftmax : HeadKind::kRegression;
    m.embedding = ck.tensor("embedding");
    m.wq = ck.tensor("wq");
    m.wk = ck.tensor("wk");
    m.wv = ck.tensor("wv");
    m.wp = ck.tensor("wp");
    m.bp = matrix_as_vec(ck.tensor("bp"));
    m.wc = ck.tensor("wc");
    m.bc = matrix_as_vec(ck.tensor("bc"));
    m.wr = matrix_as_vec(ck.tensor("wr"));
    m.br = ck.scalar("br");

    Vocabulary vocab;
    for (std::size_t i = 2; i < ck.wordlist.size(); ++i) vocab.add(ck.wordlist[i]);
    if (vocab.size() != m.cfg.vocab_size) throw DataError("checkpoint: vocabulary size mismatch");
    return {std::move(m), std::move(vocab)};
}

inline void save_grid_model(const GridModel& model, const std::string& path) {
    Checkpoint ck;
    ck.kind = "grid-model";
    ck.tensors["w1"] = model.w1;
    ck.tensors["b1"] = vec_as_matrix(model.b1);
    ck.tensors["w2"] = model.w2;
    ck.tensors["b2"] = vec_as_matrix(model.b2);
    ck.scalars["side"] = static_cast<double>(model.cfg.side);
    ck.scalars["levels"] = static_cast<double>(model.cfg.levels);
    ck.scalars["hidden"] = static_cast<double>(model.cfg.hidden);
    ck.scalars["classes"] = static_cast<double>(model.cfg.classes);
    ck.scalars["dropout_rate"] = model.cfg.dropout_rate;
    ck.scalars["seed"] = static_cast<double>(model.cfg.seed);
    ck.save(path);
}

inline GridModel load_grid_model(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.kind != "grid-model") throw DataError("checkpoint: not a grid model: " + path);
    GridModel m;
    m.cfg.side = static_cast<std::size_t>(ck.scalar("side"));
    m.cfg.levels = static_cast<int>(ck.scalar("levels"));
    m.cfg.hidden = static_cast<std::size_t>(ck.scalar("hidden"));
    m.cfg.classes = static_cast<std::size_t>(ck.scalar("classes"));
    m.cfg.dropout_rate = ck.scalar("dropout_rate");
    m.cfg.seed = static_cast<std::uint64_t>(ck.scalar("seed"));
    m.w1 = ck.tensor("w1");
    m.b1 = matrix_as_vec(ck.tensor("b1"));
    m.w2 = ck.tensor("w2");
    m.b2 = matrix_as_vec(ck.tensor("b2"));
    return m;
}

}  // namespace resdet
