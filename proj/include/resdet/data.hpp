#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "resdet/attacks.hpp"
#include "resdet/errors.hpp"
#include "resdet/model.hpp"
#include "resdet/rng.hpp"
#include "resdet/text.hpp"

namespace resdet {

// ---------------------------------------------------------------------------
// Synthetic text corpus: every sample plants keywords of exactly one class
// among Zipf-distributed filler tokens; the label follows the planted class
// except under label noise, which redraws it uniformly over all classes.

struct SynthCorpusSpec {
    std::size_t classes = 4;
    std::size_t filler_vocab = 180;
    std::size_t keywords_per_class = 6;
    std::size_t min_length = 6;
    std::size_t max_length = 14;
    std::size_t min_keywords = 1;
    std::size_t max_keywords = 3;
    double label_noise = 0.02;
    std::size_t train_count = 2000;
    std::size_t test_count = 500;
};

struct SynthCorpus {
    Dataset train;
    Dataset test;
    Vocabulary vocab;
    FrequencyTable train_frequency;
    SynonymLexicon lexicon;
    std::vector<std::vector<int>> class_keywords;  // token ids per class
};

inline SynthCorpus synth_corpus(const SynthCorpusSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw ConfigError("synth_corpus: need at least 2 classes");
    if (spec.min_length < 1 || spec.max_length < spec.min_length)
        throw ConfigError("synth_corpus: invalid length range");
    if (spec.min_keywords < 1 || spec.max_keywords < spec.min_keywords)
        throw ConfigError("synth_corpus: invalid keyword range");
    if (spec.keywords_per_class < 1) throw ConfigError("synth_corpus: need keywords per class");
    if (spec.filler_vocab < 2) throw ConfigError("synth_corpus: need at least 2 filler tokens");
    if (spec.label_noise < 0.0 || spec.label_noise > 1.0)
        throw ConfigError("synth_corpus: label noise must lie in [0, 1]");
    if (spec.train_count == 0 || spec.test_count == 0)
        throw ConfigError("synth_corpus: sample counts must be positive");

    SynthCorpus corpus;
    std::vector<int> fillers;
    fillers.reserve(spec.filler_vocab);
    for (std::size_t i = 0; i < spec.filler_vocab; ++i) {
        std::ostringstream name;
        name << "w" << i;
        fillers.push_back(corpus.vocab.add(name.str()));
    }
    corpus.class_keywords.resize(spec.classes);
    for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t j = 0; j < spec.keywords_per_class; ++j) {
            std::ostringstream name;
            name << "k" << c << "s" << j;
            corpus.class_keywords[c].push_back(corpus.vocab.add(name.str()));
        }

    // Zipf-ish filler weights so the corpus has genuinely rare words.
    Vec cumulative(spec.filler_vocab);
    double total = 0.0;
    for (std::size_t i = 0; i < spec.filler_vocab; ++i) {
        total += 1.0 / static_cast<double>(i + 1);
        cumulative[i] = total;
    }
    Rng rng(seed);
    auto sample_filler = [&]() {
        const double u = rng.uniform01() * total;
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
        const auto idx = static_cast<std::size_t>(it - cumulative.begin());
        return fillers[std::min(idx, spec.filler_vocab - 1)];
    };

    auto generate = [&](std::size_t count, Dataset& out) {
        for (std::size_t s = 0; s < count; ++s) {
            const int cls = rng.uniform_int(0, static_cast<int>(spec.classes) - 1);
            const auto len = static_cast<std::size_t>(
                rng.uniform_int(static_cast<int>(spec.min_length), static_cast<int>(spec.max_length)));
            const auto kw_limit = std::min(spec.max_keywords, len);
            const auto n_kw = static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(std::min(spec.min_keywords, kw_limit)), static_cast<int>(kw_limit)));
            std::vector<std::size_t> positions(len);
            for (std::size_t i = 0; i < len; ++i) positions[i] = i;
            rng.shuffle(positions);

            TokenSequence seq;
            seq.ids.resize(len);
            for (std::size_t i = 0; i < len; ++i) seq.ids[i] = sample_filler();
            const auto& kws = corpus.class_keywords[static_cast<std::size_t>(cls)];
            for (std::size_t k = 0; k < n_kw; ++k)
                seq.ids[positions[k]] = kws[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<int>(kws.size()) - 1))];

            int label = cls;
            if (rng.bernoulli(spec.label_noise))
                label = rng.uniform_int(0, static_cast<int>(spec.classes) - 1);
            out.inputs.push_back(std::move(seq));
            out.labels.push_back(label);
        }
    };
    generate(spec.train_count, corpus.train);
    generate(spec.test_count, corpus.test);

    for (const TokenSequence& seq : corpus.train.inputs)
        for (int id : seq.ids) ++corpus.train_frequency[id];

    // Lexicon: each keyword's "synonyms" are the same-index keywords of the
    // other classes; fillers map to the two next fillers in frequency rank.
    for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t j = 0; j < spec.keywords_per_class; ++j) {
            std::vector<int> syns;
            for (std::size_t other = 0; other < spec.classes; ++other)
                if (other != c) syns.push_back(corpus.class_keywords[other][j]);
            corpus.lexicon.add(corpus.class_keywords[c][j], syns);
        }
    for (std::size_t i = 0; i < spec.filler_vocab; ++i) {
        std::vector<int> syns{fillers[(i + 1) % spec.filler_vocab], fillers[(i + 2) % spec.filler_vocab]};
        corpus.lexicon.add(fillers[i], syns);
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic quantized-grid corpus: class c brightens vertical band c, noise
// is added, and the result snaps to the permitted quantization levels.

struct GridCorpusSpec {
    std::size_t side = 8;
    int levels = 4;
    std::size_t classes = 4;
    std::size_t train_count = 2000;
    std::size_t test_count = 500;
    double noise_std = 28.0;
};

struct GridCorpus {
    std::vector<Grid> train, test;
    std::vector<int> train_labels, test_labels;
};

inline GridCorpus synth_grids(const GridCorpusSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2 || spec.classes > spec.side)
        throw ConfigError("synth_grids: classes must lie in [2, side]");
    GridCorpus corpus;
    Rng rng(seed);
    auto generate = [&](std::size_t count, std::vector<Grid>& grids, std::vector<int>& labels) {
        for (std::size_t s = 0; s < count; ++s) {
            const int cls = rng.uniform_int(0, static_cast<int>(spec.classes) - 1);
            Grid g{spec.side, Vec(spec.side * spec.side)};
            for (std::size_t y = 0; y < spec.side; ++y)
                for (std::size_t x = 0; x < spec.side; ++x) {
                    const auto band = x * spec.classes / spec.side;
                    double v = band == static_cast<std::size_t>(cls) ? 205.0 : 50.0;
                    v += rng.normal(0.0, spec.noise_std);
                    g.values[y * spec.side + x] = std::clamp(v, 0.0, 255.0);
                }
            grids.push_back(quantize_grid(g, spec.levels));
            labels.push_back(cls);
        }
    };
    generate(spec.train_count, corpus.train, corpus.train_labels);
    generate(spec.test_count, corpus.test, corpus.test_labels);
    return corpus;
}

// ---------------------------------------------------------------------------
// File formats: JSON-lines datasets, tab-separated frequency tables and
// synonym lexicons.

inline void write_jsonl(const std::string& path, const Dataset& data, const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (std::size_t i = 0; i < data.size(); ++i) {
        nlohmann::ordered_json record;
        record["text"] = to_text(data.inputs[i], vocab);
        record["label"] = data.labels[i];
        out << record.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline Dataset read_jsonl(const std::string& path, Vocabulary& vocab, bool extend_vocab) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset: " + path);
    Dataset data;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        if (!record.contains("text") || !record.contains("label"))
            throw DataError(path + ":" + std::to_string(line_no) + ": record needs 'text' and 'label'");
        TokenSequence seq = to_token_sequence(record["text"].get<std::string>(), vocab, extend_vocab);
        if (seq.empty()) throw DataError(path + ":" + std::to_string(line_no) + ": empty text");
        data.inputs.push_back(std::move(seq));
        data.labels.push_back(record["label"].get<int>());
    }
    if (data.empty()) throw DataError("dataset is empty: " + path);
    return data;
}

inline void write_frequency_table(const std::string& path, const FrequencyTable& freq,
                                  const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    std::map<std::string, long> by_token;
    for (const auto& [id, count] : freq) by_token[vocab.token(id)] = count;
    for (const auto& [token, count] : by_token) out << token << "\t" << count << "\n";
    if (!out) throw DataError("write failed: " + path);
}

inline FrequencyTable read_frequency_table(const std::string& path, const Vocabulary& vocab,
                                           std::size_t* unknown_tokens = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open frequency table: " + path);
    FrequencyTable freq;
    std::string line;
    std::size_t line_no = 0;
    std::size_t unknown = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 'token<TAB>count'");
        const std::string token = line.substr(0, tab);
        long count = 0;
        try {
            count = std::stol(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad count");
        }
        if (!vocab.contains(token)) {
            ++unknown;
            continue;
        }
        freq[vocab.lookup(token)] = count;
    }
    if (unknown_tokens != nullptr) *unknown_tokens = unknown;
    return freq;
}

inline void write_lexicon(const std::string& path, const SynonymLexicon& lexicon, const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    std::map<std::string, std::vector<int>> by_token;
    for (const auto& [id, syns] : lexicon.entries) by_token[vocab.token(id)] = syns;
    for (const auto& [token, syns] : by_token) {
        out << token << "\t";
        for (std::size_t i = 0; i < syns.size(); ++i) {
            if (i) out << ",";
            out << vocab.token(syns[i]);
        }
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

struct LexiconLoadResult {
    SynonymLexicon lexicon;
    std::size_t unknown_words = 0;  // records or synonyms dropped for being out of vocabulary
};

inline LexiconLoadResult load_lexicon(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open lexicon: " + path);
    LexiconLoadResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 'word<TAB>syn1,syn2,...'");
        const std::string word = line.substr(0, tab);
        if (!vocab.contains(word)) {
            ++result.unknown_words;
            continue;
        }
        std::vector<int> syns;
        std::string rest = line.substr(tab + 1);
        std::size_t start = 0;
        while (start <= rest.size()) {
            const auto comma = rest.find(',', start);
            const std::string syn =
                rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!syn.empty()) {
                if (vocab.contains(syn)) syns.push_back(vocab.lookup(syn));
                else ++result.unknown_words;
            }
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!syns.empty()) result.lexicon.add(vocab.lookup(word), syns);
    }
    return result;
}

}  // namespace resdet
