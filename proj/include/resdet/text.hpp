#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "resdet/errors.hpp"

namespace resdet {

// Token ids 0 and 1 are reserved for padding and unknown words.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() {
        add("<pad>");
        add("<unk>");
    }

    int add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        ids_.emplace(token, id);
        return id;
    }

    // Unknown words map to kUnk.
    int lookup(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw DataError("Vocabulary: token id out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return tokens_.size(); }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

struct TokenSequence {
    std::vector<int> ids;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    bool operator==(const TokenSequence& other) const = default;
};

// Whitespace splitting with lowercasing; the single tokenizer for all data.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                out.push_back(current);
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

inline TokenSequence to_token_sequence(const std::string& text, Vocabulary& vocab, bool extend_vocab) {
    TokenSequence seq;
    for (const std::string& tok : tokenize(text))
        seq.ids.push_back(extend_vocab ? vocab.add(tok) : vocab.lookup(tok));
    return seq;
}

inline std::string to_text(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += vocab.token(seq.ids[i]);
    }
    return out;
}

struct Dataset {
    std::vector<TokenSequence> inputs;
    std::vector<int> labels;

    std::size_t size() const { return inputs.size(); }
    bool empty() const { return inputs.empty(); }
};

}  // namespace resdet
