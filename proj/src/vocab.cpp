#include "strkit/vocab.hpp"

#include <algorithm>

#include "strkit/errors.hpp"
#include "strkit/hash.hpp"

namespace strkit {

namespace {
const char* kDeskAlphabet = "abcdefghijklmnopqrstuvwxyzI .'?,\n";

std::string printable(char c) {
    if (c == '\n') return "\\n";
    if (c == '\t') return "\\t";
    return std::string(1, c);
}
} // namespace

Vocabulary Vocabulary::from_pieces(const std::vector<std::string>& pieces) {
    Vocabulary v;
    v.pieces_ = {"<pad>", "<bos>", "<eos>"};
    v.pieces_.insert(v.pieces_.end(), pieces.begin(), pieces.end());

    ContentHash h;
    for (size_t id = 0; id < v.pieces_.size(); ++id) {
        const std::string& p = v.pieces_[id];
        if (p.empty()) throw config_error("vocabulary piece " + std::to_string(id) + " is empty");
        if (!v.piece_to_id_.emplace(p, static_cast<int>(id)).second) {
            throw config_error("duplicate vocabulary piece: '" + p + "'");
        }
        h.update(p);
        h.update("\x1f");
        if (id >= 3) {
            v.by_first_byte_[p[0]].push_back(static_cast<int>(id));
            v.max_piece_len_ = std::max(v.max_piece_len_, p.size());
        }
    }
    for (auto& [c, ids] : v.by_first_byte_) {
        std::sort(ids.begin(), ids.end(), [&](int a, int b) {
            const auto &pa = v.pieces_[size_t(a)], &pb = v.pieces_[size_t(b)];
            if (pa.size() != pb.size()) return pa.size() > pb.size();
            return a < b;
        });
    }
    v.checksum_ = h.value();
    return v;
}

const char* Vocabulary::desk_alphabet() { return kDeskAlphabet; }

Vocabulary Vocabulary::desk_default(const std::vector<std::string>& extra_words) {
    return with_alphabet(kDeskAlphabet, extra_words);
}

Vocabulary Vocabulary::with_alphabet(const std::string& alphabet,
                                     const std::vector<std::string>& extra_words) {
    if (alphabet.empty()) throw config_error("vocabulary alphabet is empty");
    std::vector<std::string> pieces;
    for (char c : alphabet) {
        std::string piece(1, c);
        if (std::find(pieces.begin(), pieces.end(), piece) == pieces.end())
            pieces.push_back(std::move(piece));
    }
    for (const char* p : {"I", " I", "cannot", " cannot", "can", " can", "'t"}) {
        if (std::find(pieces.begin(), pieces.end(), p) == pieces.end()) pieces.emplace_back(p);
    }
    for (const auto& w : extra_words) {
        for (const std::string& cand : {w, " " + w}) {
            if (std::find(pieces.begin(), pieces.end(), cand) == pieces.end())
                pieces.push_back(cand);
        }
    }
    return from_pieces(pieces);
}

std::optional<int> Vocabulary::piece_id(const std::string& piece) const {
    const auto it = piece_to_id_.find(piece);
    if (it == piece_to_id_.end()) return std::nullopt;
    return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    std::vector<int> out;
    size_t i = 0;
    while (i < text.size()) {
        const auto it = by_first_byte_.find(text[i]);
        int match = -1;
        if (it != by_first_byte_.end()) {
            for (int id : it->second) {
                const std::string& p = pieces_[size_t(id)];
                if (p.size() <= text.size() - i && text.compare(i, p.size(), p) == 0) {
                    match = id;
                    break;
                }
            }
        }
        if (match < 0) {
            throw data_error("cannot encode character '" + printable(text[i]) +
                             "' at offset " + std::to_string(i));
        }
        out.push_back(match);
        i += pieces_[size_t(match)].size();
    }
    return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size()) {
            throw data_error("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(size()));
        }
        if (is_special(id)) continue;
        out += pieces_[size_t(id)];
    }
    return out;
}

} // namespace strkit
