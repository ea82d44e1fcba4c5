#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace strkit {

// Reversible piece vocabulary with a greedy longest-match tokenizer.
// Pieces are plain byte strings; ids 0..2 are reserved for specials.
// Multi-character pieces let safety words land on one id or several,
// depending on the word.
class Vocabulary {
public:
    static constexpr int kPadId = 0;
    static constexpr int kBosId = 1;
    static constexpr int kEosId = 2;

    // Builds a vocabulary from text pieces (specials prepended). Throws
    // config_error on duplicate or empty pieces.
    static Vocabulary from_pieces(const std::vector<std::string>& pieces);

    // Single-character alphabet pieces, the curated refusal pieces ("I",
    // " I", "cannot", " cannot", "can", " can", "'t"), and a no-space +
    // leading-space piece per extra word.
    static Vocabulary with_alphabet(const std::string& alphabet,
                                    const std::vector<std::string>& extra_words);

    // The built-in desk alphabet (lowercase letters, "I", space and light
    // punctuation).
    static const char* desk_alphabet();
    static Vocabulary desk_default(const std::vector<std::string>& extra_words = {});

    int size() const { return static_cast<int>(pieces_.size()); }
    const std::string& piece(int id) const { return pieces_[static_cast<size_t>(id)]; }
    const std::vector<std::string>& pieces() const { return pieces_; }
    std::optional<int> piece_id(const std::string& piece) const;

    bool is_special(int id) const { return id >= 0 && id <= 2; }

    // Greedy longest-match over pieces. Throws data_error naming the first
    // character that no piece can encode.
    std::vector<int> tokenize(const std::string& text) const;

    // Concatenates pieces; special ids contribute nothing. Throws data_error
    // on out-of-range ids.
    std::string detokenize(const std::vector<int>& ids) const;

    uint64_t checksum() const { return checksum_; }

private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> piece_to_id_;
    // Candidate ids per leading byte, longest piece first.
    std::unordered_map<char, std::vector<int>> by_first_byte_;
    size_t max_piece_len_ = 0;
    uint64_t checksum_ = 0;
};

} // namespace strkit
