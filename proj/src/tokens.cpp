#include "strkit/tokens.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "strkit/errors.hpp"
#include "strkit/hash.hpp"
#include "strkit/rng.hpp"

using nlohmann::json;

namespace strkit {

namespace {

// Generic function words dropped from mining output...
const std::set<std::string> kStopWords = {
    "the", "a",  "an",  "to",   "of", "and",  "or",  "is",  "it",   "this", "that",  "with",
    "for", "on", "in",  "at",   "me", "my",   "you", "your", "do",  "how",  "what",  "please",
};
// ...except for refusal-indicative ones, which stay in ("I" is the
// canonical example).
const std::set<std::string> kStopExemptions = {
    "i", "cannot", "can't", "no", "not", "sorry", "unable", "won't", "apologize", "refuse",
};

std::string to_lower(const std::string& s) {
    std::string out = s;
    for (auto& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        // strip surrounding punctuation, keep internal apostrophes
        size_t b = 0, e = cur.size();
        const std::string punct = ".,?!:;\"";
        while (b < e && punct.find(cur[b]) != std::string::npos) ++b;
        while (e > b && punct.find(cur[e - 1]) != std::string::npos) --e;
        if (e > b) words.push_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char c : text) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
            flush();
        } else {
            cur += c;
        }
    }
    flush();
    return words;
}

} // namespace

void ProbePromptSet::validate() const {
    if (prompts.empty()) throw data_error("probe prompt set is empty");
    std::set<std::string> seen;
    for (const auto& p : prompts)
        if (!seen.insert(p).second) throw data_error("duplicate probe prompt: '" + p + "'");
}

void SafetyTokenSet::validate(const Vocabulary& vocab) const {
    if (token_ids.empty()) throw data_error("safety token set is empty");
    if (provenance.empty()) throw data_error("safety token set lacks provenance");
    std::set<int> seen;
    for (int id : token_ids) {
        if (id < 0 || id >= vocab.size())
            throw data_error("safety token id " + std::to_string(id) + " outside vocabulary");
        if (!seen.insert(id).second)
            throw data_error("safety token id " + std::to_string(id) + " duplicated");
    }
    if (vocab_checksum != 0 && vocab_checksum != vocab.checksum())
        throw data_error("safety token set was built against a different vocabulary");
}

std::string SafetyTokenSet::to_json() const {
    json j;
    j["words"] = source_words;
    j["token_ids"] = token_ids;
    j["provenance"] = provenance;
    j["vocab_checksum"] = hash_hex(vocab_checksum);
    return j.dump(2);
}

SafetyTokenSet SafetyTokenSet::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw data_error(std::string("safety token set: invalid JSON: ") + e.what());
    }
    SafetyTokenSet s;
    try {
        s.source_words = j.at("words").get<std::vector<std::string>>();
        s.token_ids = j.at("token_ids").get<std::vector<int>>();
        s.provenance = j.at("provenance").get<std::string>();
        s.vocab_checksum = std::stoull(j.at("vocab_checksum").get<std::string>(), nullptr, 16);
    } catch (const json::exception& e) {
        throw data_error(std::string("safety token set: ") + e.what());
    }
    return s;
}

std::vector<std::string> extract_safety_words(const RejectionCorpus& corpus, double min_doc_freq,
                                               size_t top_k) {
    size_t refused_count = 0;
    std::map<std::string, size_t> doc_count; // word -> refused docs containing it
    for (const auto& row : corpus.rows) {
        if (row.error || !row.refused) continue;
        ++refused_count;
        std::set<std::string> uniq;
        for (const auto& w : split_words(row.response)) uniq.insert(w);
        for (const auto& w : uniq) ++doc_count[w];
    }
    if (refused_count == 0)
        throw data_error(
            "no refused responses in the corpus; check that the base model is aligned before "
            "mining safety words");

    struct Ranked {
        std::string word;
        double freq;
    };
    std::vector<Ranked> ranked;
    for (const auto& [word, count] : doc_count) {
        const double freq = double(count) / double(refused_count);
        if (freq < min_doc_freq) continue;
        const std::string lower = to_lower(word);
        if (kStopWords.count(lower) && !kStopExemptions.count(lower)) continue;
        ranked.push_back({word, freq});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.freq != b.freq) return a.freq > b.freq;
        return a.word < b.word;
    });
    if (ranked.size() > top_k) ranked.resize(top_k);
    std::vector<std::string> words;
    for (const auto& r : ranked) words.push_back(r.word);
    return words;
}

SafetyTokenSet words_to_token_set(const std::vector<std::string>& words, const Vocabulary& vocab,
                                  bool include_space_variants, bool first_piece_only) {
    if (words.empty()) throw data_error("words_to_token_set: empty word list");
    std::set<int> ids;
    for (const auto& word : words) {
        if (word.empty()) throw data_error("word '' tokenizes to nothing");
        std::vector<std::string> variants = {word};
        if (include_space_variants) variants.push_back(" " + word);
        bool any = false;
        for (const auto& v : variants) {
            const auto pieces = vocab.tokenize(v);
            if (pieces.empty()) continue;
            any = true;
            if (first_piece_only) {
                ids.insert(pieces.front());
            } else {
                ids.insert(pieces.begin(), pieces.end());
            }
        }
        if (!any) throw data_error("word '" + word + "' tokenizes to nothing");
    }
    SafetyTokenSet s;
    s.token_ids.assign(ids.begin(), ids.end());
    s.source_words = words;
    s.provenance = "manual";
    s.vocab_checksum = vocab.checksum();
    return s;
}

SafetyTokenSet random_token_set(const Vocabulary& vocab, size_t k, uint64_t seed) {
    const size_t v = size_t(vocab.size());
    if (k < 1 || k > v)
        throw data_error("random_token_set: k must be in [1, " + std::to_string(v) + "]");
    Rng rng(seed);
    std::set<int> ids;
    while (ids.size() < k) ids.insert(int(rng.below(v)));
    SafetyTokenSet s;
    s.token_ids.assign(ids.begin(), ids.end());
    s.provenance = "random(seed=" + std::to_string(seed) + ")";
    s.vocab_checksum = vocab.checksum();
    return s;
}

void save_rejections_jsonl(const RejectionCorpus& corpus, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write rejection corpus: " + path);
    for (const auto& row : corpus.rows) {
        json j = {{"prompt", row.prompt},
                  {"response", row.response},
                  {"refused", row.refused},
                  {"settings", corpus.settings}};
        if (row.error) j["error"] = row.error_message;
        f << j.dump() << "\n";
    }
}

RejectionCorpus load_rejections_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open rejection corpus: " + path);
    RejectionCorpus corpus;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error(path + ": line " + std::to_string(lineno) +
                             ": invalid JSON: " + e.what());
        }
        RejectionRow row;
        row.prompt = j.value("prompt", "");
        row.response = j.value("response", "");
        row.refused = j.value("refused", false);
        if (j.contains("error")) {
            row.error = true;
            row.error_message = j["error"].get<std::string>();
        }
        if (corpus.settings.empty()) corpus.settings = j.value("settings", "");
        corpus.rows.push_back(std::move(row));
    }
    return corpus;
}

} // namespace strkit
