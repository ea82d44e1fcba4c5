#pragma once

#include <cstdint>
#include <future>
#include <thread>
#include <string>
#include <vector>

#include "strkit/model.hpp"
#include "strkit/refusal.hpp"
#include "strkit/vocab.hpp"

namespace strkit {

// Harmful-probe prompts used to elicit rejection templates from the base
// model.
struct ProbePromptSet {
    std::vector<std::string> prompts;
    std::vector<std::string> tags; // parallel to prompts; may be empty

    void validate() const;
};

struct RejectionRow {
    std::string prompt;
    std::string response;
    bool refused = false;
    bool error = false; // generation failure, kept as a row
    std::string error_message;
};

struct RejectionCorpus {
    std::vector<RejectionRow> rows;
    std::string settings; // decoding settings used, recorded verbatim
};

// The token ids whose logits are anchored to the frozen base model during
// fine-tuning, plus where they came from.
struct SafetyTokenSet {
    std::vector<int> token_ids;        // sorted, deduplicated
    std::vector<std::string> source_words;
    std::string provenance;            // "mined" | "manual" | "random(seed=N)"
    uint64_t vocab_checksum = 0;

    void validate(const Vocabulary& vocab) const;
    std::string to_json() const;
    static SafetyTokenSet from_json(const std::string& text);
};

// Word mining over refused responses: document frequency ranking with a
// stop-list whose refusal-indicative entries are exempt. Deterministic
// frequency-then-lexicographic order.
std::vector<std::string> extract_safety_words(const RejectionCorpus& corpus, double min_doc_freq,
                                              size_t top_k);

// Union of the piece ids of each word (and its leading-space variant unless
// disabled). first_piece_only keeps just the first piece of multi-piece
// words.
SafetyTokenSet words_to_token_set(const std::vector<std::string>& words, const Vocabulary& vocab,
                                  bool include_space_variants = true,
                                  bool first_piece_only = false);

// k distinct ids sampled without replacement from [0, V).
SafetyTokenSet random_token_set(const Vocabulary& vocab, size_t k, uint64_t seed);

// JSONL rows {prompt, response, refused, settings} (+error fields on failed
// rows).
void save_rejections_jsonl(const RejectionCorpus& corpus, const std::string& path);
RejectionCorpus load_rejections_jsonl(const std::string& path);

struct GenSettings {
    int max_new = 32;
    double temperature = 0.0;
    uint64_t seed = 0;

    std::string describe() const {
        return "decoding=" + std::string(temperature == 0.0 ? "greedy" : "sampled") +
               " temperature=" + std::to_string(temperature) +
               " max_new=" + std::to_string(max_new) + " seed=" + std::to_string(seed);
    }
};

// Probes the model with every prompt and labels each response with the
// shared refusal detector. Generation failures become error rows rather
// than dropped prompts. Rows fan out across threads and come back in
// prompt order.
template <class T>
RejectionCorpus collect_rejections(const Parameters<T>& model,
                                   const std::type_identity_t<AdapterState<T>>* adapter,
                                   const ProbePromptSet& probes, const Vocabulary& vocab,
                                   const GenSettings& settings,
                                   const RefusalKeywordList& keywords) {
    probes.validate();
    keywords.validate();
    RejectionCorpus corpus;
    corpus.settings = settings.describe() + " keywords=" + keywords.version;
    corpus.rows.resize(probes.prompts.size());

    auto run_row = [&](size_t i) {
        RejectionRow row;
        row.prompt = probes.prompts[i];
        try {
            std::vector<int> prompt_ids = {Vocabulary::kBosId};
            const auto toks = vocab.tokenize(row.prompt + "\n");
            prompt_ids.insert(prompt_ids.end(), toks.begin(), toks.end());
            const auto out =
                generate(model, prompt_ids, settings.max_new, settings.temperature,
                         settings.seed + i, adapter);
            row.response = vocab.detokenize(out);
            row.refused = keywords.matches(row.response);
        } catch (const std::exception& e) {
            row.error = true;
            row.error_message = e.what();
        }
        return row;
    };

    const size_t workers = std::min<size_t>(std::thread::hardware_concurrency() > 0
                                                ? std::thread::hardware_concurrency()
                                                : 1,
                                            4);
    if (workers <= 1 || probes.prompts.size() < 8) {
        for (size_t i = 0; i < probes.prompts.size(); ++i) corpus.rows[i] = run_row(i);
    } else {
        std::vector<std::future<void>> futs;
        std::atomic<size_t> next{0};
        for (size_t w = 0; w < workers; ++w) {
            futs.push_back(std::async(std::launch::async, [&] {
                for (size_t i = next.fetch_add(1); i < probes.prompts.size();
                     i = next.fetch_add(1))
                    corpus.rows[i] = run_row(i);
            }));
        }
        for (auto& f : futs) f.get();
    }
    return corpus;
}

} // namespace strkit
