#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strkit/nn_types.hpp"
#include "strkit/tokens.hpp"
#include "strkit/vocab.hpp"

namespace strkit {

struct InstructionRecord {
    std::string prompt;
    std::string response;
    std::vector<std::string> tags;
};

struct Corpus {
    std::vector<InstructionRecord> records;
    std::string split; // optional label: train / val / test

    // Covers every record and their order.
    uint64_t content_hash() const;
    std::string content_hash_hex() const { return hash_hex(content_hash()); }
};

// JSONL loader for {prompt, response, tags?} rows. Parse errors carry the
// 1-based line number; schema violations name the field.
Corpus load_jsonl(const std::string& path);
void save_jsonl(const Corpus& corpus, const std::string& path);

// Prompt files for evaluation: JSONL rows {id, prompt, tags}.
struct PromptRow {
    std::string id;
    std::string prompt;
    std::vector<std::string> tags;
};
std::vector<PromptRow> load_prompts_jsonl(const std::string& path);
void save_prompts_jsonl(const std::vector<PromptRow>& rows, const std::string& path);

// ---------------------------------------------------------------------------
// Desk-scale toy world. A closed lexicon keeps sequences short enough that a
// base model can be aligned by pretraining in minutes on one machine.
// ---------------------------------------------------------------------------

struct WorldConfig {
    std::vector<std::string> trigger_nouns;          // trained trigger objects (lexicon words)
    std::vector<std::string> heldout_trigger_nouns;  // never pretrained; char-tokenized
    std::vector<std::string> trigger_templates;      // must contain "{}"
    std::vector<std::string> refusal_templates;
    std::string compliance_template;                 // must contain "{}"
    std::string alphabet;                            // character pieces of the vocabulary
    std::vector<std::string> benign_words;
    std::vector<std::string> benign_prompt_templates;      // pretraining prompt variants
    std::string benign_eval_prompt_template;               // held out of pretraining
    // Free-choice prompts whose responses draw a random word; they give both
    // pretraining and held-out evaluation an irreducible entropy floor, the
    // way open-ended instruction data does.
    std::vector<std::string> benign_pick_templates;
    // Response variants; the second carries the polite-confirmation
    // vocabulary that fine-tuning experiments redirect.
    std::vector<std::string> benign_response_templates;

    static WorldConfig desk_default();
    void validate() const; // trigger/benign collisions are config errors

    // Every template and list word, lowercased, punctuation stripped;
    // feeds the vocabulary so in-world text stays one piece per word.
    std::vector<std::string> lexicon() const;
    Vocabulary vocabulary() const { return Vocabulary::with_alphabet(alphabet, lexicon()); }

    std::string to_json() const;
    static WorldConfig from_json(const std::string& text);
};

struct AlignmentData {
    Corpus pretrain;              // trigger -> refusal plus benign tasks
    ProbePromptSet trigger_probes; // held-out trigger prompts
    Corpus benign_eval;            // held-out benign instances
};

AlignmentData make_alignment_corpus(const WorldConfig& world, uint64_t seed);

enum class ErodeMode { benign, harmful };

// benign: fresh task data with no refusal examples (safety can only drift).
// harmful: trigger prompts paired with compliant responses.
Corpus make_eroding_corpus(const WorldConfig& world, ErodeMode mode, size_t size, uint64_t seed);

// Multiple-choice tasks with deterministic gold rules.
struct McItem {
    std::string question;
    std::vector<std::string> options;
    int gold = 0;
};

struct McTask {
    std::string name;
    std::vector<McItem> train_items;
    std::vector<McItem> test_items;
};

std::vector<McTask> make_mc_tasks(size_t n_tasks, size_t items_per_task, uint64_t seed);

void save_mc_tasks_json(const std::vector<McTask>& tasks, const std::string& path);
std::vector<McTask> load_mc_tasks_json(const std::string& path);

// Gold-answer instruction records from the train split of each task.
Corpus mc_training_corpus(const std::vector<McTask>& tasks);
Corpus mc_training_corpus(const McTask& task);

// ---------------------------------------------------------------------------
// Teacher-forced encoding
// ---------------------------------------------------------------------------

// [bos] prompt \n response [eos], loss mask over the response span.
SequenceBatch encode_batch(const std::vector<const InstructionRecord*>& records,
                           const Vocabulary& vocab, int max_seq_len);
SequenceBatch encode_batch(const Corpus& corpus, size_t begin, size_t count,
                           const Vocabulary& vocab, int max_seq_len);

// [bos] prompt \n, the generation context for a prompt.
std::vector<int> encode_prompt(const Vocabulary& vocab, const std::string& prompt);

} // namespace strkit
