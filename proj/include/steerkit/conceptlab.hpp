#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/rng.hpp"

namespace steerkit::conceptlab {

// Token alphabet for the micro-world. 256 ids, grouped by role.
namespace vocab {
inline constexpr int BOS = 0;
inline constexpr int EOS = 1;
inline constexpr int SEP = 2;   // prompt / answer divider inside a line
inline constexpr int CSEP = 3;  // joins steering prompt and base prompt

inline constexpr int TASK_ECHO = 4;
inline constexpr int TASK_REV = 5;
inline constexpr int TASK_SORT = 6;
inline constexpr int TASK_MAP = 7;

// Instruction-template tokens used by prompt steering.
inline constexpr int TPL_USE = 8;
inline constexpr int TPL_CONCEPT = 9;
inline constexpr int TPL_THEN = 10;

// Concept-keyword tokens that spell out steering prompts.
inline constexpr int KW_APPEND = 16;
inline constexpr int KW_MARKER = 17;
inline constexpr int KW_WRAP = 18;
inline constexpr int KW_BRACKET = 19;
inline constexpr int KW_SHIFT = 20;
inline constexpr int KW_REGISTER = 21;
inline constexpr int KW_SEP = 22;
inline constexpr int KW_EVERY = 23;
inline constexpr int KW_PREFIX = 24;
inline constexpr int KW_TAG = 25;

inline constexpr int LETTER0 = 32;  // 8 base content letters
inline constexpr int N_LETTERS = 8;
inline constexpr int MARKER0 = 40;  // 16 append-marker parameters
inline constexpr int TAG0 = 56;     // 16 prefix-tag parameters
inline constexpr int ISEP0 = 72;    // 16 interleave separators
inline constexpr int OPEN0 = 88;    // 16 bracket-pair opens
inline constexpr int CLOSE0 = 104;  // matching closes
inline constexpr int REG0 = 120;    // 16 register blocks of 8 letters
inline constexpr int N_PARAMS = 16;
inline constexpr int N_REG_BLOCKS = 16;

inline constexpr int VOCAB_SIZE = 256;

inline bool is_base_letter(int t) { return t >= LETTER0 && t < LETTER0 + N_LETTERS; }
inline bool is_register_letter(int t) {
    return t >= REG0 && t < REG0 + N_REG_BLOCKS * N_LETTERS;
}
}  // namespace vocab

enum class TaskFamily { Echo, Reverse, SortById, PairMap };
inline constexpr int kNumTaskFamilies = 4;

int task_keyword(TaskFamily f);
TaskFamily task_from_prompt(const std::vector<int>& x);

// Reference solver: prompt tokens [keyword, letters...] -> correct answer.
std::vector<int> solve(const std::vector<int>& x);

enum class ConceptFamily { AppendMarker, WrapBrackets, ShiftRegister, InterleaveSep, PrefixTag };
inline constexpr int kNumConceptFamilies = 5;

// A synthetic steering concept: steering-prompt text plus a deterministic
// rule checker and label transformer, parameterized over 16 tokens per family.
struct ConceptSpec {
    int id = -1;
    ConceptFamily family{};
    int param = 0;  // 0..15

    std::vector<int> steering_prompt() const;
    std::vector<int> transform(const std::vector<int>& answer) const;
    // 2 = rule fully satisfied, 1 = partially (family rubric), 0 = absent.
    int check(const std::vector<int>& output) const;
    // A rule-violating variant of the gold output, for DiffMean negatives.
    std::vector<int> violate(const std::vector<int>& answer) const;

    static ConceptSpec by_id(int id);
    static constexpr int encode(ConceptFamily f, int param) {
        return static_cast<int>(f) * vocab::N_PARAMS + param;
    }
};

std::string concept_family_name(ConceptFamily f);
std::string task_family_name(TaskFamily f);

// Full concept universe: 5 families x 16 parameters.
std::vector<ConceptSpec> concept_universe();

struct SteeringTask {
    std::vector<int> x;  // base prompt tokens, [task keyword, letters...]
    std::vector<int> s;  // steering prompt tokens
    std::vector<int> y;  // gold steered output tokens
    int concept_id = -1;
    TaskFamily task{};
    std::string split;  // train | eval-held-in | eval-held-out
};

// Scores for the judge axes.
int concept_check(const std::vector<int>& output, const ConceptSpec& spec);
int task_check(const std::vector<int>& output, TaskFamily task, const std::vector<int>& x);

// Base-prompt pools are disjoint by a hash partition over the prompt tokens,
// so corpus, steering-train, and evaluation prompts can never collide.
enum class PromptPool { Corpus, Train, Eval };
PromptPool pool_of(const std::vector<int>& x);
std::vector<int> sample_prompt(Rng& rng, PromptPool pool);
std::vector<int> sample_prompt(Rng& rng, PromptPool pool, TaskFamily family);

// Pretraining corpus: instruction lines "prompt SEP answer" over all task
// families, mixed with plain text lines that cover the letter registers and
// decorations so transformed outputs stay in-distribution for the fluency
// axis. Lines carry no BOS/EOS.
std::vector<std::vector<int>> gen_corpus(std::uint64_t seed, std::size_t n_lines);

struct Manifests {
    std::vector<SteeringTask> train;
    std::vector<SteeringTask> eval_held_in;
    std::vector<SteeringTask> eval_held_out;
};

// Exact per-concept ratios (train_per : 1 steering prompt for training,
// eval_per : 1 for evaluation); eval base prompts disjoint from train ones.
Manifests gen_dataset(const std::vector<ConceptSpec>& held_in,
                      const std::vector<ConceptSpec>& held_out, int train_per, int eval_per,
                      std::uint64_t seed);

// Held-out concepts share a family with held-in ones but differ in parameter.
std::pair<std::vector<ConceptSpec>, std::vector<ConceptSpec>> split_heldout(
    const std::vector<ConceptSpec>& concepts, double fraction, std::uint64_t seed);

// First n held-in concepts, spread round-robin over families. Throws
// CapacityError when n exceeds the universe.
std::vector<ConceptSpec> take_concepts(const std::vector<ConceptSpec>& pool, std::size_t n);

// Line/sequence builders shared by training and evaluation.
std::vector<int> lm_line(const std::vector<int>& x, const std::vector<int>& answer);
std::vector<int> generation_prompt(const std::vector<int>& x);  // [BOS] x [SEP]
std::vector<int> scoring_sequence(const std::vector<int>& output);  // [BOS] out [EOS]

// Teacher-forcing view [BOS] x [SEP] y [EOS]; mask selects exactly the
// positions that predict y and the closing EOS.
struct LabelledSequence {
    std::vector<int> tokens;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
};
LabelledSequence labelled_sequence(const SteeringTask& task);

}  // namespace steerkit::conceptlab
