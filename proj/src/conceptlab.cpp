#include "steerkit/conceptlab.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "steerkit/errors.hpp"

namespace steerkit::conceptlab {

using namespace vocab;

int task_keyword(TaskFamily f) {
    switch (f) {
        case TaskFamily::Echo: return TASK_ECHO;
        case TaskFamily::Reverse: return TASK_REV;
        case TaskFamily::SortById: return TASK_SORT;
        case TaskFamily::PairMap: return TASK_MAP;
    }
    throw LookupError("unknown task family");
}

TaskFamily task_from_prompt(const std::vector<int>& x) {
    if (x.empty()) throw LookupError("task_from_prompt: empty prompt");
    switch (x[0]) {
        case TASK_ECHO: return TaskFamily::Echo;
        case TASK_REV: return TaskFamily::Reverse;
        case TASK_SORT: return TaskFamily::SortById;
        case TASK_MAP: return TaskFamily::PairMap;
        default: throw LookupError("task_from_prompt: prompt has no task keyword");
    }
}

std::vector<int> solve(const std::vector<int>& x) {
    TaskFamily f = task_from_prompt(x);
    std::vector<int> letters(x.begin() + 1, x.end());
    switch (f) {
        case TaskFamily::Echo:
            return letters;
        case TaskFamily::Reverse:
            std::reverse(letters.begin(), letters.end());
            return letters;
        case TaskFamily::SortById:
            std::sort(letters.begin(), letters.end());
            return letters;
        case TaskFamily::PairMap:
            // fixed involution on the base alphabet: partner letters swap
            for (int& t : letters) t = LETTER0 + ((t - LETTER0) ^ 1);
            return letters;
    }
    return letters;
}

std::string task_family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::Echo: return "echo";
        case TaskFamily::Reverse: return "reverse";
        case TaskFamily::SortById: return "sort";
        case TaskFamily::PairMap: return "pairmap";
    }
    return "?";
}

std::string concept_family_name(ConceptFamily f) {
    switch (f) {
        case ConceptFamily::AppendMarker: return "append_marker";
        case ConceptFamily::WrapBrackets: return "wrap_brackets";
        case ConceptFamily::ShiftRegister: return "shift_register";
        case ConceptFamily::InterleaveSep: return "interleave_sep";
        case ConceptFamily::PrefixTag: return "prefix_tag";
    }
    return "?";
}

ConceptSpec ConceptSpec::by_id(int id) {
    if (id < 0 || id >= kNumConceptFamilies * N_PARAMS)
        throw LookupError("ConceptSpec: unknown concept id");
    ConceptSpec c;
    c.id = id;
    c.family = static_cast<ConceptFamily>(id / N_PARAMS);
    c.param = id % N_PARAMS;
    return c;
}

std::vector<int> ConceptSpec::steering_prompt() const {
    switch (family) {
        case ConceptFamily::AppendMarker:
            return {KW_APPEND, KW_MARKER, MARKER0 + param};
        case ConceptFamily::WrapBrackets:
            return {KW_WRAP, KW_BRACKET, OPEN0 + param, CLOSE0 + param};
        case ConceptFamily::ShiftRegister:
            return {KW_SHIFT, KW_REGISTER, REG0 + param * N_LETTERS};
        case ConceptFamily::InterleaveSep:
            return {KW_SEP, KW_EVERY, ISEP0 + param};
        case ConceptFamily::PrefixTag:
            return {KW_PREFIX, KW_TAG, TAG0 + param};
    }
    throw LookupError("unknown concept family");
}

std::vector<int> ConceptSpec::transform(const std::vector<int>& answer) const {
    std::vector<int> out;
    switch (family) {
        case ConceptFamily::AppendMarker:
            out = answer;
            out.push_back(MARKER0 + param);
            return out;
        case ConceptFamily::WrapBrackets:
            out.reserve(answer.size() + 2);
            out.push_back(OPEN0 + param);
            out.insert(out.end(), answer.begin(), answer.end());
            out.push_back(CLOSE0 + param);
            return out;
        case ConceptFamily::ShiftRegister:
            out = answer;
            for (int& t : out)
                if (is_base_letter(t)) t = REG0 + param * N_LETTERS + (t - LETTER0);
            return out;
        case ConceptFamily::InterleaveSep:
            for (std::size_t i = 0; i < answer.size(); ++i) {
                if (i) out.push_back(ISEP0 + param);
                out.push_back(answer[i]);
            }
            return out;
        case ConceptFamily::PrefixTag:
            out.reserve(answer.size() + 1);
            out.push_back(TAG0 + param);
            out.insert(out.end(), answer.begin(), answer.end());
            return out;
    }
    throw LookupError("unknown concept family");
}

std::vector<int> ConceptSpec::violate(const std::vector<int>& answer) const {
    // The untransformed answer never satisfies the rule.
    return answer;
}

namespace {
std::size_t count_token(const std::vector<int>& v, int t) {
    return static_cast<std::size_t>(std::count(v.begin(), v.end(), t));
}
}  // namespace

int ConceptSpec::check(const std::vector<int>& output) const {
    if (output.empty()) return 0;
    switch (family) {
        case ConceptFamily::AppendMarker: {
            int m = MARKER0 + param;
            std::size_t c = count_token(output, m);
            if (c == 0) return 0;
            return (c == 1 && output.back() == m) ? 2 : 1;
        }
        case ConceptFamily::WrapBrackets: {
            int o = OPEN0 + param, cl = CLOSE0 + param;
            std::size_t co = count_token(output, o), cc = count_token(output, cl);
            if (co == 0 && cc == 0) return 0;
            if (co == 1 && cc == 1 && output.size() >= 2 && output.front() == o &&
                output.back() == cl)
                return 2;
            return 1;
        }
        case ConceptFamily::ShiftRegister: {
            int lo = REG0 + param * N_LETTERS, hi = lo + N_LETTERS;
            std::size_t letters = 0, in_block = 0;
            for (int t : output) {
                if (is_base_letter(t) || is_register_letter(t)) {
                    ++letters;
                    if (t >= lo && t < hi) ++in_block;
                }
            }
            if (letters == 0 || in_block == 0) return 0;
            return in_block == letters ? 2 : 1;
        }
        case ConceptFamily::InterleaveSep: {
            int t = ISEP0 + param;
            std::size_t c = count_token(output, t);
            if (c == 0) return 0;
            if (output.size() < 3 || output.size() % 2 == 0) return 1;
            for (std::size_t i = 0; i < output.size(); ++i) {
                bool want_sep = (i % 2 == 1);
                if ((output[i] == t) != want_sep) return 1;
            }
            return 2;
        }
        case ConceptFamily::PrefixTag: {
            int g = TAG0 + param;
            std::size_t c = count_token(output, g);
            if (c == 0) return 0;
            return (c == 1 && output.front() == g) ? 2 : 1;
        }
    }
    throw LookupError("unknown concept family");
}

int concept_check(const std::vector<int>& output, const ConceptSpec& spec) {
    if (spec.id < 0 || spec.id >= kNumConceptFamilies * N_PARAMS)
        throw LookupError("concept_check: unknown concept id");
    return spec.check(output);
}

int task_check(const std::vector<int>& output, TaskFamily task, const std::vector<int>& x) {
    // Concept-invariant content: keep base letters, un-map register letters,
    // drop decorations.
    std::vector<int> content;
    for (int t : output) {
        if (is_base_letter(t)) content.push_back(t);
        else if (is_register_letter(t)) content.push_back(LETTER0 + (t - REG0) % N_LETTERS);
    }
    (void)task;
    std::vector<int> ref = solve(x);
    if (content == ref) return 2;
    if (content.empty() || ref.empty()) return 0;
    std::size_t matches = 0, lo = std::min(content.size(), ref.size());
    for (std::size_t i = 0; i < lo; ++i)
        if (content[i] == ref[i]) ++matches;
    double overlap =
        static_cast<double>(matches) / static_cast<double>(std::max(content.size(), ref.size()));
    return overlap >= 0.5 ? 1 : 0;
}

std::vector<ConceptSpec> concept_universe() {
    std::vector<ConceptSpec> all;
    all.reserve(kNumConceptFamilies * N_PARAMS);
    for (int id = 0; id < kNumConceptFamilies * N_PARAMS; ++id)
        all.push_back(ConceptSpec::by_id(id));
    return all;
}

// ---- prompt sampling ----

namespace {

std::uint64_t prompt_hash(const std::vector<int>& x) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int t : x) {
        h ^= static_cast<std::uint64_t>(t) & 0xffu;
        h *= 0x100000001b3ull;
    }
    return h;
}

bool letters_ok(const std::vector<int>& letters) {
    // Cap per-letter multiplicity at 3 so sorted outputs never produce a
    // degenerate run.
    int counts[N_LETTERS] = {0};
    for (int t : letters)
        if (++counts[t - LETTER0] > 3) return false;
    return true;
}

}  // namespace

PromptPool pool_of(const std::vector<int>& x) {
    std::uint64_t b = prompt_hash(x) % 100;
    if (b < 70) return PromptPool::Corpus;
    if (b < 85) return PromptPool::Train;
    return PromptPool::Eval;
}

std::vector<int> sample_prompt(Rng& rng, PromptPool pool, TaskFamily family) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
        std::size_t len = 3 + rng.next_below(4);  // 3..6 letters
        std::vector<int> x;
        x.reserve(len + 1);
        x.push_back(task_keyword(family));
        for (std::size_t i = 0; i < len; ++i)
            x.push_back(LETTER0 + static_cast<int>(rng.next_below(N_LETTERS)));
        std::vector<int> letters(x.begin() + 1, x.end());
        if (!letters_ok(letters)) continue;
        if (pool_of(x) != pool) continue;
        return x;
    }
    throw DataError("sample_prompt: rejection sampling failed");
}

std::vector<int> sample_prompt(Rng& rng, PromptPool pool) {
    auto family = static_cast<TaskFamily>(rng.next_below(kNumTaskFamilies));
    return sample_prompt(rng, pool, family);
}

// ---- corpus ----

std::vector<std::vector<int>> gen_corpus(std::uint64_t seed, std::size_t n_lines) {
    if (n_lines < 1) throw ConfigError("gen_corpus: n_lines must be >= 1");
    Rng rng = Rng(seed).split("corpus");
    std::vector<std::vector<int>> lines;
    lines.reserve(n_lines);
    // Guarantee family coverage: the first lines cycle through all tasks.
    for (std::size_t i = 0; i < n_lines; ++i) {
        bool task_line = i < kNumTaskFamilies || rng.next_double() < 0.8;
        if (task_line) {
            TaskFamily fam = i < kNumTaskFamilies
                                 ? static_cast<TaskFamily>(i)
                                 : static_cast<TaskFamily>(rng.next_below(kNumTaskFamilies));
            std::vector<int> x = sample_prompt(rng, PromptPool::Corpus, fam);
            lines.push_back(lm_line(x, solve(x)));
        } else {
            // Plain text line: one register per line, sometimes decorated,
            // so concept-shaped sequences are ordinary text.
            std::size_t len = 3 + rng.next_below(4);
            int base;
            if (rng.next_double() < 0.5) {
                base = LETTER0;
            } else {
                base = REG0 + static_cast<int>(rng.next_below(N_REG_BLOCKS)) * N_LETTERS;
            }
            std::vector<int> seq;
            for (std::size_t j = 0; j < len; ++j) {
                int t = base + static_cast<int>(rng.next_below(N_LETTERS));
                if (!seq.empty() && seq.size() >= 3 && seq[seq.size() - 1] == t &&
                    seq[seq.size() - 2] == t && seq[seq.size() - 3] == t) {
                    t = base + static_cast<int>((t - base + 1) % N_LETTERS);
                }
                seq.push_back(t);
            }
            if (rng.next_double() < 0.55) {
                int param = static_cast<int>(rng.next_below(N_PARAMS));
                switch (rng.next_below(4)) {
                    case 0:
                        seq.push_back(MARKER0 + param);
                        break;
                    case 1:
                        seq.insert(seq.begin(), TAG0 + param);
                        break;
                    case 2: {
                        seq.insert(seq.begin(), OPEN0 + param);
                        seq.push_back(CLOSE0 + param);
                        break;
                    }
                    default: {
                        std::vector<int> inter;
                        for (std::size_t j = 0; j < seq.size(); ++j) {
                            if (j) inter.push_back(ISEP0 + param);
                            inter.push_back(seq[j]);
                        }
                        seq = std::move(inter);
                    }
                }
            }
            lines.push_back(std::move(seq));
        }
    }
    return lines;
}

// ---- datasets ----

namespace {

SteeringTask make_task(const ConceptSpec& c, const std::vector<int>& x, const char* split) {
    SteeringTask t;
    t.x = x;
    t.s = c.steering_prompt();
    t.y = c.transform(solve(x));
    t.concept_id = c.id;
    t.task = task_from_prompt(x);
    t.split = split;
    return t;
}

std::vector<std::vector<int>> distinct_prompts(Rng& rng, PromptPool pool, int n) {
    std::set<std::vector<int>> seen;
    std::vector<std::vector<int>> out;
    while (static_cast<int>(out.size()) < n) {
        auto x = sample_prompt(rng, pool);
        if (seen.insert(x).second) out.push_back(std::move(x));
    }
    return out;
}

}  // namespace

Manifests gen_dataset(const std::vector<ConceptSpec>& held_in,
                      const std::vector<ConceptSpec>& held_out, int train_per, int eval_per,
                      std::uint64_t seed) {
    if (train_per < 0 || eval_per < 1)
        throw ConfigError("gen_dataset: per-concept counts out of range");
    Manifests m;
    Rng root = Rng(seed).split("dataset");
    for (const auto& c : held_in) {
        Rng rng = root.split(static_cast<std::uint64_t>(c.id));
        for (const auto& x : distinct_prompts(rng, PromptPool::Train, train_per))
            m.train.push_back(make_task(c, x, "train"));
        for (const auto& x : distinct_prompts(rng, PromptPool::Eval, eval_per))
            m.eval_held_in.push_back(make_task(c, x, "eval-held-in"));
    }
    for (const auto& c : held_out) {
        Rng rng = root.split(0x10000u + static_cast<std::uint64_t>(c.id));
        for (const auto& x : distinct_prompts(rng, PromptPool::Eval, eval_per))
            m.eval_held_out.push_back(make_task(c, x, "eval-held-out"));
    }
    return m;
}

std::pair<std::vector<ConceptSpec>, std::vector<ConceptSpec>> split_heldout(
    const std::vector<ConceptSpec>& concepts, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split_heldout: fraction must lie in (0,1)");
    std::map<ConceptFamily, std::vector<ConceptSpec>> by_family;
    for (const auto& c : concepts) by_family[c.family].push_back(c);
    for (const auto& [fam, list] : by_family)
        if (list.size() < 2)
            throw ConfigError("split_heldout: family " + concept_family_name(fam) +
                              " needs >= 2 parameterizations");

    std::size_t total = concepts.size();
    auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
    want = std::max<std::size_t>(1, std::min(want, total - by_family.size()));

    // Largest-remainder apportionment across families, each keeping >= 1
    // held-in member.
    std::vector<ConceptFamily> fams;
    std::vector<double> exact;
    std::vector<std::size_t> take;
    for (const auto& [fam, list] : by_family) {
        fams.push_back(fam);
        exact.push_back(fraction * static_cast<double>(list.size()));
        take.push_back(static_cast<std::size_t>(exact.back()));
    }
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < take.size(); ++i) {
        take[i] = std::min(take[i], by_family[fams[i]].size() - 1);
        assigned += take[i];
    }
    // Distribute the remainder by descending fractional part, stable order.
    while (assigned < want) {
        std::size_t best = take.size();
        double best_frac = -1.0;
        for (std::size_t i = 0; i < take.size(); ++i) {
            if (take[i] >= by_family[fams[i]].size() - 1) continue;
            double frac = exact[i] - static_cast<double>(take[i]);
            if (frac > best_frac) {
                best_frac = frac;
                best = i;
            }
        }
        if (best == take.size()) break;
        ++take[best];
        ++assigned;
    }
    while (assigned > want) {
        for (std::size_t i = take.size(); i-- > 0 && assigned > want;) {
            if (take[i] > 0) {
                --take[i];
                --assigned;
            }
        }
    }

    Rng rng = Rng(seed).split("heldout");
    std::vector<ConceptSpec> held_in, held_out;
    for (std::size_t i = 0; i < fams.size(); ++i) {
        auto list = by_family[fams[i]];
        rng.split(static_cast<std::uint64_t>(i)).shuffle(list.begin(), list.end());
        for (std::size_t j = 0; j < list.size(); ++j) {
            if (j < take[i]) held_out.push_back(list[j]);
            else held_in.push_back(list[j]);
        }
    }
    auto by_id = [](const ConceptSpec& a, const ConceptSpec& b) { return a.id < b.id; };
    std::sort(held_in.begin(), held_in.end(), by_id);
    std::sort(held_out.begin(), held_out.end(), by_id);
    return {held_in, held_out};
}

std::vector<ConceptSpec> take_concepts(const std::vector<ConceptSpec>& pool, std::size_t n) {
    if (n > pool.size())
        throw CapacityError("take_concepts: requested more concepts than available");
    // Round-robin over families keeps small subsets diverse.
    std::map<ConceptFamily, std::vector<ConceptSpec>> by_family;
    for (const auto& c : pool) by_family[c.family].push_back(c);
    std::vector<ConceptSpec> out;
    std::size_t round = 0;
    while (out.size() < n) {
        bool any = false;
        for (auto& [fam, list] : by_family) {
            if (round < list.size()) {
                any = true;
                out.push_back(list[round]);
                if (out.size() == n) break;
            }
        }
        if (!any) break;
        ++round;
    }
    return out;
}

std::vector<int> lm_line(const std::vector<int>& x, const std::vector<int>& answer) {
    std::vector<int> line = x;
    line.push_back(SEP);
    line.insert(line.end(), answer.begin(), answer.end());
    return line;
}

std::vector<int> generation_prompt(const std::vector<int>& x) {
    std::vector<int> p;
    p.reserve(x.size() + 2);
    p.push_back(BOS);
    p.insert(p.end(), x.begin(), x.end());
    p.push_back(SEP);
    return p;
}

std::vector<int> scoring_sequence(const std::vector<int>& output) {
    std::vector<int> p;
    p.reserve(output.size() + 2);
    p.push_back(BOS);
    p.insert(p.end(), output.begin(), output.end());
    p.push_back(EOS);
    return p;
}

LabelledSequence labelled_sequence(const SteeringTask& task) {
    LabelledSequence seq;
    seq.tokens.push_back(BOS);
    seq.tokens.insert(seq.tokens.end(), task.x.begin(), task.x.end());
    seq.tokens.push_back(SEP);
    std::size_t label_from = seq.tokens.size() - 1;  // position predicting y[0]
    seq.tokens.insert(seq.tokens.end(), task.y.begin(), task.y.end());
    seq.tokens.push_back(EOS);
    std::size_t t = seq.tokens.size();
    seq.targets.assign(t, 0);
    seq.mask.assign(t, 0);
    for (std::size_t i = label_from; i + 1 < t; ++i) {
        seq.targets[i] = seq.tokens[i + 1];
        seq.mask[i] = 1;
    }
    return seq;
}

}  // namespace steerkit::conceptlab
