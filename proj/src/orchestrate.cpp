#include "steerkit/orchestrate.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include <json.hpp>

#include "steerkit/checkpoint.hpp"
#include "steerkit/errors.hpp"

namespace steerkit::orchestrate {

namespace fs = std::filesystem;
using conceptlab::ConceptSpec;
using conceptlab::SteeringTask;
using nlohmann::ordered_json;

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

void log_line(const std::string& msg) {
    std::fprintf(stderr, "[%8.1fs] %s\n", now_seconds(), msg.c_str());
}

std::ofstream open_out(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    return f;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

tinylm::DecodeOpts decode_opts(const ExperimentConfig& cfg) {
    tinylm::DecodeOpts d;
    d.mode = cfg.eval.decode == "sample" ? tinylm::DecodeOpts::Mode::Sample
                                         : tinylm::DecodeOpts::Mode::Greedy;
    d.temperature = cfg.eval.temperature;
    d.max_new = cfg.eval.max_new;
    d.eos_id = conceptlab::vocab::EOS;
    return d;
}

}  // namespace

// ---- manifests ----

void write_manifest(const std::string& path, const std::vector<SteeringTask>& tasks) {
    auto f = open_out(path);
    for (const auto& t : tasks) {
        ordered_json row;
        row["concept_id"] = t.concept_id;
        row["task"] = conceptlab::task_family_name(t.task);
        row["split"] = t.split;
        row["x"] = t.x;
        row["s"] = t.s;
        row["y"] = t.y;
        f << row.dump() << "\n";
    }
}

std::vector<SteeringTask> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest: " + path);
    std::vector<SteeringTask> tasks;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ordered_json row = ordered_json::parse(line);
        SteeringTask t;
        t.concept_id = row.at("concept_id").get<int>();
        t.split = row.at("split").get<std::string>();
        row.at("x").get_to(t.x);
        row.at("s").get_to(t.s);
        row.at("y").get_to(t.y);
        t.task = conceptlab::task_from_prompt(t.x);
        tasks.push_back(std::move(t));
    }
    return tasks;
}

void write_concept_registry(const std::string& path,
                            const std::vector<ConceptSpec>& held_in,
                            const std::vector<ConceptSpec>& held_out) {
    auto f = open_out(path);
    auto emit = [&](const ConceptSpec& c, const char* split) {
        ordered_json row;
        row["concept_id"] = c.id;
        row["family"] = conceptlab::concept_family_name(c.family);
        row["param"] = c.param;
        row["steering_prompt"] = c.steering_prompt();
        row["split"] = split;
        f << row.dump() << "\n";
    };
    for (const auto& c : held_in) emit(c, "held-in");
    for (const auto& c : held_out) emit(c, "held-out");
}

void write_report(const evalkit::EvalReport& report, const std::string& dir,
                  const std::string& stem) {
    fs::create_directories(dir);
    {
        auto f = open_out(dir + "/" + stem + "_records.jsonl");
        for (const auto& r : report.records) {
            ordered_json row;
            row["method"] = r.method;
            row["split"] = r.split;
            row["factor"] = r.factor;
            row["concept_id"] = r.concept_id;
            row["example_index"] = r.example_index;
            row["concept_score"] = r.scores.concept_score;
            row["instruct_score"] = r.scores.instruct_score;
            row["fluency_score"] = r.scores.fluency_score;
            row["steering_score"] = r.steering_score;
            f << row.dump() << "\n";
        }
    }
    {
        auto f = open_out(dir + "/" + stem + "_summary.csv");
        f << "method,split,factor,concept_id,concept_score,instruct_score,fluency_score,"
             "steering_score\n";
        // Per-(factor, concept) means over examples.
        std::map<std::pair<double, int>, std::array<double, 4>> acc;
        std::map<std::pair<double, int>, int> cnt;
        for (const auto& r : report.records) {
            auto key = std::make_pair(r.factor, r.concept_id);
            auto& a = acc[key];
            a[0] += r.scores.concept_score;
            a[1] += r.scores.instruct_score;
            a[2] += r.scores.fluency_score;
            a[3] += r.steering_score;
            ++cnt[key];
        }
        for (const auto& [key, a] : acc) {
            int n = cnt[key];
            f << report.method << "," << report.split << "," << fmt6(key.first) << ","
              << key.second << "," << fmt6(a[0] / n) << "," << fmt6(a[1] / n) << ","
              << fmt6(a[2] / n) << "," << fmt6(a[3] / n) << "\n";
        }
    }
    {
        auto f = open_out(dir + "/" + stem + "_summary.json");
        ordered_json doc;
        doc["method"] = report.method;
        doc["split"] = report.split;
        doc["factor_grid"] = report.factor_grid;
        doc["aggregate"] = report.aggregate;
        doc["best_factor"] = report.best_factor;
        doc["best_aggregate"] = report.best_aggregate;
        ordered_json pc = ordered_json::object();
        for (const auto& [cid, v] : report.best_per_concept) pc[std::to_string(cid)] = v;
        doc["best_per_concept"] = pc;
        f << doc.dump(2) << "\n";
    }
}

// ---- pipeline pieces ----

tinylm::TinyLm build_base(const ExperimentConfig& cfg, tinylm::PretrainResult* trace) {
    auto corpus = conceptlab::gen_corpus(cfg.pretrain.corpus_seed,
                                         static_cast<std::size_t>(cfg.pretrain.corpus_lines));
    tinylm::PretrainOpts opts;
    opts.steps = cfg.pretrain.steps;
    opts.batch_lines = cfg.pretrain.batch_lines;
    opts.lr = cfg.pretrain.lr;
    opts.warmup = cfg.pretrain.warmup;
    opts.bos_id = conceptlab::vocab::BOS;
    opts.eos_id = conceptlab::vocab::EOS;
    tinylm::TinyLm lm = tinylm::pretrain(corpus, cfg.model, opts, cfg.seed, trace);
    lm.freeze();
    return lm;
}

double exact_match_rate(const tinylm::TinyLm& lm, int n_prompts, std::uint64_t seed) {
    Rng rng = Rng(seed).split("exact-match");
    tinylm::DecodeOpts d;
    d.mode = tinylm::DecodeOpts::Mode::Greedy;
    d.max_new = 16;
    d.eos_id = conceptlab::vocab::EOS;
    int hits = 0;
    for (int i = 0; i < n_prompts; ++i) {
        auto fam = static_cast<conceptlab::TaskFamily>(i % conceptlab::kNumTaskFamilies);
        auto x = conceptlab::sample_prompt(rng, conceptlab::PromptPool::Eval, fam);
        auto gen = lm.generate(conceptlab::generation_prompt(x), nullptr, d);
        if (gen == conceptlab::solve(x)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_prompts);
}

SplitConcepts concept_split(const ExperimentConfig& cfg) {
    auto all = conceptlab::concept_universe();
    auto [held_in, held_out] =
        conceptlab::split_heldout(all, cfg.data.heldout_fraction, cfg.data.seed);
    return {held_in, held_out};
}

evalkit::EvalOpts eval_opts(const ExperimentConfig& cfg) {
    evalkit::EvalOpts opts;
    opts.intervention_layer = cfg.intervention_layer;
    opts.decode = decode_opts(cfg);
    opts.seed = cfg.seed;
    return opts;
}

evalkit::MethodSpec hypernet_method(const hypernet::Hypernet& h, const tinylm::TinyLm& lm,
                                    int layer) {
    evalkit::MethodSpec m;
    m.name = "hypernet_" + hypernet::variant_name(h.config().variant);
    m.vector_for = [&h, &lm, layer](const SteeringTask& task) {
        const tinylm::ResidualCapture* acts_ptr = nullptr;
        tinylm::ResidualCapture acts;
        if (h.config().variant == hypernet::Variant::CrossAttention) {
            acts = lm.capture_residual(conceptlab::generation_prompt(task.x), layer);
            acts_ptr = &acts;
        }
        return h.generate_vector(task.s, &task.x, acts_ptr);
    };
    return m;
}

evalkit::MethodSpec reft_method(const std::map<int, baselines::ReftR1Params>& params,
                                const tinylm::TinyLm& lm, int layer) {
    evalkit::MethodSpec m;
    m.name = "reft_r1";
    m.vector_for = [&params, &lm, layer](const SteeringTask& task) {
        auto it = params.find(task.concept_id);
        if (it == params.end())
            throw LookupError("reft: no trained vector for concept " +
                              std::to_string(task.concept_id));
        auto acts = lm.capture_residual(conceptlab::generation_prompt(task.x), layer);
        return baselines::reft_steer_vector(acts, it->second);
    };
    return m;
}

evalkit::MethodSpec diffmean_method(const std::map<int, std::vector<float>>& vectors) {
    evalkit::MethodSpec m;
    m.name = "diffmean";
    m.vector_for = [&vectors](const SteeringTask& task) {
        auto it = vectors.find(task.concept_id);
        if (it == vectors.end())
            throw LookupError("diffmean: no vector for concept " +
                              std::to_string(task.concept_id));
        hypernet::SteeringVector sv;
        sv.values = it->second;
        sv.normalized = false;
        sv.provenance = "diffmean";
        return sv;
    };
    return m;
}

evalkit::MethodSpec prompt_method() {
    evalkit::MethodSpec m;
    m.name = "prompting";
    m.prompt_steering = true;
    return m;
}

NamedTensors store_to_tensors(const VectorStore& store) {
    NamedTensors nt;
    for (const auto& [cid, p] : store.reft) {
        std::string base = "reft.c" + std::to_string(cid);
        nt.entries.emplace(base + ".w", TensorF::from(p.w, {p.w.size()}));
        nt.entries.emplace(
            base + ".meta",
            TensorF::from({static_cast<float>(p.lambda), static_cast<float>(p.k)}, {2}));
    }
    for (const auto& [cid, v] : store.diffmean)
        nt.entries.emplace("diffmean.c" + std::to_string(cid),
                           TensorF::from(v, {v.size()}));
    return nt;
}

VectorStore store_from_tensors(const NamedTensors& tensors) {
    VectorStore store;
    for (const auto& [name, t] : tensors.entries) {
        if (name.rfind("reft.c", 0) == 0 && name.size() > 8 &&
            name.substr(name.size() - 2) == ".w") {
            int cid = std::stoi(name.substr(6, name.size() - 8));
            store.reft[cid].w = t.value();
        } else if (name.rfind("reft.c", 0) == 0 &&
                   name.substr(name.size() - 5) == ".meta") {
            int cid = std::stoi(name.substr(6, name.size() - 11));
            store.reft[cid].lambda = t.value()[0];
            store.reft[cid].k = static_cast<int>(t.value()[1]);
        } else if (name.rfind("diffmean.c", 0) == 0) {
            int cid = std::stoi(name.substr(10));
            store.diffmean[cid] = t.value();
        }
    }
    return store;
}

VectorStore train_baselines(const ExperimentConfig& cfg, const tinylm::TinyLm& lm,
                            const std::vector<SteeringTask>& train_tasks) {
    std::map<int, std::vector<SteeringTask>> by_concept;
    for (const auto& t : train_tasks) by_concept[t.concept_id].push_back(t);

    VectorStore store;
    for (const auto& [cid, tasks] : by_concept) {
        baselines::ReftTrainOpts opts;
        opts.lr = cfg.baseline.lr;
        opts.epochs = cfg.baseline.epochs;
        opts.batch = cfg.baseline.batch;
        opts.lambda = cfg.baseline.lambda;
        opts.k = cfg.baseline.k;
        opts.intervention_layer = cfg.intervention_layer;
        opts.alpha_train = cfg.train.alpha_train;
        opts.seed = Rng(cfg.seed).split(static_cast<std::uint64_t>(cid)).next_u64();
        store.reft[cid] = baselines::reft_train(tasks, lm, opts);

        std::vector<std::vector<float>> pos, neg;
        for (const auto& t : tasks) {
            pos.push_back(
                baselines::pooled_activation(lm, t.x, t.y, cfg.intervention_layer));
            auto spec = ConceptSpec::by_id(cid);
            neg.push_back(baselines::pooled_activation(
                lm, t.x, spec.violate(conceptlab::solve(t.x)), cfg.intervention_layer));
        }
        store.diffmean[cid] = baselines::diffmean(pos, neg).values;
        log_line("baselines: concept " + std::to_string(cid) + " done");
    }
    return store;
}

// ---- commands ----

namespace {

tinylm::TinyLm load_base(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm(cfg.model, cfg.seed);
    lm.load_tensors(load_checkpoint(cfg.out_dir + "/lm.ckpt"));
    lm.freeze();
    return lm;
}

hypernet::HypernetConfig hypernet_config(const ExperimentConfig& cfg) {
    hypernet::HypernetConfig hc = cfg.hypernet_cfg;
    hc.vocab_size = cfg.model.vocab_size;
    hc.d_model = cfg.model.d_model;
    hc.max_seq_len = cfg.model.max_seq_len;
    return hc;
}

std::vector<SteeringTask> manifest_for_split(const ExperimentConfig& cfg,
                                             const std::string& split) {
    std::string file = split == "held-out" ? "eval_held_out.jsonl" : "eval_held_in.jsonl";
    return read_manifest(cfg.out_dir + "/" + file);
}

}  // namespace

void cmd_pretrain(const ExperimentConfig& cfg) {
    log_line("pretrain: start");
    tinylm::PretrainResult trace;
    tinylm::TinyLm lm = build_base(cfg, &trace);
    double em = exact_match_rate(lm, 200, cfg.seed + 9001);
    log_line("pretrain: exact match " + fmt6(em));
    fs::create_directories(cfg.out_dir);
    save_checkpoint(lm.named_tensors(), cfg.out_dir + "/lm.ckpt");
    {
        auto f = open_out(cfg.out_dir + "/pretrain_trace.jsonl");
        for (std::size_t i = 0; i < trace.loss_trace.size(); ++i) {
            ordered_json row;
            row["step"] = i + 1;
            row["loss"] = trace.loss_trace[i];
            f << row.dump() << "\n";
        }
    }
    {
        auto f = open_out(cfg.out_dir + "/pretrain_metrics.json");
        ordered_json doc;
        doc["steps"] = cfg.pretrain.steps;
        doc["final_loss"] = trace.loss_trace.empty() ? -1.0
                                                     : static_cast<double>(
                                                           trace.loss_trace.back());
        doc["exact_match"] = em;
        f << doc.dump(2) << "\n";
    }
}

void cmd_gen_data(const ExperimentConfig& cfg) {
    SplitConcepts split = concept_split(cfg);
    auto held_in = conceptlab::take_concepts(split.held_in,
                                             static_cast<std::size_t>(cfg.data.n_concepts));
    auto manifests = conceptlab::gen_dataset(held_in, split.held_out,
                                             cfg.data.train_per_concept,
                                             cfg.data.eval_per_concept, cfg.data.seed);
    fs::create_directories(cfg.out_dir);
    write_concept_registry(cfg.out_dir + "/concepts.jsonl", held_in, split.held_out);
    write_manifest(cfg.out_dir + "/train.jsonl", manifests.train);
    write_manifest(cfg.out_dir + "/eval_held_in.jsonl", manifests.eval_held_in);
    write_manifest(cfg.out_dir + "/eval_held_out.jsonl", manifests.eval_held_out);
    log_line("gen-data: " + std::to_string(manifests.train.size()) + " train, " +
             std::to_string(manifests.eval_held_in.size()) + " held-in eval, " +
             std::to_string(manifests.eval_held_out.size()) + " held-out eval");
}

void cmd_train(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm = load_base(cfg);
    auto train_tasks = read_manifest(cfg.out_dir + "/train.jsonl");
    hypernet::Hypernet h(hypernet_config(cfg), cfg.seed, &lm);
    hypernet::TrainOpts opts;
    opts.base_lr = cfg.train.base_lr;
    opts.depth_lr_rule = cfg.train.depth_lr_rule;
    opts.epochs = cfg.train.epochs;
    opts.batch = cfg.train.batch;
    opts.alpha_train = cfg.train.alpha_train;
    opts.seed = cfg.seed;
    opts.intervention_layer = cfg.intervention_layer;
    log_line("train: " + std::to_string(train_tasks.size()) + " examples, variant " +
             hypernet::variant_name(cfg.hypernet_cfg.variant));
    auto result = hypernet::train_e2e(h, lm, train_tasks, opts);
    save_checkpoint(h.named_tensors(), cfg.out_dir + "/hypernet.ckpt");
    auto f = open_out(cfg.out_dir + "/loss_trace.jsonl");
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
        ordered_json row;
        row["step"] = i + 1;
        row["loss"] = result.loss_trace[i];
        row["flops"] = result.step_flops[i];
        f << row.dump() << "\n";
    }
    log_line("train: final loss " +
             fmt6(result.loss_trace.empty() ? -1.0 : result.loss_trace.back()));
}

void cmd_train_baseline(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm = load_base(cfg);
    auto train_tasks = read_manifest(cfg.out_dir + "/train.jsonl");
    VectorStore store = train_baselines(cfg, lm, train_tasks);
    save_checkpoint(store_to_tensors(store), cfg.out_dir + "/vectors.ckpt");
}

void cmd_eval(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm = load_base(cfg);
    auto held_in_eval = read_manifest(cfg.out_dir + "/eval_held_in.jsonl");
    evalkit::Judge judge(&lm);
    judge.calibrate(held_in_eval);

    auto manifest = manifest_for_split(cfg, cfg.eval.split);
    evalkit::EvalOpts opts = eval_opts(cfg);

    std::optional<hypernet::Hypernet> hn;
    VectorStore store;
    evalkit::MethodSpec method;
    if (cfg.eval.method == "hypernet") {
        hn.emplace(hypernet_config(cfg), cfg.seed, &lm);
        hn->load_tensors(load_checkpoint(cfg.out_dir + "/hypernet.ckpt"));
        method = hypernet_method(*hn, lm, cfg.intervention_layer);
    } else if (cfg.eval.method == "reft") {
        store = store_from_tensors(load_checkpoint(cfg.out_dir + "/vectors.ckpt"));
        method = reft_method(store.reft, lm, cfg.intervention_layer);
    } else if (cfg.eval.method == "diffmean") {
        store = store_from_tensors(load_checkpoint(cfg.out_dir + "/vectors.ckpt"));
        method = diffmean_method(store.diffmean);
    } else {
        method = prompt_method();
    }

    auto report = evalkit::evaluate(method, lm, manifest, cfg.eval.factor_grid, judge, opts);
    std::string stem = "report_" + cfg.eval.method + "_" +
                       (cfg.eval.split == "held-out" ? "held_out" : "held_in");
    write_report(report, cfg.out_dir, stem);
    log_line("eval: " + method.name + " " + cfg.eval.split + " best factor " +
             fmt6(report.best_factor) + " aggregate " + fmt6(report.best_aggregate));
}

void cmd_scale_sweep(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm = load_base(cfg);
    SplitConcepts split = concept_split(cfg);
    fs::create_directories(cfg.out_dir);

    if (!cfg.sweep.flops_mode) {
        auto held_out_manifest = conceptlab::gen_dataset({}, split.held_out, 0,
                                                         cfg.data.eval_per_concept,
                                                         cfg.data.seed)
                                     .eval_held_out;
        evalkit::Judge judge(&lm);
        // Calibrate once on a fixed held-in eval set built from the full pool.
        auto calib = conceptlab::gen_dataset(
            conceptlab::take_concepts(split.held_in, 8), {}, 0, cfg.data.eval_per_concept,
            cfg.data.seed);
        judge.calibrate(calib.eval_held_in);

        auto f = open_out(cfg.out_dir + "/sweep_summary.csv");
        f << "size,seed,variant,best_factor,held_out_aggregate\n";
        for (int size : cfg.sweep.sizes) {
            auto concepts = conceptlab::take_concepts(split.held_in,
                                                      static_cast<std::size_t>(size));
            auto manifests = conceptlab::gen_dataset(concepts, {}, cfg.data.train_per_concept,
                                                     cfg.data.eval_per_concept,
                                                     cfg.data.seed);
            for (std::uint64_t seed : cfg.sweep.seeds) {
                hypernet::HypernetConfig hc = hypernet_config(cfg);
                hypernet::Hypernet h(hc, seed, &lm);
                hypernet::TrainOpts topts;
                topts.base_lr = cfg.train.base_lr;
                topts.depth_lr_rule = cfg.train.depth_lr_rule;
                topts.epochs = cfg.train.epochs;
                topts.batch = cfg.train.batch;
                topts.alpha_train = cfg.train.alpha_train;
                topts.seed = seed;
                topts.intervention_layer = cfg.intervention_layer;
                hypernet::train_e2e(h, lm, manifests.train, topts);

                evalkit::EvalOpts eopts = eval_opts(cfg);
                eopts.seed = seed;
                auto report = evalkit::evaluate(hypernet_method(h, lm, cfg.intervention_layer),
                                                lm, held_out_manifest, cfg.eval.factor_grid,
                                                judge, eopts);
                std::string stem = "sweep_" + std::to_string(size) + "_s" +
                                   std::to_string(seed);
                write_report(report, cfg.out_dir, stem);
                f << size << "," << seed << ","
                  << hypernet::variant_name(cfg.hypernet_cfg.variant) << ","
                  << fmt6(report.best_factor) << "," << fmt6(report.best_aggregate) << "\n";
                log_line("scale-sweep: size " + std::to_string(size) + " seed " +
                         std::to_string(seed) + " -> " + fmt6(report.best_aggregate));
            }
        }
        return;
    }

    // Compute study: train each dataset size until the fixed held-in eval
    // loss target is reached; report N* . mean-step-TFLOPs / c.
    int n_eval_concepts = cfg.sweep.flops_eval_concepts;
    auto eval_concepts = conceptlab::take_concepts(split.held_in,
                                                   static_cast<std::size_t>(n_eval_concepts));
    auto eval_manifest = conceptlab::gen_dataset(eval_concepts, {}, 0,
                                                 cfg.data.eval_per_concept, cfg.data.seed)
                             .eval_held_in;

    auto f = open_out(cfg.out_dir + "/flops_per_concept.csv");
    f << "c,seed,n_star,mean_step_tflops,tflops_per_concept,target_loss\n";
    for (std::uint64_t seed : cfg.sweep.seeds) {
        double target = -1.0;
        for (std::size_t si = 0; si < cfg.sweep.flops_sizes.size(); ++si) {
            int size = cfg.sweep.flops_sizes[si];
            auto concepts = conceptlab::take_concepts(split.held_in,
                                                      static_cast<std::size_t>(size));
            auto manifests = conceptlab::gen_dataset(concepts, {}, cfg.data.train_per_concept,
                                                     cfg.data.eval_per_concept,
                                                     cfg.data.seed);
            hypernet::Hypernet h(hypernet_config(cfg), seed, &lm);
            hypernet::TrainOpts topts;
            topts.base_lr = cfg.train.base_lr;
            topts.depth_lr_rule = cfg.train.depth_lr_rule;
            topts.epochs = 1000000;  // the target or the step cap ends the run
            topts.max_steps = cfg.sweep.max_steps;
            topts.batch = cfg.train.batch;
            topts.alpha_train = cfg.train.alpha_train;
            topts.seed = seed;
            topts.intervention_layer = cfg.intervention_layer;
            topts.eval_set = &eval_manifest;
            topts.eval_every = cfg.sweep.eval_every;
            if (si > 0) topts.target_eval_loss = target;
            auto result = hypernet::train_e2e(h, lm, manifests.train, topts);
            if (si == 0) {
                target = result.final_eval_loss * cfg.sweep.target_margin;
                // The reference run's N* is the first checkpoint at which it
                // was already at or below the target it defines.
                for (const auto& [step, el] : result.eval_trace) {
                    if (el <= target) {
                        result.steps_to_target = step;
                        break;
                    }
                }
                if (result.steps_to_target < 0) result.steps_to_target = result.steps;
            }
            if (result.steps_to_target < 0) {
                log_line("scale-sweep(flops): size " + std::to_string(size) +
                         " never reached the target loss");
                f << size << "," << seed << ",-1,0,0," << fmt6(target) << "\n";
                continue;
            }
            evalkit::FlopsLedger ledger;
            for (auto v : result.step_flops) ledger.record_step(v);
            double mean_tflops = ledger.mean_step() / flops::kPerTeraflop;
            double fd = evalkit::tflops_per_concept(
                static_cast<double>(result.steps_to_target), mean_tflops, size);
            f << size << "," << seed << "," << result.steps_to_target << ","
              << fmt6(mean_tflops) << "," << fmt6(fd) << "," << fmt6(target) << "\n";
            log_line("scale-sweep(flops): size " + std::to_string(size) + " seed " +
                     std::to_string(seed) + " N*=" + std::to_string(result.steps_to_target) +
                     " F_D=" + fmt6(fd));
        }
    }
}

void cmd_ablate(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm = load_base(cfg);
    SplitConcepts split = concept_split(cfg);
    auto concepts = conceptlab::take_concepts(split.held_in,
                                              static_cast<std::size_t>(cfg.ablate.n_concepts));
    auto manifests = conceptlab::gen_dataset(concepts, {}, cfg.data.train_per_concept,
                                             cfg.data.eval_per_concept, cfg.data.seed);
    evalkit::Judge judge(&lm);
    judge.calibrate(manifests.eval_held_in);

    auto f = open_out(cfg.out_dir + "/ablation_summary.csv");
    f << "depth,init,seed,best_factor,held_in_aggregate\n";
    std::map<std::pair<int, std::string>, std::vector<double>> cells;
    for (int depth : cfg.ablate.depths) {
        for (const std::string& init : cfg.ablate.inits) {
            for (std::uint64_t seed : cfg.ablate.seeds) {
                hypernet::HypernetConfig hc = hypernet_config(cfg);
                hc.n_blocks = depth;
                hc.init = hypernet::init_from_name(init);
                hypernet::Hypernet h(hc, seed, &lm);
                hypernet::TrainOpts topts;
                topts.base_lr = cfg.train.base_lr;
                topts.depth_lr_rule = true;  // lr(n) = base * sqrt(20/n)
                topts.epochs = cfg.ablate.epochs;
                topts.batch = cfg.train.batch;
                topts.alpha_train = cfg.train.alpha_train;
                topts.seed = seed;
                topts.intervention_layer = cfg.intervention_layer;
                hypernet::train_e2e(h, lm, manifests.train, topts);

                evalkit::EvalOpts eopts = eval_opts(cfg);
                eopts.seed = seed;
                auto report = evalkit::evaluate(hypernet_method(h, lm, cfg.intervention_layer),
                                                lm, manifests.eval_held_in,
                                                cfg.eval.factor_grid, judge, eopts);
                f << depth << "," << init << "," << seed << "," << fmt6(report.best_factor)
                  << "," << fmt6(report.best_aggregate) << "\n";
                cells[{depth, init}].push_back(report.best_aggregate);
                log_line("ablate: depth " + std::to_string(depth) + " init " + init +
                         " seed " + std::to_string(seed) + " -> " +
                         fmt6(report.best_aggregate));
            }
        }
    }
    auto g = open_out(cfg.out_dir + "/ablation_grid.csv");
    g << "depth";
    for (const auto& init : cfg.ablate.inits) g << "," << init << "_median";
    g << "\n";
    for (int depth : cfg.ablate.depths) {
        g << depth;
        for (const auto& init : cfg.ablate.inits) {
            auto v = cells[{depth, init}];
            std::sort(v.begin(), v.end());
            double median = v.empty() ? 0.0 : v[v.size() / 2];
            g << "," << fmt6(median);
        }
        g << "\n";
    }
}

void cmd_analyze(const ExperimentConfig& cfg) {
    tinylm::TinyLm lm = load_base(cfg);
    hypernet::Hypernet h(hypernet_config(cfg), cfg.seed, &lm);
    h.load_tensors(load_checkpoint(cfg.out_dir + "/hypernet.ckpt"));

    auto held_out = read_manifest(cfg.out_dir + "/eval_held_out.jsonl");
    auto held_in = read_manifest(cfg.out_dir + "/eval_held_in.jsonl");
    const auto& manifest = held_out.empty() ? held_in : held_out;
    if (manifest.empty()) throw DataError("analyze: no evaluation manifests found");

    auto method = hypernet_method(h, lm, cfg.intervention_layer);
    std::vector<std::pair<int, std::vector<float>>> vectors;
    for (const auto& task : manifest)
        vectors.emplace_back(task.concept_id, method.vector_for(task).values);

    std::vector<int> ids;
    auto matrix = evalkit::cosine_similarity_matrix(vectors, &ids);
    {
        auto f = open_out(cfg.out_dir + "/cosine_matrix.csv");
        f << "concept_id";
        for (int id : ids) f << "," << id;
        f << "\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            f << ids[i];
            for (std::size_t j = 0; j < ids.size(); ++j) f << "," << fmt6(matrix[i][j]);
            f << "\n";
        }
    }

    {
        std::vector<std::vector<float>> raw;
        for (const auto& [cid, v] : vectors) raw.push_back(v);
        auto res = evalkit::pca(raw, 2);
        auto f = open_out(cfg.out_dir + "/pca_projections.csv");
        f << "concept_id,pc1,pc2,var1,var2\n";
        for (std::size_t i = 0; i < raw.size(); ++i)
            f << vectors[i].first << "," << fmt6(res.projections[i][0]) << ","
              << fmt6(res.projections[i][1]) << "," << fmt6(res.variances[0]) << ","
              << fmt6(res.variances[1]) << "\n";
    }

    if (h.config().variant == hypernet::Variant::CrossAttention) {
        auto f = open_out(cfg.out_dir + "/attention.jsonl");
        auto g = open_out(cfg.out_dir + "/attention_stats.csv");
        g << "example,block,head,kind,rows,cols,max_column_mass\n";
        std::set<int> seen;
        int emitted = 0;
        for (const auto& task : manifest) {
            if (emitted >= 4) break;
            if (!seen.insert(task.concept_id).second) continue;
            auto dump = evalkit::dump_attention(h, lm, task.s, task.x,
                                                cfg.intervention_layer);
            for (const auto& mat : dump.mats) {
                ordered_json row;
                row["example"] = emitted;
                row["concept_id"] = task.concept_id;
                row["block"] = mat.block;
                row["head"] = mat.head;
                row["kind"] = mat.kind;
                row["rows"] = mat.rows;
                row["cols"] = mat.cols;
                row["weights"] = mat.w;
                f << row.dump() << "\n";
                g << emitted << "," << mat.block << "," << mat.head << "," << mat.kind << ","
                  << mat.rows << "," << mat.cols << "," << fmt6(evalkit::max_column_mass(mat))
                  << "\n";
            }
            ++emitted;
        }
    }

    // Curve fit over the compute-study output when enough sizes exist.
    {
        ordered_json doc;
        doc["reference_reft_tflops"] = evalkit::kReftReferenceTflops;
        doc["reference_reft_tflops_spread"] = evalkit::kReftReferenceTflopsSpread;
        std::ifstream fin(cfg.out_dir + "/flops_per_concept.csv");
        std::map<int, std::vector<double>> by_c;
        if (fin) {
            std::string line;
            std::getline(fin, line);  // header
            while (std::getline(fin, line)) {
                if (line.empty()) continue;
                int c = 0, seed = 0, n_star = 0;
                double mean_tf = 0, fd = 0, target = 0;
                if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf,%lf", &c, &seed, &n_star,
                                &mean_tf, &fd, &target) == 6 &&
                    n_star > 0)
                    by_c[c].push_back(fd);
            }
        }
        std::vector<std::pair<double, double>> pts;
        for (auto& [c, v] : by_c) {
            std::sort(v.begin(), v.end());
            pts.emplace_back(static_cast<double>(c), v[v.size() / 2]);
        }
        if (pts.size() >= 4) {
            auto fit = evalkit::fit_flops_curve(pts);
            doc["fitted"] = true;
            doc["a"] = fit.a;
            doc["b"] = fit.b;
            doc["d"] = fit.d;
            doc["r_squared"] = fit.r_squared;
        } else {
            doc["fitted"] = false;
            doc["reason"] = "need >= 4 distinct dataset sizes in flops_per_concept.csv";
        }
        auto f = open_out(cfg.out_dir + "/flops_fit.json");
        f << doc.dump(2) << "\n";
    }
    log_line("analyze: artifacts written to " + cfg.out_dir);
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"pretrain",       "gen-data", "train",
                                                   "train-baseline", "eval",     "scale-sweep",
                                                   "ablate",         "analyze"};
    return names;
}

void run_command(const std::string& command, const ExperimentConfig& cfg) {
    if (command == "pretrain") return cmd_pretrain(cfg);
    if (command == "gen-data") return cmd_gen_data(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "train-baseline") return cmd_train_baseline(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "scale-sweep") return cmd_scale_sweep(cfg);
    if (command == "ablate") return cmd_ablate(cfg);
    if (command == "analyze") return cmd_analyze(cfg);
    throw LookupError("unknown command: " + command);
}

}  // namespace steerkit::orchestrate
