#include "steerkit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "steerkit/errors.hpp"

namespace steerkit::config {

using nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
void get_to(const ordered_json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        obj.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: type mismatch for key \"" + std::string(key) + "\" in " +
                          where);
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    hypernet_cfg.validate();
    if (intervention_layer < 0 || intervention_layer >= model.n_layers)
        throw ConfigError("config: intervention_layer out of range");
    if (train.base_lr <= 0.0 || baseline.lr <= 0.0 || pretrain.lr <= 0.0)
        throw ConfigError("config: learning rates must be positive");
    if (data.n_concepts < 1) throw ConfigError("config: data.n_concepts must be >= 1");
    if (!(data.heldout_fraction > 0.0 && data.heldout_fraction < 1.0))
        throw ConfigError("config: data.heldout_fraction must lie in (0,1)");
    if (eval.method != "hypernet" && eval.method != "reft" && eval.method != "diffmean" &&
        eval.method != "prompt")
        throw ConfigError("config: unknown eval.method: " + eval.method);
    if (eval.split != "held-in" && eval.split != "held-out")
        throw ConfigError("config: unknown eval.split: " + eval.split);
    if (eval.decode != "greedy" && eval.decode != "sample")
        throw ConfigError("config: unknown eval.decode: " + eval.decode);
    if (baseline.lambda < 0.0) throw ConfigError("config: baseline.lambda must be >= 0");
    if (baseline.k < 1) throw ConfigError("config: baseline.k must be >= 1");
    if (hypernet_cfg.d_model != model.d_model)
        throw ConfigError("config: hypernet d_model must match the base model");
}

ExperimentConfig parse_config(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");

    ExperimentConfig cfg;
    check_keys(doc, "top level",
               {"seed", "out_dir", "intervention_layer", "model", "hypernet", "pretrain",
                "train", "baseline", "data", "eval", "sweep", "ablate"});
    get_to(doc, "seed", cfg.seed, "top level");
    get_to(doc, "out_dir", cfg.out_dir, "top level");
    get_to(doc, "intervention_layer", cfg.intervention_layer, "top level");

    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        check_keys(m, "model",
                   {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                    "positional"});
        get_to(m, "vocab_size", cfg.model.vocab_size, "model");
        get_to(m, "d_model", cfg.model.d_model, "model");
        get_to(m, "n_layers", cfg.model.n_layers, "model");
        get_to(m, "n_heads", cfg.model.n_heads, "model");
        get_to(m, "d_ff", cfg.model.d_ff, "model");
        get_to(m, "max_seq_len", cfg.model.max_seq_len, "model");
        get_to(m, "positional", cfg.model.positional, "model");
    }
    if (doc.contains("hypernet")) {
        const auto& h = doc.at("hypernet");
        check_keys(h, "hypernet",
                   {"variant", "vocab_size", "n_blocks", "n_heads", "n_cross_heads",
                    "d_model", "d_ff", "max_seq_len", "unit_norm_output", "init"});
        std::string variant = hypernet::variant_name(cfg.hypernet_cfg.variant);
        std::string init = hypernet::init_name(cfg.hypernet_cfg.init);
        get_to(h, "variant", variant, "hypernet");
        get_to(h, "vocab_size", cfg.hypernet_cfg.vocab_size, "hypernet");
        get_to(h, "n_blocks", cfg.hypernet_cfg.n_blocks, "hypernet");
        get_to(h, "n_heads", cfg.hypernet_cfg.n_heads, "hypernet");
        get_to(h, "n_cross_heads", cfg.hypernet_cfg.n_cross_heads, "hypernet");
        get_to(h, "d_model", cfg.hypernet_cfg.d_model, "hypernet");
        get_to(h, "d_ff", cfg.hypernet_cfg.d_ff, "hypernet");
        get_to(h, "max_seq_len", cfg.hypernet_cfg.max_seq_len, "hypernet");
        get_to(h, "unit_norm_output", cfg.hypernet_cfg.unit_norm_output, "hypernet");
        get_to(h, "init", init, "hypernet");
        cfg.hypernet_cfg.variant = hypernet::variant_from_name(variant);
        cfg.hypernet_cfg.init = hypernet::init_from_name(init);
    }
    if (doc.contains("pretrain")) {
        const auto& p = doc.at("pretrain");
        check_keys(p, "pretrain",
                   {"steps", "batch_lines", "lr", "warmup", "corpus_lines", "corpus_seed"});
        get_to(p, "steps", cfg.pretrain.steps, "pretrain");
        get_to(p, "batch_lines", cfg.pretrain.batch_lines, "pretrain");
        get_to(p, "lr", cfg.pretrain.lr, "pretrain");
        get_to(p, "warmup", cfg.pretrain.warmup, "pretrain");
        get_to(p, "corpus_lines", cfg.pretrain.corpus_lines, "pretrain");
        get_to(p, "corpus_seed", cfg.pretrain.corpus_seed, "pretrain");
    }
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        check_keys(t, "train", {"base_lr", "depth_lr_rule", "epochs", "batch", "alpha_train"});
        get_to(t, "base_lr", cfg.train.base_lr, "train");
        get_to(t, "depth_lr_rule", cfg.train.depth_lr_rule, "train");
        get_to(t, "epochs", cfg.train.epochs, "train");
        get_to(t, "batch", cfg.train.batch, "train");
        get_to(t, "alpha_train", cfg.train.alpha_train, "train");
    }
    if (doc.contains("baseline")) {
        const auto& b = doc.at("baseline");
        check_keys(b, "baseline", {"lambda", "k", "lr", "epochs", "batch"});
        get_to(b, "lambda", cfg.baseline.lambda, "baseline");
        get_to(b, "k", cfg.baseline.k, "baseline");
        get_to(b, "lr", cfg.baseline.lr, "baseline");
        get_to(b, "epochs", cfg.baseline.epochs, "baseline");
        get_to(b, "batch", cfg.baseline.batch, "baseline");
    }
    if (doc.contains("data")) {
        const auto& d = doc.at("data");
        check_keys(d, "data",
                   {"n_concepts", "train_per_concept", "eval_per_concept", "heldout_fraction",
                    "seed"});
        get_to(d, "n_concepts", cfg.data.n_concepts, "data");
        get_to(d, "train_per_concept", cfg.data.train_per_concept, "data");
        get_to(d, "eval_per_concept", cfg.data.eval_per_concept, "data");
        get_to(d, "heldout_fraction", cfg.data.heldout_fraction, "data");
        get_to(d, "seed", cfg.data.seed, "data");
    }
    if (doc.contains("eval")) {
        const auto& e = doc.at("eval");
        check_keys(e, "eval",
                   {"method", "split", "decode", "temperature", "max_new", "factor_grid"});
        get_to(e, "method", cfg.eval.method, "eval");
        get_to(e, "split", cfg.eval.split, "eval");
        get_to(e, "decode", cfg.eval.decode, "eval");
        get_to(e, "temperature", cfg.eval.temperature, "eval");
        get_to(e, "max_new", cfg.eval.max_new, "eval");
        get_to(e, "factor_grid", cfg.eval.factor_grid, "eval");
    }
    if (doc.contains("sweep")) {
        const auto& s = doc.at("sweep");
        check_keys(s, "sweep",
                   {"sizes", "seeds", "flops_mode", "flops_sizes", "flops_eval_concepts",
                    "target_margin", "eval_every", "max_steps"});
        get_to(s, "sizes", cfg.sweep.sizes, "sweep");
        get_to(s, "seeds", cfg.sweep.seeds, "sweep");
        get_to(s, "flops_mode", cfg.sweep.flops_mode, "sweep");
        get_to(s, "flops_sizes", cfg.sweep.flops_sizes, "sweep");
        get_to(s, "flops_eval_concepts", cfg.sweep.flops_eval_concepts, "sweep");
        get_to(s, "target_margin", cfg.sweep.target_margin, "sweep");
        get_to(s, "eval_every", cfg.sweep.eval_every, "sweep");
        get_to(s, "max_steps", cfg.sweep.max_steps, "sweep");
    }
    if (doc.contains("ablate")) {
        const auto& a = doc.at("ablate");
        check_keys(a, "ablate", {"depths", "inits", "epochs", "n_concepts", "seeds"});
        get_to(a, "depths", cfg.ablate.depths, "ablate");
        get_to(a, "inits", cfg.ablate.inits, "ablate");
        get_to(a, "epochs", cfg.ablate.epochs, "ablate");
        get_to(a, "n_concepts", cfg.ablate.n_concepts, "ablate");
        get_to(a, "seeds", cfg.ablate.seeds, "ablate");
    }

    cfg.validate();
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
    ordered_json doc;
    doc["seed"] = cfg.seed;
    doc["out_dir"] = cfg.out_dir;
    doc["intervention_layer"] = cfg.intervention_layer;
    doc["model"] = {{"vocab_size", cfg.model.vocab_size},
                    {"d_model", cfg.model.d_model},
                    {"n_layers", cfg.model.n_layers},
                    {"n_heads", cfg.model.n_heads},
                    {"d_ff", cfg.model.d_ff},
                    {"max_seq_len", cfg.model.max_seq_len},
                    {"positional", cfg.model.positional}};
    doc["hypernet"] = {{"variant", hypernet::variant_name(cfg.hypernet_cfg.variant)},
                       {"vocab_size", cfg.hypernet_cfg.vocab_size},
                       {"n_blocks", cfg.hypernet_cfg.n_blocks},
                       {"n_heads", cfg.hypernet_cfg.n_heads},
                       {"n_cross_heads", cfg.hypernet_cfg.n_cross_heads},
                       {"d_model", cfg.hypernet_cfg.d_model},
                       {"d_ff", cfg.hypernet_cfg.d_ff},
                       {"max_seq_len", cfg.hypernet_cfg.max_seq_len},
                       {"unit_norm_output", cfg.hypernet_cfg.unit_norm_output},
                       {"init", hypernet::init_name(cfg.hypernet_cfg.init)}};
    doc["pretrain"] = {{"steps", cfg.pretrain.steps},
                       {"batch_lines", cfg.pretrain.batch_lines},
                       {"lr", cfg.pretrain.lr},
                       {"warmup", cfg.pretrain.warmup},
                       {"corpus_lines", cfg.pretrain.corpus_lines},
                       {"corpus_seed", cfg.pretrain.corpus_seed}};
    doc["train"] = {{"base_lr", cfg.train.base_lr},
                    {"depth_lr_rule", cfg.train.depth_lr_rule},
                    {"epochs", cfg.train.epochs},
                    {"batch", cfg.train.batch},
                    {"alpha_train", cfg.train.alpha_train}};
    doc["baseline"] = {{"lambda", cfg.baseline.lambda},
                       {"k", cfg.baseline.k},
                       {"lr", cfg.baseline.lr},
                       {"epochs", cfg.baseline.epochs},
                       {"batch", cfg.baseline.batch}};
    doc["data"] = {{"n_concepts", cfg.data.n_concepts},
                   {"train_per_concept", cfg.data.train_per_concept},
                   {"eval_per_concept", cfg.data.eval_per_concept},
                   {"heldout_fraction", cfg.data.heldout_fraction},
                   {"seed", cfg.data.seed}};
    doc["eval"] = {{"method", cfg.eval.method},
                   {"split", cfg.eval.split},
                   {"decode", cfg.eval.decode},
                   {"temperature", cfg.eval.temperature},
                   {"max_new", cfg.eval.max_new},
                   {"factor_grid", cfg.eval.factor_grid}};
    doc["sweep"] = {{"sizes", cfg.sweep.sizes},
                    {"seeds", cfg.sweep.seeds},
                    {"flops_mode", cfg.sweep.flops_mode},
                    {"flops_sizes", cfg.sweep.flops_sizes},
                    {"flops_eval_concepts", cfg.sweep.flops_eval_concepts},
                    {"target_margin", cfg.sweep.target_margin},
                    {"eval_every", cfg.sweep.eval_every},
                    {"max_steps", cfg.sweep.max_steps}};
    doc["ablate"] = {{"depths", cfg.ablate.depths},
                     {"inits", cfg.ablate.inits},
                     {"epochs", cfg.ablate.epochs},
                     {"n_concepts", cfg.ablate.n_concepts},
                     {"seeds", cfg.ablate.seeds}};
    return doc.dump(2) + "\n";
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace steerkit::config
