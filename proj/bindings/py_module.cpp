#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "steerkit/baselines.hpp"
#include "steerkit/checkpoint.hpp"
#include "steerkit/conceptlab.hpp"
#include "steerkit/config.hpp"
#include "steerkit/evalkit.hpp"
#include "steerkit/hypernet.hpp"
#include "steerkit/orchestrate.hpp"
#include "steerkit/tinylm.hpp"

namespace py = pybind11;
using namespace steerkit;
namespace cl = steerkit::conceptlab;

namespace {

py::array_t<float> to_array(const TensorF& t) {
    std::vector<py::ssize_t> shape;
    for (auto d : t.shape()) shape.push_back(static_cast<py::ssize_t>(d));
    if (shape.empty()) shape.push_back(1);
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), t.value().data(), t.numel() * sizeof(float));
    return out;
}

cl::SteeringTask make_task(int concept_id, const std::vector<int>& x) {
    auto spec = cl::ConceptSpec::by_id(concept_id);
    cl::SteeringTask t;
    t.x = x;
    t.s = spec.steering_prompt();
    t.y = spec.transform(cl::solve(x));
    t.concept_id = concept_id;
    t.task = cl::task_from_prompt(x);
    t.split = "eval-held-in";
    return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Hypernetwork-generated activation steering on a synthetic micro-world";

    // ---- micro-world ----
    auto vocab = m.def_submodule("vocab");
    vocab.attr("BOS") = cl::vocab::BOS;
    vocab.attr("EOS") = cl::vocab::EOS;
    vocab.attr("SEP") = cl::vocab::SEP;
    vocab.attr("VOCAB_SIZE") = cl::vocab::VOCAB_SIZE;

    py::class_<cl::ConceptSpec>(m, "ConceptSpec")
        .def_static("by_id", &cl::ConceptSpec::by_id)
        .def_readonly("id", &cl::ConceptSpec::id)
        .def_property_readonly("family",
                               [](const cl::ConceptSpec& c) {
                                   return cl::concept_family_name(c.family);
                               })
        .def_readonly("param", &cl::ConceptSpec::param)
        .def("steering_prompt", &cl::ConceptSpec::steering_prompt)
        .def("transform", &cl::ConceptSpec::transform)
        .def("check", &cl::ConceptSpec::check);

    py::class_<cl::SteeringTask>(m, "SteeringTask")
        .def_readonly("x", &cl::SteeringTask::x)
        .def_readonly("s", &cl::SteeringTask::s)
        .def_readonly("y", &cl::SteeringTask::y)
        .def_readonly("concept_id", &cl::SteeringTask::concept_id)
        .def_readonly("split", &cl::SteeringTask::split);

    m.def("solve", &cl::solve, "Reference solver for a base prompt");
    m.def("gen_corpus", &cl::gen_corpus, py::arg("seed"), py::arg("n_lines"));
    m.def("concept_count",
          [] { return cl::kNumConceptFamilies * cl::vocab::N_PARAMS; });
    m.def(
        "task_check",
        [](const std::vector<int>& out, const std::vector<int>& x) {
            return cl::task_check(out, cl::task_from_prompt(x), x);
        },
        py::arg("output"), py::arg("x"));
    m.def(
        "concept_check",
        [](const std::vector<int>& out, int concept_id) {
            return cl::concept_check(out, cl::ConceptSpec::by_id(concept_id));
        },
        py::arg("output"), py::arg("concept_id"));
    m.def("make_task", &make_task, py::arg("concept_id"), py::arg("x"));

    // ---- base LM ----
    py::class_<tinylm::LmConfig>(m, "LmConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &tinylm::LmConfig::vocab_size)
        .def_readwrite("d_model", &tinylm::LmConfig::d_model)
        .def_readwrite("n_layers", &tinylm::LmConfig::n_layers)
        .def_readwrite("n_heads", &tinylm::LmConfig::n_heads)
        .def_readwrite("d_ff", &tinylm::LmConfig::d_ff)
        .def_readwrite("max_seq_len", &tinylm::LmConfig::max_seq_len);

    py::class_<tinylm::TinyLm>(m, "TinyLm")
        .def(py::init<const tinylm::LmConfig&, std::uint64_t>(), py::arg("config"),
             py::arg("seed"))
        .def("freeze", &tinylm::TinyLm::freeze)
        .def("frozen", &tinylm::TinyLm::frozen)
        .def("checksum", &tinylm::TinyLm::checksum)
        .def(
            "forward",
            [](const tinylm::TinyLm& lm, const std::vector<int>& tokens) {
                TapeF::Pause pause;
                return to_array(lm.forward(tokens));
            },
            py::arg("tokens"))
        .def(
            "forward_steered",
            [](const tinylm::TinyLm& lm, const std::vector<int>& tokens, int layer,
               float factor, const std::vector<float>& delta) {
                TapeF::Pause pause;
                auto iv = tinylm::InterventionSpec::from_values(layer, factor, delta);
                return to_array(lm.forward(tokens, &iv));
            },
            py::arg("tokens"), py::arg("layer"), py::arg("factor"), py::arg("delta"))
        .def(
            "generate",
            [](const tinylm::TinyLm& lm, const std::vector<int>& prompt, int max_new,
               const std::string& mode, double temperature, std::uint64_t seed) {
                tinylm::DecodeOpts d;
                d.mode = mode == "sample" ? tinylm::DecodeOpts::Mode::Sample
                                          : tinylm::DecodeOpts::Mode::Greedy;
                d.temperature = temperature;
                d.max_new = max_new;
                d.eos_id = cl::vocab::EOS;
                d.seed = seed;
                return lm.generate(prompt, nullptr, d);
            },
            py::arg("prompt"), py::arg("max_new") = 16, py::arg("mode") = "greedy",
            py::arg("temperature") = 1.0, py::arg("seed") = 0)
        .def("perplexity", &tinylm::TinyLm::perplexity)
        .def("save",
             [](const tinylm::TinyLm& lm, const std::string& path) {
                 save_checkpoint(lm.named_tensors(), path);
             })
        .def("load", [](tinylm::TinyLm& lm, const std::string& path) {
            lm.load_tensors(load_checkpoint(path));
        });

    m.def("generation_prompt", &cl::generation_prompt);

    // ---- hypernetwork ----
    py::class_<hypernet::HypernetConfig>(m, "HypernetConfig")
        .def(py::init<>())
        .def_readwrite("n_blocks", &hypernet::HypernetConfig::n_blocks)
        .def_readwrite("n_heads", &hypernet::HypernetConfig::n_heads)
        .def_readwrite("n_cross_heads", &hypernet::HypernetConfig::n_cross_heads)
        .def_readwrite("d_model", &hypernet::HypernetConfig::d_model)
        .def_readwrite("d_ff", &hypernet::HypernetConfig::d_ff)
        .def_readwrite("unit_norm_output", &hypernet::HypernetConfig::unit_norm_output)
        .def_property(
            "variant",
            [](const hypernet::HypernetConfig& c) { return hypernet::variant_name(c.variant); },
            [](hypernet::HypernetConfig& c, const std::string& v) {
                c.variant = hypernet::variant_from_name(v);
            })
        .def_property(
            "init",
            [](const hypernet::HypernetConfig& c) { return hypernet::init_name(c.init); },
            [](hypernet::HypernetConfig& c, const std::string& v) {
                c.init = hypernet::init_from_name(v);
            });

    py::class_<hypernet::Hypernet>(m, "Hypernet")
        .def(py::init([](const hypernet::HypernetConfig& cfg, std::uint64_t seed,
                         const tinylm::TinyLm* base) {
                 return hypernet::Hypernet(cfg, seed, base);
             }),
             py::arg("config"), py::arg("seed"), py::arg("base") = nullptr,
             py::keep_alive<1, 4>())
        .def(
            "generate_vector",
            [](const hypernet::Hypernet& h, const tinylm::TinyLm& lm,
               const std::vector<int>& s, const std::vector<int>& x, int layer) {
                const tinylm::ResidualCapture* acts_ptr = nullptr;
                tinylm::ResidualCapture acts;
                if (h.config().variant == hypernet::Variant::CrossAttention) {
                    acts = lm.capture_residual(cl::generation_prompt(x), layer);
                    acts_ptr = &acts;
                }
                auto sv = h.generate_vector(s, &x, acts_ptr);
                return py::make_tuple(sv.values, sv.normalized);
            },
            py::arg("lm"), py::arg("s"), py::arg("x"), py::arg("layer"))
        .def("save",
             [](const hypernet::Hypernet& h, const std::string& path) {
                 save_checkpoint(h.named_tensors(), path);
             })
        .def("load", [](hypernet::Hypernet& h, const std::string& path) {
            h.load_tensors(load_checkpoint(path));
        });

    m.def(
        "train_e2e",
        [](hypernet::Hypernet& h, const tinylm::TinyLm& base,
           const std::vector<cl::SteeringTask>& data, int epochs, int batch, double base_lr,
           int layer, std::uint64_t seed) {
            hypernet::TrainOpts opts;
            opts.epochs = epochs;
            opts.batch = batch;
            opts.base_lr = base_lr;
            opts.intervention_layer = layer;
            opts.seed = seed;
            auto r = hypernet::train_e2e(h, base, data, opts);
            py::dict out;
            out["loss_trace"] = r.loss_trace;
            out["steps"] = r.steps;
            out["total_flops"] = r.total_flops;
            return out;
        },
        py::arg("hypernet"), py::arg("base"), py::arg("data"), py::arg("epochs") = 1,
        py::arg("batch") = 8, py::arg("base_lr") = 2e-4, py::arg("layer") = 4,
        py::arg("seed") = 0);

    // ---- baselines ----
    m.def("reft_latent", &baselines::reft_latent);
    m.def("diffmean", [](const std::vector<std::vector<float>>& pos,
                         const std::vector<std::vector<float>>& neg) {
        return baselines::diffmean(pos, neg).values;
    });
    m.def("prompt_steer", &baselines::prompt_steer, py::arg("s"), py::arg("x"),
          py::arg("max_seq_len") = 128);

    // ---- metrics and analyses ----
    m.def(
        "harmonic_mean",
        [](int c, int i, int f) {
            return evalkit::harmonic_mean({c, i, f});
        },
        py::arg("concept_score"), py::arg("instruct_score"), py::arg("fluency_score"));
    m.def("tflops_per_concept", &evalkit::tflops_per_concept, py::arg("n_steps_to_target"),
          py::arg("mean_step_tflops"), py::arg("n_concepts"));
    m.def("fit_flops_curve", [](const std::vector<std::pair<double, double>>& pts) {
        auto fit = evalkit::fit_flops_curve(pts);
        py::dict out;
        out["a"] = fit.a;
        out["b"] = fit.b;
        out["d"] = fit.d;
        out["r_squared"] = fit.r_squared;
        return out;
    });
    m.def("pca", [](const std::vector<std::vector<float>>& vecs, int k) {
        auto res = evalkit::pca(vecs, k);
        py::dict out;
        out["projections"] = res.projections;
        out["variances"] = res.variances;
        out["components"] = res.components;
        return out;
    });
    m.def("cosine_similarity_matrix",
          [](const std::vector<std::pair<int, std::vector<float>>>& vectors) {
              std::vector<int> ids;
              auto mat = evalkit::cosine_similarity_matrix(vectors, &ids);
              return py::make_tuple(ids, mat);
          });

    // ---- config and orchestration ----
    m.def("default_config", [] {
        return config::serialize_config(config::parse_config("{}"));
    });
    m.def("parse_config", [](const std::string& text) {
        return config::serialize_config(config::parse_config(text));
    });
    m.def(
        "run_command",
        [](const std::string& command, const std::string& config_json) {
            orchestrate::run_command(command, config::parse_config(config_json));
        },
        py::arg("command"), py::arg("config_json") = "{}");

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
}
