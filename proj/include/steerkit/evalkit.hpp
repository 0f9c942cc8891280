#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "steerkit/conceptlab.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/hypernet.hpp"
#include "steerkit/tinylm.hpp"

namespace steerkit::evalkit {

struct ScoreTriple {
    int concept_score = 0;
    int instruct_score = 0;
    int fluency_score = 0;
};

// 3 / (1/c + 1/i + 1/f); 0 whenever any component is 0.
double harmonic_mean(const ScoreTriple& t);

struct JudgeThresholds {
    double tau1 = 0.0;
    double tau2 = 0.0;
};

// Three-axis rule judge. The concept and instruct axes come from the
// micro-world checkers; fluency maps the unsteered LM's standalone perplexity
// of the output through tau1 < tau2, with a repetition-degeneracy override.
class Judge {
public:
    explicit Judge(const tinylm::TinyLm* lm) : lm_(lm) {}

    // tau1 = 90th-percentile, tau2 = 1.25x max, over the standalone
    // perplexities of the held-in gold labels.
    void calibrate(const std::vector<conceptlab::SteeringTask>& held_in_eval);
    bool calibrated() const { return calibrated_; }
    JudgeThresholds thresholds() const { return th_; }
    void set_thresholds(JudgeThresholds th) {
        th_ = th;
        calibrated_ = true;
    }

    ScoreTriple judge(const std::vector<int>& generation,
                      const conceptlab::SteeringTask& task) const;

    double fluency_perplexity(const std::vector<int>& output) const;

    // Longest identical-token run above kMaxRun counts as degenerate.
    static bool degenerate(const std::vector<int>& output);
    static constexpr int kMaxRun = 4;

private:
    const tinylm::TinyLm* lm_;
    JudgeThresholds th_;
    bool calibrated_ = false;
};

struct EvalRecord {
    std::string method;
    std::string split;
    double factor = 0.0;  // -1 for methods evaluated without a factor
    int concept_id = -1;
    int example_index = -1;
    ScoreTriple scores;
    double steering_score = 0.0;
};

struct EvalReport {
    std::string method;
    std::string split;
    std::vector<double> factor_grid;  // empty for prompt steering
    std::vector<std::map<int, double>> per_concept;  // parallel to factors (or 1 entry)
    std::vector<double> aggregate;                   // mean of per-concept means
    double best_factor = -1.0;
    double best_aggregate = 0.0;
    std::map<int, double> best_per_concept;
    std::vector<EvalRecord> records;
};

struct MethodSpec {
    std::string name;
    // Per-example steering vector; unused when prompt_steering is set.
    std::function<hypernet::SteeringVector(const conceptlab::SteeringTask&)> vector_for;
    bool prompt_steering = false;
};

struct EvalOpts {
    int intervention_layer = 4;
    tinylm::DecodeOpts decode;
    std::uint64_t seed = 0;
};

// Sweeps the factor grid (which must contain 0 and be nonempty), judges every
// generation, and reports the best factor by aggregate score. Prompt steering
// runs a single pass with no intervention.
EvalReport evaluate(const MethodSpec& method, const tinylm::TinyLm& lm,
                    const std::vector<conceptlab::SteeringTask>& manifest,
                    const std::vector<double>& factor_grid, const Judge& judge,
                    const EvalOpts& opts);

// Mean pairwise cosine similarity between the vectors of concept i and j;
// within-concept diagonal uses distinct pairs when two or more vectors exist.
std::vector<std::vector<double>> cosine_similarity_matrix(
    const std::vector<std::pair<int, std::vector<float>>>& vectors,
    std::vector<int>* concept_ids_out = nullptr);

struct PcaResult {
    std::vector<std::vector<double>> projections;  // N x k
    std::vector<double> variances;                 // k, non-increasing
    std::vector<std::vector<double>> components;   // k x d
};

// Mean-centered PCA; components are leading eigenvectors of the sample
// covariance (divisor N-1).
PcaResult pca(const std::vector<std::vector<float>>& vectors, int n_components = 2);

struct FlopsLedger {
    std::vector<std::uint64_t> per_step;
    std::uint64_t cumulative = 0;

    void record_step(std::uint64_t f) {
        per_step.push_back(f);
        cumulative += f;
    }
    double mean_step() const;
};

// Paper-scale reference cost of training one dictionary vector, kept for
// reporting next to the fitted curve (not recomputed at desk scale).
inline constexpr double kReftReferenceTflops = 666.27;
inline constexpr double kReftReferenceTflopsSpread = 20.74;

// F_D(c) = N* . mean_step / c
double tflops_per_concept(double n_steps_to_target, double mean_step_tflops, int n_concepts);

struct FitParams {
    double a = 0.0, b = 0.0, d = 0.0;
    double r_squared = 0.0;
};

struct CurveFitError : NumericError {
    CurveFitError(const std::string& msg, FitParams best_so_far)
        : NumericError(msg), best(best_so_far) {}
    FitParams best;
};

// Nonlinear least squares for f(c) = a + b*exp(d*c): multi-start grid over d
// with the linear pair solved exactly, then damped Gauss-Newton refinement.
FitParams fit_flops_curve(const std::vector<std::pair<double, double>>& points);

// Self- and cross-attention probabilities for every block and head of a
// cross-attention hypernetwork run on (s, x).
hypernet::AttentionDump dump_attention(const hypernet::Hypernet& h,
                                       const tinylm::TinyLm& lm, const std::vector<int>& s,
                                       const std::vector<int>& x, int layer);

// Largest column mass of an attention matrix, normalized by the row count.
double max_column_mass(const hypernet::AttentionDump::Mat& mat);

}  // namespace steerkit::evalkit
