#include "steerkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "steerkit/baselines.hpp"

namespace steerkit::evalkit {

using conceptlab::SteeringTask;

double harmonic_mean(const ScoreTriple& t) {
    if (t.concept_score <= 0 || t.instruct_score <= 0 || t.fluency_score <= 0) return 0.0;
    return 3.0 / (1.0 / t.concept_score + 1.0 / t.instruct_score + 1.0 / t.fluency_score);
}

// ---- judge ----

bool Judge::degenerate(const std::vector<int>& output) {
    int run = 1;
    for (std::size_t i = 1; i < output.size(); ++i) {
        run = output[i] == output[i - 1] ? run + 1 : 1;
        if (run > kMaxRun) return true;
    }
    return false;
}

double Judge::fluency_perplexity(const std::vector<int>& output) const {
    return lm_->perplexity(conceptlab::scoring_sequence(output));
}

void Judge::calibrate(const std::vector<SteeringTask>& held_in_eval) {
    if (held_in_eval.empty()) throw DataError("judge: empty calibration set");
    std::vector<double> ppls;
    ppls.reserve(held_in_eval.size());
    for (const auto& task : held_in_eval) ppls.push_back(fluency_perplexity(task.y));
    std::sort(ppls.begin(), ppls.end());
    auto rank = static_cast<std::size_t>(
        std::ceil(0.9 * static_cast<double>(ppls.size())));
    th_.tau1 = ppls[std::min(ppls.size() - 1, rank == 0 ? 0 : rank - 1)];
    th_.tau2 = 1.25 * ppls.back();
    calibrated_ = true;
}

ScoreTriple Judge::judge(const std::vector<int>& generation, const SteeringTask& task) const {
    if (!calibrated_) throw ConfigError("judge: thresholds not calibrated");
    ScoreTriple t;
    if (generation.empty()) return t;
    auto spec = conceptlab::ConceptSpec::by_id(task.concept_id);
    t.concept_score = conceptlab::concept_check(generation, spec);
    t.instruct_score = conceptlab::task_check(generation, task.task, task.x);
    if (degenerate(generation)) {
        t.fluency_score = 0;
    } else {
        double ppl = fluency_perplexity(generation);
        t.fluency_score = ppl <= th_.tau1 ? 2 : (ppl <= th_.tau2 ? 1 : 0);
    }
    return t;
}

// ---- evaluation ----

namespace {

void aggregate_factor(EvalReport& report, const std::vector<EvalRecord>& recs) {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : recs) {
        auto& [sum, n] = acc[r.concept_id];
        sum += r.steering_score;
        ++n;
    }
    std::map<int, double> means;
    double total = 0.0;
    for (const auto& [cid, sn] : acc) {
        means[cid] = sn.first / sn.second;
        total += means[cid];
    }
    report.per_concept.push_back(means);
    report.aggregate.push_back(acc.empty() ? 0.0 : total / static_cast<double>(acc.size()));
}

}  // namespace

EvalReport evaluate(const MethodSpec& method, const tinylm::TinyLm& lm,
                    const std::vector<SteeringTask>& manifest,
                    const std::vector<double>& factor_grid, const Judge& judge,
                    const EvalOpts& opts) {
    if (manifest.empty()) throw DataError("evaluate: empty manifest");
    if (!method.prompt_steering) {
        if (factor_grid.empty()) throw ConfigError("evaluate: factor grid must be nonempty");
        if (std::find(factor_grid.begin(), factor_grid.end(), 0.0) == factor_grid.end())
            throw ConfigError("evaluate: factor grid must include 0");
    }

    EvalReport report;
    report.method = method.name;
    report.split = manifest.front().split;

    // Duplicate factors collapse so the report is idempotent in the grid.
    std::vector<double> grid;
    if (!method.prompt_steering) {
        std::set<double> seen;
        for (double f : factor_grid)
            if (seen.insert(f).second) grid.push_back(f);
        std::sort(grid.begin(), grid.end());
    }
    report.factor_grid = grid;

    Rng seed_root = Rng(opts.seed).split("evaluate");
    std::size_t n_pass = method.prompt_steering ? 1 : grid.size();
    for (std::size_t fi = 0; fi < n_pass; ++fi) {
        double factor = method.prompt_steering ? -1.0 : grid[fi];
        std::vector<EvalRecord> pass_records;
        for (std::size_t ei = 0; ei < manifest.size(); ++ei) {
            const SteeringTask& task = manifest[ei];
            tinylm::DecodeOpts decode = opts.decode;
            // One decode stream per example, shared across factors so factor
            // sweeps differ only in the intervention.
            decode.seed = seed_root.split(static_cast<std::uint64_t>(ei)).next_u64();

            std::vector<int> gen;
            if (method.prompt_steering) {
                auto aug =
                    baselines::prompt_steer(task.s, task.x, lm.config().max_seq_len - 2);
                gen = lm.generate(conceptlab::generation_prompt(aug), nullptr, decode);
            } else {
                hypernet::SteeringVector sv = method.vector_for(task);
                tinylm::InterventionSpec iv = tinylm::InterventionSpec::from_values(
                    opts.intervention_layer, static_cast<float>(factor), sv.values);
                gen = lm.generate(conceptlab::generation_prompt(task.x), &iv, decode);
            }

            EvalRecord rec;
            rec.method = method.name;
            rec.split = task.split;
            rec.factor = factor;
            rec.concept_id = task.concept_id;
            rec.example_index = static_cast<int>(ei);
            rec.scores = judge.judge(gen, task);
            rec.steering_score = harmonic_mean(rec.scores);
            pass_records.push_back(rec);
        }
        aggregate_factor(report, pass_records);
        report.records.insert(report.records.end(), pass_records.begin(), pass_records.end());
    }

    std::size_t best = 0;
    for (std::size_t fi = 1; fi < report.aggregate.size(); ++fi)
        if (report.aggregate[fi] > report.aggregate[best]) best = fi;
    report.best_aggregate = report.aggregate.empty() ? 0.0 : report.aggregate[best];
    report.best_factor = method.prompt_steering || grid.empty() ? -1.0 : grid[best];
    if (!report.per_concept.empty()) report.best_per_concept = report.per_concept[best];
    return report;
}

// ---- geometry ----

std::vector<std::vector<double>> cosine_similarity_matrix(
    const std::vector<std::pair<int, std::vector<float>>>& vectors,
    std::vector<int>* concept_ids_out) {
    if (vectors.empty()) throw DataError("cosine_similarity_matrix: no vectors");
    std::size_t d = vectors.front().second.size();

    std::map<int, std::vector<std::vector<double>>> groups;
    for (const auto& [cid, v] : vectors) {
        if (v.size() != d)
            throw ShapeError("cosine_similarity_matrix: inconsistent dimensions");
        double n = 0.0;
        for (float x : v) n += static_cast<double>(x) * x;
        n = std::sqrt(n);
        if (n < 1e-12) throw DataError("cosine_similarity_matrix: zero-norm vector");
        std::vector<double> unit(d);
        for (std::size_t i = 0; i < d; ++i) unit[i] = v[i] / n;
        groups[cid].push_back(std::move(unit));
    }

    std::vector<int> ids;
    for (const auto& [cid, g] : groups) ids.push_back(cid);
    if (concept_ids_out) *concept_ids_out = ids;

    std::size_t c = ids.size();
    std::vector<std::vector<double>> m(c, std::vector<double>(c, 0.0));
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
        return s;
    };
    for (std::size_t i = 0; i < c; ++i) {
        const auto& gi = groups[ids[i]];
        for (std::size_t j = i; j < c; ++j) {
            const auto& gj = groups[ids[j]];
            double s = 0.0;
            std::size_t n = 0;
            if (i == j) {
                if (gi.size() < 2) {
                    m[i][j] = 1.0;
                    continue;
                }
                for (std::size_t a = 0; a < gi.size(); ++a)
                    for (std::size_t b = a + 1; b < gi.size(); ++b) {
                        s += dot(gi[a], gi[b]);
                        ++n;
                    }
            } else {
                for (const auto& u : gi)
                    for (const auto& v : gj) {
                        s += dot(u, v);
                        ++n;
                    }
            }
            m[i][j] = m[j][i] = s / static_cast<double>(n);
        }
    }
    return m;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
// (eigenvalues, eigenvectors as columns) sorted by descending eigenvalue.
void jacobi_eig(std::vector<std::vector<double>> a, std::vector<double>& eigvals,
                std::vector<std::vector<double>>& eigvecs) {
    std::size_t n = a.size();
    eigvecs.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) eigvecs[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = eigvecs[i][p], viq = eigvecs[i][q];
                    eigvecs[i][p] = c * vip - s * viq;
                    eigvecs[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i][i];
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return eigvals[x] > eigvals[y]; });
    std::vector<double> ev(n);
    std::vector<std::vector<double>> vec(n, std::vector<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
        ev[k] = eigvals[order[k]];
        for (std::size_t i = 0; i < n; ++i) vec[i][k] = eigvecs[i][order[k]];
    }
    eigvals = std::move(ev);
    eigvecs = std::move(vec);
}

}  // namespace

PcaResult pca(const std::vector<std::vector<float>>& vectors, int n_components) {
    if (n_components < 1) throw ConfigError("pca: n_components must be >= 1");
    if (vectors.size() < static_cast<std::size_t>(n_components) + 1)
        throw DataError("pca: need at least n_components + 1 vectors");
    std::size_t n = vectors.size(), d = vectors.front().size();
    for (const auto& v : vectors)
        if (v.size() != d) throw ShapeError("pca: inconsistent dimensions");

    std::vector<double> mean(d, 0.0);
    for (const auto& v : vectors)
        for (std::size_t j = 0; j < d; ++j) mean[j] += v[j];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<std::vector<double>> centered(n, std::vector<double>(d));
    double total_var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            centered[i][j] = vectors[i][j] - mean[j];
            total_var += centered[i][j] * centered[i][j];
        }
    if (total_var < 1e-18) throw RankError("pca: degenerate input (all vectors identical)");

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            double ca = centered[i][a];
            if (ca == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) cov[a][b] += ca * centered[i][b];
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov[a][b] /= static_cast<double>(n - 1);
            cov[b][a] = cov[a][b];
        }

    std::vector<double> eigvals;
    std::vector<std::vector<double>> eigvecs;
    jacobi_eig(cov, eigvals, eigvecs);

    PcaResult res;
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(n_components), d);
    res.variances.resize(k);
    res.components.assign(k, std::vector<double>(d));
    for (std::size_t c = 0; c < k; ++c) {
        res.variances[c] = eigvals[c];
        // Deterministic sign: the largest-magnitude entry is positive.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(eigvecs[j][c]) > std::abs(eigvecs[arg][c])) arg = j;
        double sign = eigvecs[arg][c] >= 0.0 ? 1.0 : -1.0;
        for (std::size_t j = 0; j < d; ++j) res.components[c][j] = sign * eigvecs[j][c];
    }
    res.projections.assign(n, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += centered[i][j] * res.components[c][j];
            res.projections[i][c] = s;
        }
    return res;
}

// ---- compute accounting ----

double FlopsLedger::mean_step() const {
    if (per_step.empty()) return 0.0;
    return static_cast<double>(cumulative) / static_cast<double>(per_step.size());
}

double tflops_per_concept(double n_steps_to_target, double mean_step_tflops, int n_concepts) {
    if (n_concepts == 0) throw NumericError("tflops_per_concept: division by zero concepts");
    if (n_concepts < 1) throw ConfigError("tflops_per_concept: concept count must be >= 1");
    if (n_steps_to_target < 1.0)
        throw ConfigError("tflops_per_concept: steps-to-target must be >= 1");
    return n_steps_to_target * mean_step_tflops / static_cast<double>(n_concepts);
}

// ---- curve fit ----

namespace {

double clamped_exp(double x) { return std::exp(std::clamp(x, -700.0, 700.0)); }

struct LinFit {
    double a = 0.0, b = 0.0, sse = 0.0;
    bool ok = false;
};

// For fixed d, solve min_{a,b} sum (a + b e^{dc} - F)^2 exactly.
LinFit solve_linear(const std::vector<std::pair<double, double>>& pts, double d) {
    double n = static_cast<double>(pts.size());
    double se = 0.0, see = 0.0, sf = 0.0, sef = 0.0;
    for (const auto& [c, f] : pts) {
        double e = clamped_exp(d * c);
        se += e;
        see += e * e;
        sf += f;
        sef += e * f;
    }
    double det = n * see - se * se;
    LinFit fit;
    if (std::abs(det) < 1e-12 * std::max(1.0, n * see)) return fit;
    fit.a = (sf * see - se * sef) / det;
    fit.b = (n * sef - se * sf) / det;
    fit.sse = 0.0;
    for (const auto& [c, f] : pts) {
        double r = fit.a + fit.b * clamped_exp(d * c) - f;
        fit.sse += r * r;
    }
    fit.ok = true;
    return fit;
}

double sse_of(const std::vector<std::pair<double, double>>& pts, double a, double b, double d) {
    double s = 0.0;
    for (const auto& [c, f] : pts) {
        double r = a + b * clamped_exp(d * c) - f;
        s += r * r;
    }
    return s;
}

bool solve3(double m[3][3], double rhs[3], double out[3]) {
    // Gaussian elimination with partial pivoting.
    int idx[3] = {0, 1, 2};
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(m[idx[r]][col]) > std::abs(m[idx[piv]][col])) piv = r;
        std::swap(idx[col], idx[piv]);
        double diag = m[idx[col]][col];
        if (std::abs(diag) < 1e-300) return false;
        for (int r = col + 1; r < 3; ++r) {
            double f = m[idx[r]][col] / diag;
            for (int cc = col; cc < 3; ++cc) m[idx[r]][cc] -= f * m[idx[col]][cc];
            rhs[idx[r]] -= f * rhs[idx[col]];
        }
    }
    for (int col = 2; col >= 0; --col) {
        double s = rhs[idx[col]];
        for (int cc = col + 1; cc < 3; ++cc) s -= m[idx[col]][cc] * out[cc];
        out[col] = s / m[idx[col]][col];
    }
    return true;
}

}  // namespace

FitParams fit_flops_curve(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 4) throw DataError("fit_flops_curve: need at least 4 points");
    {
        std::set<double> cs;
        for (const auto& [c, f] : points) cs.insert(c);
        if (cs.size() != points.size())
            throw DataError("fit_flops_curve: c values must be distinct");
    }

    double sf = 0.0;
    for (const auto& [c, f] : points) sf += f;
    double mean = sf / static_cast<double>(points.size());
    double sst = 0.0;
    for (const auto& [c, f] : points) sst += (f - mean) * (f - mean);

    FitParams best;
    if (sst < 1e-30) {
        best.a = mean;
        best.b = 0.0;
        best.d = 0.0;
        best.r_squared = 1.0;  // constant-data convention
        return best;
    }

    // Multi-start over d (both signs, log-spaced), linear pair solved exactly.
    double best_sse = sst;  // constant model a = mean, b = 0
    best.a = mean;
    for (int sign = -1; sign <= 1; sign += 2) {
        for (int k = 0; k <= 360; ++k) {
            double mag = 1e-7 * std::pow(10.0, static_cast<double>(k) / 45.0);
            double d = sign * mag;
            LinFit lf = solve_linear(points, d);
            if (!lf.ok) continue;
            if (lf.sse < best_sse) {
                best_sse = lf.sse;
                best.a = lf.a;
                best.b = lf.b;
                best.d = d;
            }
        }
    }

    // Damped Gauss-Newton refinement of (a, b, d).
    double a = best.a, b = best.b, d = best.d;
    double sse = sse_of(points, a, b, d);
    double lm = 1e-9;
    for (int it = 0; it < 400; ++it) {
        double jtj[3][3] = {{0}}, jtr[3] = {0, 0, 0};
        for (const auto& [c, f] : points) {
            double e = clamped_exp(d * c);
            double r = a + b * e - f;
            double j[3] = {1.0, e, b * c * e};
            for (int p = 0; p < 3; ++p) {
                jtr[p] += j[p] * r;
                for (int q = 0; q < 3; ++q) jtj[p][q] += j[p] * j[q];
            }
        }
        double m[3][3];
        for (int p = 0; p < 3; ++p)
            for (int q = 0; q < 3; ++q) m[p][q] = jtj[p][q] + (p == q ? lm * jtj[p][p] : 0.0);
        double rhs[3] = {-jtr[0], -jtr[1], -jtr[2]};
        double deltap[3];
        if (!solve3(m, rhs, deltap)) break;
        double na = a + deltap[0], nb = b + deltap[1], nd = d + deltap[2];
        double nsse = sse_of(points, na, nb, nd);
        if (std::isfinite(nsse) && nsse <= sse) {
            double rel = (sse - nsse) / std::max(sse, 1e-300);
            a = na;
            b = nb;
            d = nd;
            sse = nsse;
            lm = std::max(lm / 3.0, 1e-15);
            if (rel < 1e-15) break;
        } else {
            lm *= 10.0;
            if (lm > 1e12) break;
        }
    }
    if (sse <= best_sse) {
        best.a = a;
        best.b = b;
        best.d = d;
        best_sse = sse;
    }
    best.r_squared = 1.0 - best_sse / sst;
    if (!std::isfinite(best.a) || !std::isfinite(best.b) || !std::isfinite(best.d) ||
        !std::isfinite(best.r_squared))
        throw CurveFitError("fit_flops_curve: did not converge", best);
    return best;
}

// ---- attention analysis ----

hypernet::AttentionDump dump_attention(const hypernet::Hypernet& h, const tinylm::TinyLm& lm,
                                       const std::vector<int>& s, const std::vector<int>& x,
                                       int layer) {
    if (h.config().variant != hypernet::Variant::CrossAttention)
        throw CapabilityError("dump_attention: variant has no cross-attention");
    TapeF::Pause pause;
    tinylm::ResidualCapture acts =
        lm.capture_residual(conceptlab::generation_prompt(x), layer);
    hypernet::AttentionDump dump;
    (void)h.steering_vector_t(s, &x, &acts, &dump);
    return dump;
}

double max_column_mass(const hypernet::AttentionDump::Mat& mat) {
    if (mat.rows == 0 || mat.cols == 0) throw DataError("max_column_mass: empty matrix");
    double best = 0.0;
    for (std::size_t j = 0; j < mat.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < mat.rows; ++i) s += mat.w[i * mat.cols + j];
        best = std::max(best, s);
    }
    return best / static_cast<double>(mat.rows);
}

}  // namespace steerkit::evalkit
