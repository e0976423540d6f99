#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "driftopt/core.hpp"
#include "driftopt/estimators.hpp"
#include "driftopt/utils.hpp"

namespace driftopt {

enum class LearnerObjective { Ips, Dr, Poem };

struct TrainConfig {
    double clip = 100.0;          // M
    double temperature = 0.01;    // tau; the objective adds tau * policy entropy
    int steps = 2000;             // attempted gradient steps
    double learning_rate = 0.05;  // halved whenever a step would decrease the objective
    double var_penalty = 1.0;     // lambda, POEM only
    LearnerObjective objective = LearnerObjective::Ips;
};

// One learned softmax policy per latent state, with per-state training curves.
struct PolicyBundle {
    std::vector<SoftmaxPolicy> sub_policies;
    std::vector<std::vector<double>> objective_curves;
    std::vector<std::string> warnings;

    int num_states() const { return static_cast<int>(sub_policies.size()); }
    const SoftmaxPolicy& policy_for(int z) const {
        if (z < 0 || z >= num_states()) throw ConfigError("PolicyBundle: no sub-policy for state");
        return sub_policies[z];
    }
};

// The rounds one optimization runs over (a latent partition, or everything
// for a stationary baseline), plus the pieces the objective needs.
struct TrainingView {
    const LoggedData* data = nullptr;
    std::vector<std::int64_t> rounds;  // indices into *data, in time order
    FeatureMap map;
    const RewardModel* reward_model = nullptr;  // DR objective only
    int reward_state = 0;  // which reward-model state applies to this partition

    static TrainingView whole(const LoggedData& data, const FeatureMap& map) {
        TrainingView v;
        v.data = &data;
        v.map = map;
        v.rounds.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) v.rounds[i] = static_cast<std::int64_t>(i);
        return v;
    }
};

namespace detail {

// Per-context quantities reused across the rounds of one evaluation. In
// tabular mode each distinct context id is evaluated once.
struct ContextCache {
    int num_actions = 0;
    std::vector<double> dist;      // num_contexts x K
    std::vector<double> entropy;   // per context
    std::vector<double> ent_grad;  // num_contexts x K, d(entropy)/d(theta block)
    std::vector<double> model_value;  // per context: sum_a pi(a) r_hat(a)
    std::vector<double> model_grad;   // num_contexts x K
    std::vector<std::int64_t> count;  // rounds per context
    std::vector<char> ready;
};

struct EvalScratch {
    ContextCache ctx;
    std::vector<double> u;           // per-round clipped term (POEM)
    std::vector<double> gate_scale;  // per-round gated r/p factor
};

}  // namespace detail

// Objective value and gradient at theta for one partition.
//
// value = sum_t min{M, pi(a_t | x_t) / p_t} r_t            (clipped IPS)
//         [+ model and residual terms for the DR objective]
//         + tau * sum_t entropy(pi(. | x_t))
//         [- lambda * sqrt(var(u_t) / n) for POEM]
//
// The clip min is handled by subgradient gating: rounds whose raw weight is
// at or above M contribute no gradient through the IPS term.
inline double objective_and_gradient(std::span<const double> theta, const TrainingView& view,
                                     const TrainConfig& config, std::vector<double>* gradient) {
    const FeatureMap& map = view.map;
    const int K = map.num_actions();
    const int d = map.dim();
    if (static_cast<int>(theta.size()) != d)
        throw ConfigError("objective_and_gradient: theta has wrong dimension");
    if (config.objective == LearnerObjective::Dr && view.reward_model == nullptr)
        throw ConfigError("objective_and_gradient: DR objective needs a reward model");
    const bool tabular = map.mode() == FeatureMode::TabularIndicator;
    const double tau = config.temperature;
    const std::size_t n = view.rounds.size();

    if (gradient) {
        gradient->assign(d, 0.0);
    }

    detail::EvalScratch s;
    if (tabular) {
        const int C = map.num_contexts();
        s.ctx.num_actions = K;
        s.ctx.dist.assign(static_cast<std::size_t>(C) * K, 0.0);
        s.ctx.entropy.assign(C, 0.0);
        s.ctx.ent_grad.assign(static_cast<std::size_t>(C) * K, 0.0);
        s.ctx.count.assign(C, 0);
        s.ctx.ready.assign(C, 0);
        if (view.reward_model) {
            s.ctx.model_value.assign(C, 0.0);
            s.ctx.model_grad.assign(static_cast<std::size_t>(C) * K, 0.0);
        }
    }
    s.u.assign(n, 0.0);
    s.gate_scale.assign(n, 0.0);

    const bool dr = config.objective == LearnerObjective::Dr;
    const bool poem = config.objective == LearnerObjective::Poem;

    double ips_value = 0.0;
    double entropy_value = 0.0;
    double model_value = 0.0;

    // pass 1: per-round clipped terms and per-context statistics
    std::vector<double> dist(K);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = (*view.data)[view.rounds[i]];
        const double* pd;
        if (tabular) {
            const int c = rec.context.id;
            double* slot = s.ctx.dist.data() + static_cast<std::size_t>(c) * K;
            if (!s.ctx.ready[c]) {
                for (int a = 0; a < K; ++a) slot[a] = map.logit(theta, rec.context, a);
                softmax_inplace(std::span<double>(slot, K));
                double h = 0.0;
                for (int a = 0; a < K; ++a) h -= slot[a] * std::log(slot[a]);
                s.ctx.entropy[c] = h;
                if (dr) {
                    double mv = 0.0;
                    for (int a = 0; a < K; ++a)
                        mv += slot[a] * view.reward_model->predict(rec.context, a, view.reward_state);
                    s.ctx.model_value[c] = mv;
                }
                s.ctx.ready[c] = 1;
            }
            ++s.ctx.count[c];
            pd = slot;
        } else {
            for (int a = 0; a < K; ++a) dist[a] = map.logit(theta, rec.context, a);
            softmax_inplace(dist);
            pd = dist.data();
            double h = 0.0;
            for (int a = 0; a < K; ++a) h -= pd[a] * std::log(pd[a]);
            entropy_value += h;
            if (dr) {
                double mv = 0.0;
                for (int a = 0; a < K; ++a)
                    mv += pd[a] * view.reward_model->predict(rec.context, a, view.reward_state);
                model_value += mv;
            }
        }

        if (!(rec.propensity > 0.0)) throw DataError("objective: zero propensity");
        const double raw = pd[rec.action] / rec.propensity;
        const bool gated = raw < config.clip;
        const double w = gated ? raw : config.clip;
        double residual = rec.reward;
        if (dr) residual -= view.reward_model->predict(rec.context, rec.action, view.reward_state);
        ips_value += w * residual;
        s.u[i] = w * rec.reward;
        s.gate_scale[i] = gated ? residual / rec.propensity : 0.0;

        // gradient of the per-round weighted term, dense mode (no caching)
        if (gradient && !tabular) {
            // d pi(a_t)/d theta = pi(a_t) (f(x, a_t) - sum_b pi(b) f(x, b))
            const double scale = s.gate_scale[i] * pd[rec.action];
            if (scale != 0.0) {
                const auto& x = rec.context.dense;
                const int m = map.context_dim();
                for (int j = 0; j < m; ++j)
                    (*gradient)[rec.action * m + j] += scale * x[j];
                for (int b = 0; b < K; ++b) {
                    const double pb = scale * pd[b];
                    for (int j = 0; j < m; ++j) (*gradient)[b * m + j] -= pb * x[j];
                }
            }
            if (tau > 0.0) {
                // d entropy/d theta = -sum_a pi(a) log pi(a) (f(x,a) - fbar)
                const auto& x = rec.context.dense;
                const int m = map.context_dim();
                double hbar = 0.0;
                for (int a = 0; a < K; ++a) hbar += pd[a] * std::log(pd[a]);
                for (int a = 0; a < K; ++a) {
                    const double coef = -tau * pd[a] * (std::log(pd[a]) - hbar);
                    for (int j = 0; j < m; ++j) (*gradient)[a * m + j] += coef * x[j];
                }
            }
            if (dr) {
                const auto& x = rec.context.dense;
                const int m = map.context_dim();
                double rbar = 0.0;
                std::vector<double> rh(K);
                for (int a = 0; a < K; ++a) {
                    rh[a] = view.reward_model->predict(rec.context, a, view.reward_state);
                    rbar += pd[a] * rh[a];
                }
                for (int a = 0; a < K; ++a) {
                    const double coef = pd[a] * (rh[a] - rbar);
                    for (int j = 0; j < m; ++j) (*gradient)[a * m + j] += coef * x[j];
                }
            }
        }
    }

    // POEM dispersion penalty over the per-round clipped terms
    double penalty = 0.0;
    double pen_coef = 0.0;
    double u_mean = 0.0;
    if (poem && config.var_penalty > 0.0 && n >= 2) {
        for (double u : s.u) u_mean += u;
        u_mean /= static_cast<double>(n);
        double ss = 0.0;
        for (double u : s.u) ss += (u - u_mean) * (u - u_mean);
        const double var = ss / static_cast<double>(n - 1);
        if (var > 0.0) {
            const double root = std::sqrt(var / static_cast<double>(n));
            penalty = config.var_penalty * root;
            pen_coef = config.var_penalty / (root * static_cast<double>(n) * static_cast<double>(n - 1));
        }
    }

    // pass 2 (tabular): per-round gradient with cached distributions
    if (gradient && tabular) {
        const int C = map.num_contexts();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rec = (*view.data)[view.rounds[i]];
            const double* pd = s.ctx.dist.data() + static_cast<std::size_t>(rec.context.id) * K;
            double scale = s.gate_scale[i];
            if (poem && pen_coef > 0.0 && s.gate_scale[i] != 0.0) {
                // d u_t/d theta shares the gating; u_t uses the raw reward
                const double du_scale = rec.reward / rec.propensity;
                scale -= pen_coef * (s.u[i] - u_mean) * du_scale;
            }
            if (scale == 0.0) continue;
            const double coef = scale * pd[rec.action];
            const int base = rec.context.id * K;
            (*gradient)[base + rec.action] += coef;
            for (int b = 0; b < K; ++b) (*gradient)[base + b] -= coef * pd[b];
        }
        for (int c = 0; c < C; ++c) {
            if (!s.ctx.count[c]) continue;
            const double* pd = s.ctx.dist.data() + static_cast<std::size_t>(c) * K;
            const double cnt = static_cast<double>(s.ctx.count[c]);
            if (tau > 0.0) {
                double hbar = 0.0;
                for (int a = 0; a < K; ++a) hbar += pd[a] * std::log(pd[a]);
                for (int a = 0; a < K; ++a)
                    (*gradient)[c * K + a] += -tau * cnt * pd[a] * (std::log(pd[a]) - hbar);
            }
            if (dr) {
                double rbar = 0.0;
                std::vector<double> rh(K);
                const Context x = Context::tabular(c);
                for (int a = 0; a < K; ++a) {
                    rh[a] = view.reward_model->predict(x, a, view.reward_state);
                    rbar += pd[a] * rh[a];
                }
                for (int a = 0; a < K; ++a)
                    (*gradient)[c * K + a] += cnt * pd[a] * (rh[a] - rbar);
            }
        }
    } else if (gradient && !tabular && poem && pen_coef > 0.0) {
        // dense-mode POEM penalty gradient needs a second pass
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rec = (*view.data)[view.rounds[i]];
            if (s.gate_scale[i] == 0.0) continue;
            for (int a = 0; a < K; ++a) dist[a] = map.logit(theta, rec.context, a);
            softmax_inplace(dist);
            const double du_scale = rec.reward / rec.propensity;
            const double scale = -pen_coef * (s.u[i] - u_mean) * du_scale * dist[rec.action];
            const auto& x = rec.context.dense;
            const int m = map.context_dim();
            for (int j = 0; j < m; ++j) (*gradient)[rec.action * m + j] += scale * x[j];
            for (int b = 0; b < K; ++b) {
                const double pb = scale * dist[b];
                for (int j = 0; j < m; ++j) (*gradient)[b * m + j] -= pb * x[j];
            }
        }
    }

    if (tabular) {
        for (int c = 0; c < map.num_contexts(); ++c) {
            if (!s.ctx.count[c]) continue;
            entropy_value += static_cast<double>(s.ctx.count[c]) * s.ctx.entropy[c];
            if (dr) model_value += static_cast<double>(s.ctx.count[c]) * s.ctx.model_value[c];
        }
    }

    return ips_value + model_value + tau * entropy_value - penalty;
}

struct AscentResult {
    std::vector<double> theta;
    std::vector<double> curve;  // objective at theta0 and after each accepted step
};

// Plain gradient ascent with step halving: a step that would decrease the
// objective (or make it non-finite) is rejected and the rate halved.
inline AscentResult maximize_objective(const TrainingView& view, const TrainConfig& config,
                                       std::vector<double> theta0) {
    if (config.steps < 1) throw ConfigError("maximize_objective: steps must be >= 1");
    if (!(config.learning_rate > 0.0)) throw ConfigError("maximize_objective: learning rate must be positive");
    AscentResult out;
    out.theta = std::move(theta0);
    std::vector<double> grad;
    double value = objective_and_gradient(out.theta, view, config, &grad);
    out.curve.push_back(value);
    double lr = config.learning_rate;
    std::vector<double> candidate(out.theta.size());
    std::vector<double> cand_grad;
    for (int step = 0; step < config.steps; ++step) {
        for (std::size_t i = 0; i < out.theta.size(); ++i) candidate[i] = out.theta[i] + lr * grad[i];
        const double cand_value = objective_and_gradient(candidate, view, config, &cand_grad);
        if (std::isfinite(cand_value) && cand_value >= value) {
            out.theta.swap(candidate);
            grad.swap(cand_grad);
            value = cand_value;
            out.curve.push_back(value);
        } else {
            lr *= 0.5;
            if (lr < 1e-14) break;
        }
    }
    return out;
}

// Per-state sub-policy learning: partition the rounds by label and maximize
// the per-state objective independently. Empty partitions fall back to the
// uniform policy.
inline PolicyBundle train_sub_policies(const LoggedData& data, const LatentSequence& labels,
                                       const FeatureMap& map, const TrainConfig& config,
                                       int threads = 1) {
    if (labels.size() != static_cast<std::int64_t>(data.size()))
        throw ConfigError("train_sub_policies: labels length does not match data");
    const int L = labels.num_states();

    std::vector<TrainingView> views(L);
    for (int z = 0; z < L; ++z) {
        views[z].data = &data;
        views[z].map = map;
        views[z].reward_state = 0;
    }
    for (std::size_t i = 0; i < data.size(); ++i)
        views[labels[i]].rounds.push_back(static_cast<std::int64_t>(i));

    RewardModel model;
    if (config.objective == LearnerObjective::Dr) {
        model = fit_reward_model(data, map, &labels);
        for (int z = 0; z < L; ++z) {
            views[z].reward_model = &model;
            views[z].reward_state = z;
        }
    }

    PolicyBundle bundle;
    bundle.sub_policies.assign(L, SoftmaxPolicy::uniform(map));
    bundle.objective_curves.assign(L, {});
    std::vector<std::string> warnings(L);
    parallel_for(L, threads, [&](std::size_t z) {
        if (views[z].rounds.empty()) {
            warnings[z] = "train_sub_policies: no rounds labeled state " + std::to_string(z + 1) +
                          "; using the uniform policy";
            return;
        }
        AscentResult r = maximize_objective(views[z], config, std::vector<double>(map.dim(), 0.0));
        bundle.sub_policies[z] = SoftmaxPolicy(map, std::move(r.theta));
        bundle.objective_curves[z] = std::move(r.curve);
    });
    for (auto& w : warnings)
        if (!w.empty()) bundle.warnings.push_back(std::move(w));
    return bundle;
}

// Stationary baseline: one policy over all rounds (IPS, DR, or POEM objective).
inline SoftmaxPolicy train_stationary_baseline(const LoggedData& data, const FeatureMap& map,
                                               const TrainConfig& config,
                                               std::vector<double>* curve = nullptr) {
    if (data.empty()) throw DataError("train_stationary_baseline: empty data");
    TrainingView view = TrainingView::whole(data, map);
    RewardModel model;
    if (config.objective == LearnerObjective::Dr) {
        model = fit_reward_model(data, map);
        view.reward_model = &model;
    }
    AscentResult r = maximize_objective(view, config, std::vector<double>(map.dim(), 0.0));
    if (curve) *curve = std::move(r.curve);
    return SoftmaxPolicy(map, std::move(r.theta));
}

}  // namespace driftopt
