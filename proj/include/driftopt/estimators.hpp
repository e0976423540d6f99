#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "driftopt/core.hpp"

namespace driftopt {

enum class EstimatorKind { Ips, Dm, Dr };

struct EstimatorConfig {
    double clip = 100.0;  // M; infinity disables clipping
    EstimatorKind kind = EstimatorKind::Ips;

    static EstimatorConfig ips(double clip = std::numeric_limits<double>::infinity()) {
        return EstimatorConfig{clip, EstimatorKind::Ips};
    }
};

inline double clipped_weight(double pi, double propensity, double clip) {
    if (!(propensity > 0.0)) throw DataError("estimator: zero propensity in logged data");
    return std::min(clip, pi / propensity);
}

// Linear reward model r_hat_z(x, a) = beta_z^T f(x, a), one weight vector per
// latent state (a single global vector for stationary baselines).
struct RewardModel {
    FeatureMap map;
    std::vector<std::vector<double>> beta;  // beta[z], each of length map.dim()
    double sigma_hat = 0.0;

    int num_states() const { return static_cast<int>(beta.size()); }

    double predict(const Context& x, int action, int z = 0) const {
        if (z < 0 || z >= num_states()) throw InputError("RewardModel: state out of range");
        return map.logit(beta[z], x, action);
    }
};

namespace detail {

// Ridge-damped least squares on the given rounds; weights optional.
inline std::vector<double> solve_least_squares(const LoggedData& data, const FeatureMap& map,
                                               std::span<const std::int64_t> rounds,
                                               std::span<const double> weights, double ridge) {
    const int d = map.dim();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    std::vector<double> f(d);
    for (std::size_t i = 0; i < rounds.size(); ++i) {
        const auto& rec = data[rounds[i]];
        const double w = weights.empty() ? 1.0 : weights[i];
        if (w == 0.0) continue;
        map.features(rec.context, rec.action, f);
        const Eigen::Map<const Eigen::VectorXd> fv(f.data(), d);
        gram.noalias() += w * fv * fv.transpose();
        rhs.noalias() += (w * rec.reward) * fv;
    }
    gram.diagonal().array() += ridge;
    Eigen::VectorXd sol = gram.ldlt().solve(rhs);
    return std::vector<double>(sol.data(), sol.data() + d);
}

}  // namespace detail

// Ordinary least squares fit of the reward model, per state when labels are
// supplied, with a small ridge term against rank deficiency.
inline RewardModel fit_reward_model(const LoggedData& data, const FeatureMap& map,
                                    const LatentSequence* labels = nullptr, double ridge = 1e-8) {
    if (data.empty()) throw DataError("fit_reward_model: empty data");
    if (labels && labels->size() != static_cast<std::int64_t>(data.size()))
        throw ConfigError("fit_reward_model: labels length does not match data");

    RewardModel model{map, {}, 0.0};
    const int L = labels ? labels->num_states() : 1;
    std::vector<std::vector<std::int64_t>> parts(L);
    for (std::size_t i = 0; i < data.size(); ++i) parts[labels ? (*labels)[i] : 0].push_back(i);
    for (int z = 0; z < L; ++z) {
        model.beta.push_back(detail::solve_least_squares(data, map, parts[z], {}, ridge));
    }

    double rss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& rec = data[i];
        const double res = rec.reward - model.predict(rec.context, rec.action, labels ? (*labels)[i] : 0);
        rss += res * res;
    }
    model.sigma_hat = std::sqrt(rss / static_cast<double>(data.size()));
    return model;
}

// Clipped IPS: sum_t min{M, pi(a_t | x_t) / p_t} r_t.
inline double ips_estimate(const LoggedData& data, const SoftmaxPolicy& policy,
                           const EstimatorConfig& config) {
    double total = 0.0;
    std::vector<double> dist(policy.num_actions());
    for (const auto& rec : data) {
        policy.action_distribution(rec.context, dist);
        total += clipped_weight(dist[rec.action], rec.propensity, config.clip) * rec.reward;
    }
    return total;
}

struct PartitionedEstimate {
    double total = 0.0;
    std::vector<double> per_state;
};

// Latent-partitioned IPS: V_hat = sum_z V_hat_z, where V_hat_z sums the
// clipped terms of rounds labeled z under the sub-policy for z.
inline PartitionedEstimate partitioned_ips_estimate(const LoggedData& data,
                                                    std::span<const SoftmaxPolicy> policy_set,
                                                    const LatentSequence& labels,
                                                    const EstimatorConfig& config) {
    if (labels.size() != static_cast<std::int64_t>(data.size()))
        throw ConfigError("partitioned_ips_estimate: labels length does not match data");
    PartitionedEstimate est;
    est.per_state.assign(policy_set.size(), 0.0);
    std::vector<double> dist;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int z = labels[i];
        if (z >= static_cast<int>(policy_set.size()))
            throw ConfigError("partitioned_ips_estimate: label outside the policy set");
        const auto& rec = data[i];
        dist.resize(policy_set[z].num_actions());
        policy_set[z].action_distribution(rec.context, dist);
        est.per_state[z] += clipped_weight(dist[rec.action], rec.propensity, config.clip) * rec.reward;
    }
    for (double v : est.per_state) est.total += v;
    return est;
}

// Direct method: sum_t sum_a pi(a | x_t) r_hat(x_t, a).
inline double dm_estimate(const LoggedData& data, const SoftmaxPolicy& policy,
                          const RewardModel& model, int state = 0) {
    double total = 0.0;
    std::vector<double> dist(policy.num_actions());
    for (const auto& rec : data) {
        policy.action_distribution(rec.context, dist);
        for (int a = 0; a < policy.num_actions(); ++a)
            total += dist[a] * model.predict(rec.context, a, state);
    }
    return total;
}

// Doubly robust: model term plus clipped importance-weighted residual.
inline double dr_estimate(const LoggedData& data, const SoftmaxPolicy& policy,
                          const RewardModel& model, const EstimatorConfig& config, int state = 0) {
    double total = 0.0;
    std::vector<double> dist(policy.num_actions());
    for (const auto& rec : data) {
        policy.action_distribution(rec.context, dist);
        for (int a = 0; a < policy.num_actions(); ++a)
            total += dist[a] * model.predict(rec.context, a, state);
        const double w = clipped_weight(dist[rec.action], rec.propensity, config.clip);
        total += w * (rec.reward - model.predict(rec.context, rec.action, state));
    }
    return total;
}

// Membership in the clipped policy class: pi(a | x) / pi_0(a | x) <= M for
// every sampled context and every action.
inline bool clipped_class_membership(const SoftmaxPolicy& policy, const SoftmaxPolicy& logging,
                                     std::span<const Context> contexts, double clip) {
    std::vector<double> p(policy.num_actions()), q(logging.num_actions());
    for (const auto& x : contexts) {
        policy.action_distribution(x, p);
        logging.action_distribution(x, q);
        for (int a = 0; a < policy.num_actions(); ++a)
            if (p[a] / q[a] > clip) return false;
    }
    return true;
}

}  // namespace driftopt
