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
#include "driftopt/rng.hpp"
#include "driftopt/utils.hpp"

namespace driftopt {

// Hidden Markov model over latent states with Gaussian linear-regression
// emissions: r_t | (x_t, a_t, z_t = z) ~ N(beta_z^T f(x_t, a_t), sigma^2).
struct HmmParams {
    FeatureMap map;
    std::vector<double> p0;                 // initial distribution, length L
    std::vector<double> transition;         // L x L row-major, rows sum to 1
    std::vector<std::vector<double>> beta;  // per-state regression weights
    double sigma = 1.0;                     // shared emission std
    std::vector<double> sigma_per_state;    // optional per-state stds; overrides sigma

    int num_states() const { return static_cast<int>(p0.size()); }
    double phi(int from, int to) const { return transition[static_cast<std::size_t>(from) * num_states() + to]; }
    double sigma_for(int z) const { return sigma_per_state.empty() ? sigma : sigma_per_state[z]; }

    void validate() const {
        const int L = num_states();
        if (L < 1) throw ConfigError("HmmParams: need at least one state");
        if (static_cast<int>(beta.size()) != L || static_cast<int>(transition.size()) != L * L)
            throw ConfigError("HmmParams: inconsistent shapes");
        double s0 = 0.0;
        for (double p : p0) {
            if (p < 0.0) throw ConfigError("HmmParams: negative probability in P0");
            s0 += p;
        }
        if (std::abs(s0 - 1.0) > 1e-10) throw ConfigError("HmmParams: P0 must sum to 1");
        for (int z = 0; z < L; ++z) {
            double row = 0.0;
            for (int j = 0; j < L; ++j) {
                if (phi(z, j) < 0.0) throw ConfigError("HmmParams: negative transition probability");
                row += phi(z, j);
            }
            if (std::abs(row - 1.0) > 1e-10) throw ConfigError("HmmParams: transition rows must sum to 1");
            if (static_cast<int>(beta[z].size()) != map.dim())
                throw ConfigError("HmmParams: beta dimension does not match the feature map");
            if (!(sigma_for(z) > 0.0)) throw ConfigError("HmmParams: sigma must be positive");
        }
    }
};

inline double predict_reward(const HmmParams& params, const Context& x, int action, int z) {
    if (z < 0 || z >= params.num_states()) throw InputError("predict_reward: state out of range");
    return params.map.logit(params.beta[z], x, action);
}

inline double gaussian_log_density(double value, double mean, double stddev) {
    static constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log(sqrt(2 pi))
    const double u = (value - mean) / stddev;
    return -0.5 * u * u - std::log(stddev) - kLogSqrt2Pi;
}

inline double emission_log_density(const HmmParams& params, const Context& x, int action,
                                   double reward, int z) {
    return gaussian_log_density(reward, predict_reward(params, x, action, z), params.sigma_for(z));
}

// Forward/backward tables in the log domain plus the smoothed posterior.
// log_forward[t*L + z] = log P(r_{1..t}, z_t = z), log_backward the
// complementary tail likelihood; smoothed rows sum to 1.
struct PosteriorTable {
    int num_states = 0;
    std::vector<double> log_forward;
    std::vector<double> log_backward;
    std::vector<double> smoothed;
    double log_likelihood = 0.0;

    double smoothed_at(std::int64_t t, int z) const { return smoothed[t * num_states + z]; }
};

struct SmoothResult {
    LatentSequence labels;
    PosteriorTable table;
};

namespace detail {

// Per-round emission features resolved once: a flat index in tabular mode,
// a feature vector otherwise.
struct EmissionCache {
    bool tabular = true;
    std::vector<int> index;                // tabular
    std::vector<std::vector<double>> fvec; // dense
    std::vector<double> reward;

    static EmissionCache build(const LoggedData& data, const FeatureMap& map) {
        EmissionCache c;
        c.tabular = map.mode() == FeatureMode::TabularIndicator;
        c.reward.reserve(data.size());
        for (const auto& rec : data) {
            c.reward.push_back(rec.reward);
            if (c.tabular)
                c.index.push_back(map.tabular_index(rec.context, rec.action));
            else
                c.fvec.push_back(map.features(rec.context, rec.action));
        }
        return c;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(reward.size()); }

    double predict(std::int64_t t, std::span<const double> beta) const {
        if (tabular) return beta[index[t]];
        double s = 0.0;
        for (std::size_t i = 0; i < fvec[t].size(); ++i) s += beta[i] * fvec[t][i];
        return s;
    }
};

// Emission log-densities for all rounds and states, T x L row-major.
inline std::vector<double> emission_log_densities(const EmissionCache& cache, const HmmParams& p) {
    const std::int64_t T = cache.size();
    const int L = p.num_states();
    std::vector<double> le(static_cast<std::size_t>(T) * L);
    for (int z = 0; z < L; ++z) {
        const double sig = p.sigma_for(z);
        const double log_norm = -std::log(sig) - 0.9189385332046727;
        const double inv2 = 0.5 / (sig * sig);
        for (std::int64_t t = 0; t < T; ++t) {
            const double res = cache.reward[t] - cache.predict(t, p.beta[z]);
            le[t * L + z] = log_norm - res * res * inv2;
        }
    }
    return le;
}

// Scaled forward-backward pass. Returns the smoothed posterior (gamma),
// expected transition counts, the log-likelihood, and the per-step scale
// terms needed to reconstruct unnormalized log tables.
struct ForwardBackward {
    std::vector<double> gamma;        // T x L, rows sum to 1
    std::vector<double> trans_counts; // L x L expected transitions
    std::vector<double> alpha;        // T x L, normalized forward
    std::vector<double> beta_scaled;  // T x L, scaled backward
    std::vector<double> log_scale;    // per-round log(c_t) + m_t
    double log_likelihood = 0.0;
};

inline ForwardBackward forward_backward(const std::vector<double>& le, std::int64_t T, int L,
                                        const HmmParams& p) {
    ForwardBackward fb;
    fb.gamma.assign(static_cast<std::size_t>(T) * L, 0.0);
    fb.trans_counts.assign(static_cast<std::size_t>(L) * L, 0.0);
    fb.alpha.assign(static_cast<std::size_t>(T) * L, 0.0);
    fb.beta_scaled.assign(static_cast<std::size_t>(T) * L, 0.0);
    fb.log_scale.assign(T, 0.0);

    // shift emissions by their per-round max so the linear-domain recursions
    // cannot underflow; the shifts are folded back into the log scales
    std::vector<double> emit(static_cast<std::size_t>(T) * L);
    std::vector<double> scale_c(T);
    for (std::int64_t t = 0; t < T; ++t) {
        double m = -std::numeric_limits<double>::infinity();
        for (int z = 0; z < L; ++z) m = std::max(m, le[t * L + z]);
        if (!std::isfinite(m)) throw DataError("forward_backward: non-finite emission density");
        for (int z = 0; z < L; ++z) emit[t * L + z] = std::exp(le[t * L + z] - m);
        fb.log_scale[t] = m;
    }

    for (std::int64_t t = 0; t < T; ++t) {
        double norm = 0.0;
        for (int z = 0; z < L; ++z) {
            double pred;
            if (t == 0) {
                pred = p.p0[z];
            } else {
                pred = 0.0;
                for (int zp = 0; zp < L; ++zp) pred += fb.alpha[(t - 1) * L + zp] * p.phi(zp, z);
            }
            const double v = pred * emit[t * L + z];
            fb.alpha[t * L + z] = v;
            norm += v;
        }
        if (!(norm > 0.0)) throw DataError("forward_backward: zero likelihood round");
        for (int z = 0; z < L; ++z) fb.alpha[t * L + z] /= norm;
        scale_c[t] = norm;
        fb.log_scale[t] += std::log(norm);
        fb.log_likelihood += fb.log_scale[t];
    }

    // backward pass divided by the forward scale factors, so that
    // gamma = alpha * beta_scaled is already normalized
    for (int z = 0; z < L; ++z) fb.beta_scaled[(T - 1) * L + z] = 1.0;
    for (std::int64_t t = T - 2; t >= 0; --t) {
        for (int z = 0; z < L; ++z) {
            double v = 0.0;
            for (int zn = 0; zn < L; ++zn)
                v += p.phi(z, zn) * emit[(t + 1) * L + zn] * fb.beta_scaled[(t + 1) * L + zn];
            fb.beta_scaled[t * L + z] = v / scale_c[t + 1];
        }
    }

    for (std::int64_t t = 0; t < T; ++t) {
        double norm = 0.0;
        for (int z = 0; z < L; ++z) {
            const double v = fb.alpha[t * L + z] * fb.beta_scaled[t * L + z];
            fb.gamma[t * L + z] = v;
            norm += v;
        }
        for (int z = 0; z < L; ++z) fb.gamma[t * L + z] /= norm;
    }
    std::vector<double> xi(static_cast<std::size_t>(L) * L);
    for (std::int64_t t = 0; t + 1 < T; ++t) {
        double norm = 0.0;
        for (int z = 0; z < L; ++z)
            for (int zn = 0; zn < L; ++zn) {
                const double v = fb.alpha[t * L + z] * p.phi(z, zn) * emit[(t + 1) * L + zn] *
                                 fb.beta_scaled[(t + 1) * L + zn];
                xi[z * L + zn] = v;
                norm += v;
            }
        if (norm > 0.0)
            for (int i = 0; i < L * L; ++i) fb.trans_counts[i] += xi[i] / norm;
    }
    return fb;
}

}  // namespace detail

// Smoothing oracle: forward-backward under fixed parameters, posterior
// argmax labels (ties broken toward the smallest state index).
inline SmoothResult smooth_labels(const HmmParams& params, const LoggedData& data) {
    params.validate();
    if (data.empty()) throw InputError("smooth_labels: empty data");
    const int L = params.num_states();
    const std::int64_t T = static_cast<std::int64_t>(data.size());
    const auto cache = detail::EmissionCache::build(data, params.map);
    const auto le = detail::emission_log_densities(cache, params);
    for (double v : le)
        if (!std::isfinite(v)) throw InputError("smooth_labels: non-finite emission density");
    const auto fb = detail::forward_backward(le, T, L, params);

    PosteriorTable table;
    table.num_states = L;
    table.smoothed = fb.gamma;
    table.log_likelihood = fb.log_likelihood;
    table.log_forward.resize(static_cast<std::size_t>(T) * L);
    table.log_backward.resize(static_cast<std::size_t>(T) * L);
    std::vector<double> cum(T);  // cumulative log scales
    double acc = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
        acc += fb.log_scale[t];
        cum[t] = acc;
    }
    for (std::int64_t t = 0; t < T; ++t)
        for (int z = 0; z < L; ++z) {
            table.log_forward[t * L + z] = std::log(fb.alpha[t * L + z]) + cum[t];
            table.log_backward[t * L + z] =
                std::log(fb.beta_scaled[t * L + z]) + (fb.log_likelihood - cum[t]);
        }

    std::vector<int> labels(T);
    for (std::int64_t t = 0; t < T; ++t) {
        int arg = 0;
        for (int z = 1; z < L; ++z)
            if (fb.gamma[t * L + z] > fb.gamma[t * L + arg]) arg = z;
        labels[t] = arg;
    }
    return SmoothResult{LatentSequence(std::move(labels), L), std::move(table)};
}

struct EmFitOptions {
    int max_iters = 100;
    double tol = 1e-6;        // stop when the log-likelihood gain drops below this
    int restarts = 10;
    double ridge = 1e-8;      // damping for the per-state weighted least squares
    double sigma_floor = 1e-6;
    double sticky_init = 0.99;  // initial self-transition mass
    bool per_state_sigma = false;
    int threads = 0;  // 0 = hardware concurrency
};

struct EmTrace {
    std::vector<double> log_likelihood;  // one entry per EM iteration
    std::vector<int> reseeds;            // iterations where a degenerate state was re-seeded
};

struct EmFitResult {
    HmmParams params;
    int best_restart = 0;
    double log_likelihood = 0.0;
    std::vector<EmTrace> traces;  // one per restart
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<double> weighted_ls_tabular(const EmissionCache& cache, int dim,
                                               std::span<const double> weights, double ridge) {
    std::vector<double> num(dim, 0.0), den(dim, ridge);
    for (std::int64_t t = 0; t < cache.size(); ++t) {
        num[cache.index[t]] += weights[t] * cache.reward[t];
        den[cache.index[t]] += weights[t];
    }
    std::vector<double> beta(dim);
    for (int i = 0; i < dim; ++i) beta[i] = den[i] > 0.0 ? num[i] / den[i] : 0.0;
    return beta;
}

inline std::vector<double> weighted_ls_dense(const EmissionCache& cache, int dim,
                                             std::span<const double> weights, double ridge) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    for (std::int64_t t = 0; t < cache.size(); ++t) {
        const double w = weights[t];
        if (w == 0.0) continue;
        const Eigen::Map<const Eigen::VectorXd> fv(cache.fvec[t].data(), dim);
        gram.noalias() += w * fv * fv.transpose();
        rhs.noalias() += (w * cache.reward[t]) * fv;
    }
    gram.diagonal().array() += ridge;
    Eigen::VectorXd sol = gram.ldlt().solve(rhs);
    return std::vector<double>(sol.data(), sol.data() + dim);
}

inline std::vector<double> weighted_ls(const EmissionCache& cache, int dim,
                                       std::span<const double> weights, double ridge) {
    return cache.tabular ? weighted_ls_tabular(cache, dim, weights, ridge)
                         : weighted_ls_dense(cache, dim, weights, ridge);
}

// Block initialization: contiguous blocks (rotated by `offset` rounds) give
// the initial responsibilities, matching the piecewise-stationary prior.
inline HmmParams em_init(const EmissionCache& cache, const FeatureMap& map, int L,
                         const EmFitOptions& opt, std::int64_t offset) {
    const std::int64_t T = cache.size();
    HmmParams p;
    p.map = map;
    p.p0.assign(L, 1.0 / L);
    p.transition.assign(static_cast<std::size_t>(L) * L,
                        L > 1 ? (1.0 - opt.sticky_init) / (L - 1) : 1.0);
    if (L > 1)
        for (int z = 0; z < L; ++z) p.transition[static_cast<std::size_t>(z) * L + z] = opt.sticky_init;

    std::vector<std::vector<double>> block_weights(L, std::vector<double>(T, 0.0));
    for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t shifted = (t + offset) % T;
        const int z = static_cast<int>(std::min<std::int64_t>(L - 1, shifted * L / T));
        block_weights[z][t] = 1.0;
    }
    double rss = 0.0;
    for (int z = 0; z < L; ++z) {
        p.beta.push_back(weighted_ls(cache, map.dim(), block_weights[z], opt.ridge));
        for (std::int64_t t = 0; t < T; ++t) {
            if (block_weights[z][t] == 0.0) continue;
            const double res = cache.reward[t] - cache.predict(t, p.beta[z]);
            rss += res * res;
        }
    }
    const double sigma = std::max(opt.sigma_floor, std::sqrt(rss / static_cast<double>(T)));
    p.sigma = sigma;
    if (opt.per_state_sigma) p.sigma_per_state.assign(L, sigma);
    return p;
}

struct RestartOutcome {
    HmmParams params;
    EmTrace trace;
    double final_log_likelihood = -std::numeric_limits<double>::infinity();
    std::vector<std::string> warnings;
};

inline RestartOutcome em_run(const EmissionCache& cache, const FeatureMap& map, int L,
                             const EmFitOptions& opt, std::int64_t offset, SplitRng rng) {
    const std::int64_t T = cache.size();
    const int d = map.dim();
    RestartOutcome out;
    HmmParams p = em_init(cache, map, L, opt, offset);

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opt.max_iters; ++iter) {
        const auto le = emission_log_densities(cache, p);
        const auto fb = forward_backward(le, T, L, p);
        out.trace.log_likelihood.push_back(fb.log_likelihood);

        // Degenerate states: re-seed the regression from a random data slice.
        std::vector<double> mass(L, 0.0);
        for (std::int64_t t = 0; t < T; ++t)
            for (int z = 0; z < L; ++z) mass[z] += fb.gamma[t * L + z];
        bool reseeded = false;
        for (int z = 0; z < L; ++z) {
            if (mass[z] >= 1e-8) continue;
            const std::int64_t len = std::max<std::int64_t>(1, T / (4 * L));
            const std::int64_t start = static_cast<std::int64_t>(rng.uniform_int(T - len + 1));
            std::vector<double> w(T, 0.0);
            std::fill(w.begin() + start, w.begin() + start + len, 1.0);
            p.beta[z] = weighted_ls(cache, d, w, opt.ridge);
            out.warnings.push_back("em: re-seeded degenerate state " + std::to_string(z + 1) +
                                   " at iteration " + std::to_string(iter + 1));
            out.trace.reseeds.push_back(iter);
            reseeded = true;
        }

        // M-step
        std::vector<double> gamma_z(T);
        double pooled_rss = 0.0;
        for (int z = 0; z < L; ++z) {
            for (std::int64_t t = 0; t < T; ++t) gamma_z[t] = fb.gamma[t * L + z];
            if (mass[z] >= 1e-8) p.beta[z] = weighted_ls(cache, d, gamma_z, opt.ridge);
            double rss_z = 0.0;
            for (std::int64_t t = 0; t < T; ++t) {
                const double res = cache.reward[t] - cache.predict(t, p.beta[z]);
                rss_z += gamma_z[t] * res * res;
            }
            if (opt.per_state_sigma) {
                p.sigma_per_state[z] =
                    std::max(opt.sigma_floor, std::sqrt(rss_z / std::max(mass[z], 1e-12)));
            }
            pooled_rss += rss_z;
        }
        p.sigma = std::max(opt.sigma_floor, std::sqrt(pooled_rss / static_cast<double>(T)));
        for (int z = 0; z < L; ++z) {
            double row = 0.0;
            for (int zn = 0; zn < L; ++zn) row += fb.trans_counts[z * L + zn];
            for (int zn = 0; zn < L; ++zn)
                p.transition[static_cast<std::size_t>(z) * L + zn] =
                    row > 0.0 ? fb.trans_counts[z * L + zn] / row : 1.0 / L;
        }
        for (int z = 0; z < L; ++z) p.p0[z] = fb.gamma[z];
        // guard against exact zeros that would freeze states out
        double p0_sum = 0.0;
        for (int z = 0; z < L; ++z) {
            p.p0[z] = std::max(p.p0[z], 1e-12);
            p0_sum += p.p0[z];
        }
        for (int z = 0; z < L; ++z) p.p0[z] /= p0_sum;

        if (!reseeded && iter > 0 && fb.log_likelihood - prev_ll < opt.tol) {
            prev_ll = fb.log_likelihood;
            break;
        }
        prev_ll = fb.log_likelihood;
    }

    // log-likelihood of the returned parameters (forward pass only)
    const auto le = emission_log_densities(cache, p);
    const auto fb = forward_backward(le, T, L, p);
    out.trace.log_likelihood.push_back(fb.log_likelihood);
    out.final_log_likelihood = fb.log_likelihood;
    out.params = std::move(p);
    return out;
}

}  // namespace detail

// Baum-Welch estimation of the HMM from logged data. Restarts use rotated
// contiguous-block initializations; the best final log-likelihood wins.
inline EmFitResult fit_hmm(const LoggedData& data, const FeatureMap& map, int num_states,
                           const EmFitOptions& options, SplitRng& rng) {
    if (data.empty()) throw InputError("fit_hmm: empty data");
    if (num_states < 1) throw InputError("fit_hmm: need at least one state");
    if (options.restarts < 1) throw InputError("fit_hmm: need at least one restart");
    const auto cache = detail::EmissionCache::build(data, map);
    const std::int64_t T = cache.size();

    const int R = options.restarts;
    std::vector<detail::RestartOutcome> outcomes(R);
    std::vector<SplitRng> rngs;
    rngs.reserve(R);
    for (int j = 0; j < R; ++j) rngs.push_back(rng.child(0x454d5253ULL + j));
    parallel_for(R, options.threads, [&](std::size_t j) {
        const std::int64_t offset = static_cast<std::int64_t>(j) * T / R;
        outcomes[j] = detail::em_run(cache, map, num_states, options, offset, rngs[j]);
    });

    EmFitResult result;
    int best = 0;
    for (int j = 1; j < R; ++j)
        if (outcomes[j].final_log_likelihood > outcomes[best].final_log_likelihood) best = j;
    result.params = std::move(outcomes[best].params);
    result.best_restart = best;
    result.log_likelihood = outcomes[best].final_log_likelihood;
    for (auto& o : outcomes) {
        result.traces.push_back(std::move(o.trace));
        for (auto& w : o.warnings) result.warnings.push_back(std::move(w));
    }
    return result;
}

}  // namespace driftopt
