#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftopt/rng.hpp"

namespace driftopt {

// Error categories. Configuration: caller wired incompatible pieces together.
// Data: a record violates its contract. Input: an argument is out of range.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ActionSpace {
    int num_actions;  // K

    explicit ActionSpace(int k) : num_actions(k) {
        if (k < 2) throw ConfigError("ActionSpace: need at least 2 actions");
    }
};

// A context is either a small integer id (tabular problems) or a dense
// feature vector. The FeatureMap mode decides which part is read.
struct Context {
    int id = 0;
    std::vector<double> dense;

    static Context tabular(int id) { return Context{id, {}}; }
    static Context vec(std::vector<double> v) { return Context{0, std::move(v)}; }
};

enum class FeatureMode { TabularIndicator, Dense };

// Joint context-action feature map f(x, a) in R^d.
//   tabular: one-hot over (context id, action) pairs, d = num_contexts * K.
//   dense:   context vector placed in the block of the chosen action,
//            d = context_dim * K.
class FeatureMap {
  public:
    static FeatureMap tabular(int num_contexts, int num_actions) {
        if (num_contexts < 1) throw ConfigError("FeatureMap: need at least 1 context");
        if (num_actions < 2) throw ConfigError("FeatureMap: need at least 2 actions");
        FeatureMap m;
        m.mode_ = FeatureMode::TabularIndicator;
        m.num_actions_ = num_actions;
        m.num_contexts_ = num_contexts;
        m.dim_ = num_contexts * num_actions;
        return m;
    }

    static FeatureMap dense(int context_dim, int num_actions) {
        if (context_dim < 1) throw ConfigError("FeatureMap: context_dim must be positive");
        if (num_actions < 2) throw ConfigError("FeatureMap: need at least 2 actions");
        FeatureMap m;
        m.mode_ = FeatureMode::Dense;
        m.num_actions_ = num_actions;
        m.context_dim_ = context_dim;
        m.dim_ = context_dim * num_actions;
        return m;
    }

    FeatureMode mode() const { return mode_; }
    int dim() const { return dim_; }
    int num_actions() const { return num_actions_; }
    int num_contexts() const { return num_contexts_; }
    int context_dim() const { return context_dim_; }

    bool operator==(const FeatureMap&) const = default;

    int tabular_index(const Context& x, int action) const {
        check_action(action);
        if (x.id < 0 || x.id >= num_contexts_) throw InputError("FeatureMap: context id out of range");
        return x.id * num_actions_ + action;
    }

    void features(const Context& x, int action, std::span<double> out) const {
        if (static_cast<int>(out.size()) != dim_) throw ConfigError("FeatureMap: output span has wrong length");
        std::fill(out.begin(), out.end(), 0.0);
        if (mode_ == FeatureMode::TabularIndicator) {
            out[tabular_index(x, action)] = 1.0;
        } else {
            check_action(action);
            if (static_cast<int>(x.dense.size()) != context_dim_)
                throw ConfigError("FeatureMap: context vector has wrong dimension");
            std::copy(x.dense.begin(), x.dense.end(), out.begin() + action * context_dim_);
        }
    }

    std::vector<double> features(const Context& x, int action) const {
        std::vector<double> out(dim_);
        features(x, action, out);
        return out;
    }

    // theta^T f(x, a) without materializing the feature vector.
    double logit(std::span<const double> theta, const Context& x, int action) const {
        if (static_cast<int>(theta.size()) != dim_)
            throw ConfigError("FeatureMap: parameter vector has wrong dimension");
        if (mode_ == FeatureMode::TabularIndicator) return theta[tabular_index(x, action)];
        check_action(action);
        if (static_cast<int>(x.dense.size()) != context_dim_)
            throw ConfigError("FeatureMap: context vector has wrong dimension");
        const double* block = theta.data() + action * context_dim_;
        double s = 0.0;
        for (int i = 0; i < context_dim_; ++i) s += block[i] * x.dense[i];
        return s;
    }

  private:
    void check_action(int action) const {
        if (action < 0 || action >= num_actions_) throw InputError("FeatureMap: action out of range");
    }

    FeatureMode mode_ = FeatureMode::TabularIndicator;
    int num_actions_ = 0;
    int num_contexts_ = 1;
    int context_dim_ = 0;
    int dim_ = 0;
};

// Numerically stable softmax over precomputed logits (max subtraction).
inline void softmax_inplace(std::span<double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - m);
        total += v;
    }
    for (double& v : logits) v /= total;
}

// Linear soft categorical policy: pi(a | x) proportional to exp(theta^T f(x, a)).
class SoftmaxPolicy {
  public:
    SoftmaxPolicy(FeatureMap map, std::vector<double> theta) : map_(map), theta_(std::move(theta)) {
        if (static_cast<int>(theta_.size()) != map_.dim())
            throw ConfigError("SoftmaxPolicy: theta length does not match feature dimension");
    }

    static SoftmaxPolicy uniform(const FeatureMap& map) {
        return SoftmaxPolicy(map, std::vector<double>(map.dim(), 0.0));
    }

    const FeatureMap& feature_map() const { return map_; }
    const std::vector<double>& theta() const { return theta_; }
    int num_actions() const { return map_.num_actions(); }

    void action_distribution(const Context& x, std::span<double> out) const {
        const int k = map_.num_actions();
        if (static_cast<int>(out.size()) != k) throw ConfigError("action_distribution: bad output length");
        for (int a = 0; a < k; ++a) out[a] = map_.logit(theta_, x, a);
        softmax_inplace(out);
    }

    std::vector<double> action_distribution(const Context& x) const {
        std::vector<double> out(map_.num_actions());
        action_distribution(x, out);
        return out;
    }

    double prob(const Context& x, int action) const {
        if (action < 0 || action >= map_.num_actions()) throw InputError("prob: action out of range");
        return action_distribution(x)[action];
    }

    int sample_action(const Context& x, SplitRng& rng) const {
        return rng.categorical(action_distribution(x));
    }

  private:
    FeatureMap map_;
    std::vector<double> theta_;
};

struct LoggedInteraction {
    std::int64_t t = 0;  // round index, 0-based
    Context context;
    int action = 0;  // 0-based
    double reward = 0.0;
    double propensity = 1.0;  // logging probability of `action`, in (0, 1]
};

using LoggedData = std::vector<LoggedInteraction>;

inline void validate(const LoggedData& data, int num_actions) {
    for (const auto& rec : data) {
        if (!(rec.propensity > 0.0)) throw DataError("logged record has non-positive propensity");
        if (rec.action < 0 || rec.action >= num_actions) throw DataError("logged record action out of range");
    }
}

// Half-open round range [begin, end) with a constant latent label.
struct Segment {
    std::int64_t begin;
    std::int64_t end;
    int label;

    bool operator==(const Segment&) const = default;
};

// Per-round latent labels plus the derived segment structure. Labels are
// 0-based internally; exchange formats use 1-based ids.
class LatentSequence {
  public:
    LatentSequence(std::vector<int> labels, int num_states)
        : labels_(std::move(labels)), num_states_(num_states) {
        if (labels_.empty()) throw InputError("LatentSequence: labels must be non-empty");
        if (num_states_ < 1) throw InputError("LatentSequence: need at least one state");
        for (int z : labels_)
            if (z < 0 || z >= num_states_) throw InputError("LatentSequence: label out of range");
    }

    static LatentSequence constant(std::int64_t length, int num_states, int label = 0) {
        return LatentSequence(std::vector<int>(length, label), num_states);
    }

    static LatentSequence from_segments(std::span<const Segment> segments, int num_states) {
        std::vector<int> labels;
        for (const auto& s : segments) {
            if (s.begin != static_cast<std::int64_t>(labels.size()) || s.end <= s.begin)
                throw InputError("LatentSequence: segments must tile the horizon");
            labels.insert(labels.end(), s.end - s.begin, s.label);
        }
        return LatentSequence(std::move(labels), num_states);
    }

    std::int64_t size() const { return static_cast<std::int64_t>(labels_.size()); }
    int num_states() const { return num_states_; }
    int operator[](std::int64_t t) const { return labels_[t]; }
    const std::vector<int>& labels() const { return labels_; }

    std::vector<Segment> segments() const {
        std::vector<Segment> out;
        std::int64_t begin = 0;
        for (std::int64_t t = 1; t <= size(); ++t) {
            if (t == size() || labels_[t] != labels_[begin]) {
                out.push_back(Segment{begin, t, labels_[begin]});
                begin = t;
            }
        }
        return out;
    }

    int num_segments() const {
        int s = 1;
        for (std::size_t t = 1; t < labels_.size(); ++t)
            if (labels_[t] != labels_[t - 1]) ++s;
        return s;
    }

    // Change-points in the convention tau_i = last round of segment i
    // (0-based inclusive), including tau_S = T - 1. Strictly increasing.
    std::vector<std::int64_t> change_points() const {
        std::vector<std::int64_t> out;
        for (const auto& s : segments()) out.push_back(s.end - 1);
        return out;
    }

    bool operator==(const LatentSequence& other) const = default;

  private:
    std::vector<int> labels_;
    int num_states_;
};

}  // namespace driftopt
