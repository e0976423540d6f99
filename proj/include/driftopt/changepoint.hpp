#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "driftopt/core.hpp"
#include "driftopt/rng.hpp"

namespace driftopt {

struct DetectorConfig {
    std::int64_t window;  // w, in rounds
    double threshold;     // c, in reward units
    std::optional<double> delta_lower;  // known lower bound on the change magnitude

    void validate() const {
        if (window < 1) throw InputError("DetectorConfig: window must be >= 1");
        if (!(threshold > 0.0)) throw InputError("DetectorConfig: threshold must be positive");
    }
};

struct DetectionResult {
    // statistics[t] = |mean(r[t-w..t-1]) - mean(r[t..t+w-1])| for t in [w, T-w]
    // (0-based), zero outside that range.
    std::vector<double> statistics;
    // Detected change-points: 0-based index of the last round of each segment
    // except the final one; ascending.
    std::vector<std::int64_t> change_points;
    // Sequential segment ids: round t gets the index of the first change-point
    // at or after it.
    LatentSequence labels;
};

// Sliding-window change-point detector. Computes the difference of the
// leading and trailing window means at every round, then greedily declares
// the largest statistic a change-point and removes candidates within 2w of
// it, until no statistic above the threshold remains. Ties in the argmax are
// broken toward the smallest round.
inline DetectionResult detect_change_points(std::span<const double> rewards,
                                            const DetectorConfig& config) {
    config.validate();
    const std::int64_t T = static_cast<std::int64_t>(rewards.size());
    const std::int64_t w = config.window;
    if (T <= 2 * w) throw InputError("detect_change_points: need T > 2w rounds");

    std::vector<double> prefix(T + 1, 0.0);
    for (std::int64_t t = 0; t < T; ++t) prefix[t + 1] = prefix[t] + rewards[t];
    const auto window_mean = [&](std::int64_t begin, std::int64_t end) {
        return (prefix[end] - prefix[begin]) / static_cast<double>(end - begin);
    };

    std::vector<double> stats(T, 0.0);
    for (std::int64_t t = w; t + w <= T; ++t)
        stats[t] = std::abs(window_mean(t - w, t) - window_mean(t, t + w));

    std::vector<char> candidate(T, 0);
    for (std::int64_t t = w; t + w <= T; ++t) candidate[t] = stats[t] >= config.threshold;

    std::vector<std::int64_t> detected;
    for (;;) {
        std::int64_t best = -1;
        for (std::int64_t t = 0; t < T; ++t)
            if (candidate[t] && (best < 0 || stats[t] > stats[best])) best = t;
        if (best < 0) break;
        detected.push_back(best);
        const std::int64_t lo = std::max<std::int64_t>(0, best - 2 * w);
        const std::int64_t hi = std::min<std::int64_t>(T - 1, best + 2 * w);
        std::fill(candidate.begin() + lo, candidate.begin() + hi + 1, char{0});
    }
    std::sort(detected.begin(), detected.end());

    std::vector<int> labels(T);
    std::size_t seg = 0;
    for (std::int64_t t = 0; t < T; ++t) {
        while (seg < detected.size() && t > detected[seg]) ++seg;
        labels[t] = static_cast<int>(seg);
    }
    const int num_segments = static_cast<int>(detected.size()) + 1;
    return DetectionResult{std::move(stats), std::move(detected),
                           LatentSequence(std::move(labels), num_segments)};
}

struct TheoremParams {
    std::int64_t window;
    double threshold;
};

// Parameter rule w = ceil(8 log(16 T / delta) / delta_lower^2), c = delta_lower / 2.
inline TheoremParams theorem_params(std::int64_t horizon, double delta_lower, double delta) {
    if (!(delta_lower > 0.0)) throw InputError("theorem_params: delta_lower must be positive");
    if (!(delta > 0.0 && delta <= 1.0)) throw InputError("theorem_params: delta must be in (0, 1]");
    const double w = 8.0 * std::log(16.0 * static_cast<double>(horizon) / delta) /
                     (delta_lower * delta_lower);
    return TheoremParams{static_cast<std::int64_t>(std::ceil(w)), delta_lower / 2.0};
}

// Threshold rule for a user-chosen window: c = sqrt(2 log(8 T^2) / w),
// i.e. the theorem bound at delta = 1/T.
inline double experiment_threshold(std::int64_t horizon, std::int64_t window) {
    if (window < 1) throw InputError("experiment_threshold: window must be >= 1");
    const double T = static_cast<double>(horizon);
    return std::sqrt(2.0 * std::log(8.0 * T * T) / static_cast<double>(window));
}

struct Kmeans1dResult {
    std::vector<int> assignment;
    std::vector<double> centers;
    double inertia = 0.0;
};

// 1-D k-means with k-means++ seeding, restarted and keeping the lowest
// within-cluster sum of squares.
inline Kmeans1dResult kmeans_1d(std::span<const double> values, int k, SplitRng& rng,
                                int restarts = 100, int max_iters = 100) {
    const int n = static_cast<int>(values.size());
    if (k < 1) throw InputError("kmeans_1d: k must be >= 1");
    if (n == 0) throw InputError("kmeans_1d: empty input");
    if (k >= n) {
        Kmeans1dResult r;
        r.assignment.resize(n);
        std::iota(r.assignment.begin(), r.assignment.end(), 0);
        r.centers.assign(values.begin(), values.end());
        return r;
    }

    Kmeans1dResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    std::vector<double> centers(k), dist2(n);
    std::vector<int> assign(n);
    for (int restart = 0; restart < restarts; ++restart) {
        // k-means++ seeding
        centers[0] = values[rng.uniform_int(n)];
        for (int c = 1; c < k; ++c) {
            for (int i = 0; i < n; ++i) {
                double d = std::numeric_limits<double>::infinity();
                for (int j = 0; j < c; ++j) d = std::min(d, (values[i] - centers[j]) * (values[i] - centers[j]));
                dist2[i] = d;
            }
            const double total = std::accumulate(dist2.begin(), dist2.end(), 0.0);
            centers[c] = total > 0.0 ? values[rng.categorical(dist2)]
                                     : values[rng.uniform_int(n)];
        }
        // Lloyd iterations
        double inertia = 0.0;
        for (int iter = 0; iter < max_iters; ++iter) {
            inertia = 0.0;
            for (int i = 0; i < n; ++i) {
                int arg = 0;
                double bestd = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double d = (values[i] - centers[c]) * (values[i] - centers[c]);
                    if (d < bestd) {
                        bestd = d;
                        arg = c;
                    }
                }
                assign[i] = arg;
                inertia += bestd;
            }
            std::vector<double> sums(k, 0.0);
            std::vector<int> counts(k, 0);
            for (int i = 0; i < n; ++i) {
                sums[assign[i]] += values[i];
                ++counts[assign[i]];
            }
            bool moved = false;
            for (int c = 0; c < k; ++c) {
                double next;
                if (counts[c] > 0) {
                    next = sums[c] / counts[c];
                } else {
                    // Re-seed an empty cluster at the point farthest from its center.
                    double far = -1.0;
                    next = centers[c];
                    for (int i = 0; i < n; ++i) {
                        const double d = (values[i] - centers[assign[i]]) * (values[i] - centers[assign[i]]);
                        if (d > far) {
                            far = d;
                            next = values[i];
                        }
                    }
                }
                if (next != centers[c]) moved = true;
                centers[c] = next;
            }
            if (!moved) break;
        }
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.assignment = assign;
            best.centers = centers;
        }
    }
    return best;
}

// Merge detected stationary segments into at most k latent states by 1-D
// k-means over per-segment mean rewards of the logging policy. Cluster ids
// are relabeled by first occurrence along the horizon.
inline LatentSequence cluster_segments(const LoggedData& data, const LatentSequence& labels,
                                       int k, std::uint64_t seed = 0x6b6d65616e73ULL) {
    if (k < 1) throw InputError("cluster_segments: k must be >= 1");
    if (labels.size() != static_cast<std::int64_t>(data.size()))
        throw ConfigError("cluster_segments: labels length does not match data");

    const std::vector<Segment> segments = labels.segments();
    const int S = static_cast<int>(segments.size());
    std::vector<double> seg_value(S);
    for (int s = 0; s < S; ++s) {
        double sum = 0.0;
        for (std::int64_t t = segments[s].begin; t < segments[s].end; ++t) sum += data[t].reward;
        seg_value[s] = sum / static_cast<double>(segments[s].end - segments[s].begin);
    }

    std::vector<int> seg_cluster(S);
    if (S <= k) {
        std::iota(seg_cluster.begin(), seg_cluster.end(), 0);
    } else {
        SplitRng rng(seed);
        seg_cluster = kmeans_1d(seg_value, k, rng).assignment;
    }

    // relabel clusters to [0, k') by first occurrence
    std::vector<int> remap(std::max(S, k), -1);
    int next_id = 0;
    std::vector<int> out(labels.size());
    for (int s = 0; s < S; ++s) {
        int& id = remap[seg_cluster[s]];
        if (id < 0) id = next_id++;
        for (std::int64_t t = segments[s].begin; t < segments[s].end; ++t) out[t] = id;
    }
    return LatentSequence(std::move(out), next_id);
}

}  // namespace driftopt
