#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "driftopt/core.hpp"
#include "driftopt/rng.hpp"

using namespace driftopt;

TEST_CASE("zero weights give the uniform distribution") {
    const FeatureMap map = FeatureMap::tabular(1, 5);
    const SoftmaxPolicy policy = SoftmaxPolicy::uniform(map);
    const auto dist = policy.action_distribution(Context::tabular(0));
    REQUIRE(dist.size() == 5);
    for (double p : dist) REQUIRE(p == Catch::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("hand-evaluated two-action softmax") {
    const FeatureMap map = FeatureMap::tabular(1, 2);
    const SoftmaxPolicy policy(map, {std::log(3.0), 0.0});
    const auto dist = policy.action_distribution(Context::tabular(0));
    REQUIRE(dist[0] == Catch::Approx(0.75).margin(1e-12));
    REQUIRE(dist[1] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("softmax is invariant to a constant logit shift") {
    const FeatureMap map = FeatureMap::tabular(1, 4);
    SplitRng rng(7);
    std::vector<double> theta(4);
    for (double& v : theta) v = rng.normal(0.0, 2.0);
    std::vector<double> shifted = theta;
    for (double& v : shifted) v += 13.5;
    const auto a = SoftmaxPolicy(map, theta).action_distribution(Context::tabular(0));
    const auto b = SoftmaxPolicy(map, shifted).action_distribution(Context::tabular(0));
    for (int i = 0; i < 4; ++i) REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-12));
}

TEST_CASE("distributions stay positive, normalized, and finite up to |logit| = 700") {
    const FeatureMap map = FeatureMap::tabular(1, 3);
    SplitRng rng(11);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> theta(3);
        for (double& v : theta) v = (rng.uniform01() * 2.0 - 1.0) * 700.0;
        const auto dist = SoftmaxPolicy(map, theta).action_distribution(Context::tabular(0));
        double sum = 0.0;
        for (double p : dist) {
            REQUIRE(std::isfinite(p));
            REQUIRE(p >= 0.0);
            sum += p;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(*std::max_element(dist.begin(), dist.end()) > 0.0);
    }
}

TEST_CASE("theta length must match the feature dimension") {
    const FeatureMap map = FeatureMap::tabular(1, 3);
    REQUIRE_THROWS_AS(SoftmaxPolicy(map, {0.0, 0.0}), ConfigError);
}

TEST_CASE("tabular feature map yields one-hot vectors over (context, action) pairs") {
    const FeatureMap map = FeatureMap::tabular(3, 2);
    REQUIRE(map.dim() == 6);
    for (int c = 0; c < 3; ++c) {
        for (int a = 0; a < 2; ++a) {
            const auto f = map.features(Context::tabular(c), a);
            REQUIRE(static_cast<int>(f.size()) == map.dim());
            double sum = 0.0;
            for (double v : f) sum += v;
            REQUIRE(sum == 1.0);
            REQUIRE(f[map.tabular_index(Context::tabular(c), a)] == 1.0);
        }
    }
    REQUIRE_THROWS_AS(map.features(Context::tabular(3), 0), InputError);
    REQUIRE_THROWS_AS(map.features(Context::tabular(0), 2), InputError);
}

TEST_CASE("dense feature map places the context in the action block") {
    const FeatureMap map = FeatureMap::dense(2, 3);
    REQUIRE(map.dim() == 6);
    const Context x = Context::vec({0.5, -1.0});
    const auto f = map.features(x, 1);
    REQUIRE(f == std::vector<double>{0.0, 0.0, 0.5, -1.0, 0.0, 0.0});
    std::vector<double> theta{1, 2, 3, 4, 5, 6};
    REQUIRE(map.logit(theta, x, 1) == Catch::Approx(3 * 0.5 - 4.0));
}

TEST_CASE("sampling is deterministic for a fixed seed and concentrates correctly") {
    const FeatureMap map = FeatureMap::tabular(1, 2);
    const SoftmaxPolicy policy(map, {std::log(3.0), 0.0});  // [0.75, 0.25]
    const Context x = Context::tabular(0);

    SplitRng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(policy.sample_action(x, a) == policy.sample_action(x, b));

    SplitRng rng(123);
    int count0 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) count0 += policy.sample_action(x, rng) == 0;
    REQUIRE(std::abs(count0 / static_cast<double>(n) - 0.75) < 0.01);
}

TEST_CASE("near-deterministic distribution yields the dominant action") {
    SplitRng rng(5);
    std::vector<double> w{1.0 - 1e-15, 1e-15};
    for (int i = 0; i < 1000; ++i) REQUIRE(rng.categorical(w) == 0);
}

TEST_CASE("segments of a constant sequence") {
    const LatentSequence seq({0, 0, 0}, 1);
    const auto segs = seq.segments();
    REQUIRE(segs == std::vector<Segment>{{0, 3, 0}});
    REQUIRE(seq.num_segments() == 1);
}

TEST_CASE("segments of a mixed sequence") {
    const LatentSequence seq({0, 0, 1, 1, 0}, 2);
    const auto segs = seq.segments();
    REQUIRE(segs == std::vector<Segment>{{0, 2, 0}, {2, 4, 1}, {4, 5, 0}});
    REQUIRE(seq.num_segments() == 3);
    REQUIRE(seq.change_points() == std::vector<std::int64_t>{1, 3, 4});
}

TEST_CASE("segments round-trip back to the label vector") {
    SplitRng rng(99);
    for (int rep = 0; rep < 50; ++rep) {
        const int T = 1 + static_cast<int>(rng.uniform_int(40));
        const int L = 1 + static_cast<int>(rng.uniform_int(4));
        std::vector<int> labels(T);
        for (int& z : labels) z = static_cast<int>(rng.uniform_int(L));
        const LatentSequence seq(labels, L);
        const auto segs = seq.segments();
        // contiguous, covering, constant-label, adjacent labels differ
        REQUIRE(segs.front().begin == 0);
        REQUIRE(segs.back().end == T);
        for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
            REQUIRE(segs[i].end == segs[i + 1].begin);
            REQUIRE(segs[i].label != segs[i + 1].label);
        }
        const LatentSequence rebuilt = LatentSequence::from_segments(segs, L);
        REQUIRE(rebuilt == seq);
        REQUIRE(static_cast<int>(segs.size()) == seq.num_segments());
    }
}

TEST_CASE("latent labels must be in range") {
    REQUIRE_THROWS_AS(LatentSequence({0, 2}, 2), InputError);
    REQUIRE_THROWS_AS(LatentSequence({}, 2), InputError);
}

TEST_CASE("keyed rng children are order-independent") {
    SplitRng a(17), b(17);
    SplitRng a1 = a.child(1);
    (void)a.child(2);
    SplitRng b2 = b.child(2);
    SplitRng b1 = b.child(1);
    (void)b2;
    REQUIRE(a1.next_u64() == b1.next_u64());
}
