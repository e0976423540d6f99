#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driftopt/changepoint.hpp"
#include "driftopt/deploy.hpp"
#include "driftopt/envgen.hpp"
#include "driftopt/estimators.hpp"
#include "driftopt/hmm.hpp"
#include "driftopt/io.hpp"
#include "driftopt/learner.hpp"
#include "driftopt/utils.hpp"

namespace driftopt {

// The full synthetic pipeline: generate -> label (detector or HMM) -> learn
// per-state policies -> deploy -> report, over a seeds x methods x k grid.
struct ExperimentConfig {
    SyntheticEnvConfig env;
    std::vector<std::string> methods = {"ips", "dr", "poem", "k-cd", "k-hmm"};
    std::vector<int> k_values = {5};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    TrainConfig train;
    std::int64_t detector_window = 4000;
    EmFitOptions em;
    std::int64_t horizon = 0;       // 0 = env horizon
    std::int64_t latent_shift = 0;  // deploy on the schedule rotated by this many rounds
    std::string out_dir = "out";
    int threads = 0;

    void validate() const {
        if (seeds.empty()) throw ConfigError("ExperimentConfig: need at least one seed");
        for (int k : k_values)
            if (k < 1) throw ConfigError("ExperimentConfig: k values must be >= 1");
        for (const auto& m : methods)
            if (m != "ips" && m != "dr" && m != "poem" && m != "k-cd" && m != "k-hmm")
                throw ConfigError("ExperimentConfig: unknown method " + m);
    }
};

struct ReportRow {
    std::string method;
    int k = 0;  // 0 for stationary baselines
    std::uint64_t seed = 0;
    double mean_reward = 0.0;
    double regret = 0.0;
    double wall_clock_s = 0.0;
    bool failed = false;
    std::string error;
};

struct AggregateRow {
    std::string method;
    int k = 0;
    int seeds = 0;
    int failed_seeds = 0;
    double mean_reward_mean = 0.0;
    double mean_reward_std = 0.0;
    double regret_mean = 0.0;
    double regret_std = 0.0;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    bool all_succeeded = true;
};

namespace detail {

inline LearnerObjective objective_of(const std::string& method) {
    if (method == "dr") return LearnerObjective::Dr;
    if (method == "poem") return LearnerObjective::Poem;
    return LearnerObjective::Ips;
}

struct SeedTask {
    std::string method;
    int k;  // 0 for baselines
};

inline ReportRow run_one(const ExperimentConfig& cfg, const EnvSpec& env, const LoggedData& log,
                         const SeedTask& task, std::uint64_t seed, SplitRng root) {
    ReportRow row;
    row.method = task.method;
    row.k = task.k;
    row.seed = seed;
    const auto started = std::chrono::steady_clock::now();

    const FeatureMap map = env.logging_policy.feature_map();
    const std::int64_t horizon = cfg.horizon > 0 ? cfg.horizon : env.horizon();
    const std::string key = task.method + "/k" + std::to_string(task.k);

    std::optional<LatentSequence> shifted;
    if (cfg.latent_shift != 0) {
        const std::int64_t n = env.schedule.size();
        const std::int64_t shift = ((cfg.latent_shift % n) + n) % n;
        std::vector<int> labels(n);
        for (std::int64_t t = 0; t < n; ++t) labels[t] = env.schedule[(t + shift) % n];
        shifted.emplace(std::move(labels), env.num_states);
    }

    DeployOptions deploy;
    deploy.horizon = horizon;
    deploy.record_rows = false;
    if (shifted) deploy.latent_override = &*shifted;

    PolicyBundle bundle;
    HmmParams hmm;
    if (task.method == "k-cd") {
        std::vector<double> rewards(log.size());
        for (std::size_t i = 0; i < log.size(); ++i) rewards[i] = log[i].reward;
        DetectorConfig det{cfg.detector_window,
                           experiment_threshold(static_cast<std::int64_t>(log.size()), cfg.detector_window),
                           std::nullopt};
        const DetectionResult detection = detect_change_points(rewards, det);
        const LatentSequence merged = cluster_segments(log, detection.labels, task.k,
                                                       root.child(hash_key(key + "/kmeans")).seed());
        TrainConfig train = cfg.train;
        train.objective = LearnerObjective::Ips;
        bundle = train_sub_policies(log, merged, map, train);
        deploy.switcher = SwitcherKind::Exp4s;
    } else if (task.method == "k-hmm") {
        SplitRng em_rng = root.child(hash_key(key + "/em"));
        EmFitOptions em = cfg.em;
        em.threads = 1;  // the seed grid already owns the cores
        const EmFitResult fit = fit_hmm(log, map, task.k, em, em_rng);
        const SmoothResult smooth = smooth_labels(fit.params, log);
        TrainConfig train = cfg.train;
        train.objective = LearnerObjective::Ips;
        bundle = train_sub_policies(log, smooth.labels, map, train);
        hmm = fit.params;
        deploy.switcher = SwitcherKind::Posterior;
        deploy.hmm = &hmm;
    } else {
        TrainConfig train = cfg.train;
        train.objective = objective_of(task.method);
        bundle.sub_policies.push_back(train_stationary_baseline(log, map, train));
        bundle.objective_curves.assign(1, {});
        deploy.switcher = SwitcherKind::Exp4s;
    }

    // deployment rng keyed by method only: the k-sweep compares k values as a
    // paired experiment under common random numbers
    SplitRng deploy_rng = root.child(hash_key(task.method + "/deploy"));
    const DeploymentTrace trace = run_deployment(env, bundle, deploy, deploy_rng);
    row.mean_reward = trace.mean_reward;
    row.regret = trace.regret;
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return row;
}

}  // namespace detail

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();

    std::vector<detail::SeedTask> tasks;
    for (const auto& method : cfg.methods) {
        if (method == "k-cd" || method == "k-hmm") {
            for (int k : cfg.k_values) tasks.push_back({method, k});
        } else {
            tasks.push_back({method, 0});
        }
    }

    const std::size_t n_seeds = cfg.seeds.size();
    std::vector<std::vector<ReportRow>> per_seed(n_seeds);
    parallel_for(n_seeds, cfg.threads, [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        SplitRng root(seed);
        SplitRng env_rng = root.child(hash_key("env"));
        SplitRng log_rng = root.child(hash_key("log"));
        const EnvSpec env = generate_synthetic_env(cfg.env, env_rng);
        const LoggedData log = simulate_log(env, log_rng);
        for (const auto& task : tasks) {
            ReportRow row;
            try {
                row = detail::run_one(cfg, env, log, task, seed, root);
            } catch (const std::exception& e) {
                row.method = task.method;
                row.k = task.k;
                row.seed = seed;
                row.failed = true;
                row.error = e.what();
            }
            per_seed[i].push_back(std::move(row));
        }
    });

    ExperimentReport report;
    for (auto& rows : per_seed)
        for (auto& row : rows) {
            report.all_succeeded = report.all_succeeded && !row.failed;
            report.rows.push_back(std::move(row));
        }
    return report;
}

// Aggregate mean and population standard deviation per (method, k),
// excluding failed seeds.
inline std::vector<AggregateRow> aggregate_rows(const std::vector<ReportRow>& rows) {
    std::map<std::pair<std::string, int>, std::vector<const ReportRow*>> groups;
    for (const auto& row : rows) groups[{row.method, row.k}].push_back(&row);
    std::vector<AggregateRow> out;
    for (const auto& [key, members] : groups) {
        AggregateRow agg;
        agg.method = key.first;
        agg.k = key.second;
        std::vector<double> rewards, regrets;
        for (const ReportRow* r : members) {
            if (r->failed) {
                ++agg.failed_seeds;
                continue;
            }
            rewards.push_back(r->mean_reward);
            regrets.push_back(r->regret);
        }
        agg.seeds = static_cast<int>(rewards.size());
        agg.mean_reward_mean = mean_of(rewards);
        agg.mean_reward_std = stddev_of(rewards);
        agg.regret_mean = mean_of(regrets);
        agg.regret_std = stddev_of(regrets);
        out.push_back(std::move(agg));
    }
    return out;
}

// Fixed column orders. Wall-clock times go to the text report and the
// timings file only, so the CSV outputs are byte-stable across reruns.
inline std::string rows_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << "method,k,seed,mean_reward,regret,failed\n";
    for (const auto& r : rows)
        os << r.method << ',' << r.k << ',' << r.seed << ',' << io::format_double(r.mean_reward)
           << ',' << io::format_double(r.regret) << ',' << (r.failed ? 1 : 0) << '\n';
    return os.str();
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& aggs) {
    std::ostringstream os;
    os << "method,k,seeds,failed_seeds,mean_reward_mean,mean_reward_std,regret_mean,regret_std\n";
    for (const auto& a : aggs)
        os << a.method << ',' << a.k << ',' << a.seeds << ',' << a.failed_seeds << ','
           << io::format_double(a.mean_reward_mean) << ',' << io::format_double(a.mean_reward_std)
           << ',' << io::format_double(a.regret_mean) << ',' << io::format_double(a.regret_std)
           << '\n';
    return os.str();
}

// Plot data for the k-sweep: one line per (method, k) for the k-methods.
inline std::string ksweep_csv(const std::vector<AggregateRow>& aggs) {
    std::ostringstream os;
    os << "method,k,mean_reward_mean,mean_reward_std\n";
    for (const auto& a : aggs)
        if (a.k > 0)
            os << a.method << ',' << a.k << ',' << io::format_double(a.mean_reward_mean) << ','
               << io::format_double(a.mean_reward_std) << '\n';
    return os.str();
}

inline std::string text_table(const std::vector<ReportRow>& rows,
                              const std::vector<AggregateRow>& aggs) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "method     k   seeds  mean_reward        regret\n";
    for (const auto& a : aggs) {
        os << std::left << std::setw(9) << a.method << std::right << std::setw(4) << a.k
           << std::setw(7) << a.seeds << std::setw(9) << a.mean_reward_mean << " +- "
           << std::setw(6) << a.mean_reward_std << std::setw(12) << a.regret_mean << " +- "
           << a.regret_std;
        if (a.failed_seeds > 0) os << "   [" << a.failed_seeds << " seed(s) failed]";
        os << '\n';
    }
    double wall = 0.0;
    for (const auto& r : rows) wall += r.wall_clock_s;
    os << "total method wall clock: " << std::setprecision(1) << wall << " s\n";
    return os.str();
}

inline std::string timings_txt(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    for (const auto& r : rows)
        os << r.method << ",k=" << r.k << ",seed=" << r.seed << ": "
           << io::format_double(r.wall_clock_s) << " s" << (r.failed ? " [failed: " + r.error + "]" : "")
           << '\n';
    return os.str();
}

inline void write_report_files(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto aggs = aggregate_rows(report.rows);
    io::write_file(dir / "rows.csv", rows_csv(report.rows));
    io::write_file(dir / "aggregate.csv", aggregate_csv(aggs));
    io::write_file(dir / "ksweep.csv", ksweep_csv(aggs));
    io::write_file(dir / "report.txt", text_table(report.rows, aggs));
    io::write_file(dir / "timings.txt", timings_txt(report.rows));
}

// ---- experiment config as JSON ----

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (j.contains("env")) {
        const auto& e = j.at("env");
        if (e.contains("num_actions")) cfg.env.num_actions = e.at("num_actions");
        if (e.contains("num_states")) cfg.env.num_states = e.at("num_states");
        if (e.contains("horizon")) cfg.env.horizon = e.at("horizon");
        if (e.contains("noise_sigma")) cfg.env.noise_sigma = e.at("noise_sigma");
        if (e.contains("change_period")) cfg.env.change_period = e.at("change_period");
        if (e.contains("logging_noise")) cfg.env.logging_noise = e.at("logging_noise");
        if (e.contains("schedule"))
            cfg.env.schedule = e.at("schedule") == "cycle" ? ScheduleKind::CycleUp
                                                           : ScheduleKind::TriangleRamp;
    }
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("k_values")) cfg.k_values = j.at("k_values").get<std::vector<int>>();
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("clip")) cfg.train.clip = t.at("clip");
        if (t.contains("temperature")) cfg.train.temperature = t.at("temperature");
        if (t.contains("steps")) cfg.train.steps = t.at("steps");
        if (t.contains("learning_rate")) cfg.train.learning_rate = t.at("learning_rate");
        if (t.contains("var_penalty")) cfg.train.var_penalty = t.at("var_penalty");
    }
    if (j.contains("detector") && j.at("detector").contains("window"))
        cfg.detector_window = j.at("detector").at("window");
    if (j.contains("hmm")) {
        const auto& h = j.at("hmm");
        if (h.contains("max_iters")) cfg.em.max_iters = h.at("max_iters");
        if (h.contains("tol")) cfg.em.tol = h.at("tol");
        if (h.contains("restarts")) cfg.em.restarts = h.at("restarts");
    }
    if (j.contains("horizon")) cfg.horizon = j.at("horizon");
    if (j.contains("latent_shift")) cfg.latent_shift = j.at("latent_shift");
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir");
    if (j.contains("threads")) cfg.threads = j.at("threads");
    return cfg;
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["env"] = {{"num_actions", cfg.env.num_actions},
                {"num_states", cfg.env.num_states},
                {"horizon", cfg.env.horizon},
                {"noise_sigma", cfg.env.noise_sigma},
                {"change_period", cfg.env.change_period},
                {"logging_noise", cfg.env.logging_noise},
                {"schedule", cfg.env.schedule == ScheduleKind::CycleUp ? "cycle" : "triangle"}};
    j["methods"] = cfg.methods;
    j["k_values"] = cfg.k_values;
    j["seeds"] = cfg.seeds;
    j["train"] = {{"clip", cfg.train.clip},
                  {"temperature", cfg.train.temperature},
                  {"steps", cfg.train.steps},
                  {"learning_rate", cfg.train.learning_rate},
                  {"var_penalty", cfg.train.var_penalty}};
    j["detector"] = {{"window", cfg.detector_window}};
    j["hmm"] = {{"max_iters", cfg.em.max_iters}, {"tol", cfg.em.tol}, {"restarts", cfg.em.restarts}};
    j["horizon"] = cfg.horizon;
    j["latent_shift"] = cfg.latent_shift;
    j["out_dir"] = cfg.out_dir;
    j["threads"] = cfg.threads;
    return j;
}

}  // namespace driftopt
