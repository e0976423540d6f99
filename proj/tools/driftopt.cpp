// driftopt: off-policy optimization for piecewise-stationary bandits.
//
// Subcommands: generate, detect, fit-hmm, learn, evaluate, deploy,
// experiment, report. See README.md for the file formats.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driftopt/changepoint.hpp"
#include "driftopt/core.hpp"
#include "driftopt/deploy.hpp"
#include "driftopt/envgen.hpp"
#include "driftopt/estimators.hpp"
#include "driftopt/harness.hpp"
#include "driftopt/hmm.hpp"
#include "driftopt/io.hpp"
#include "driftopt/learner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace driftopt;

namespace {

fs::path default_out_dir() {
    if (const char* env = std::getenv("DRIFTOPT_OUT_DIR")) return fs::path(env);
    return fs::path(".");
}

LoggedData load_data(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path);
    return io::read_logged_data(is);
}

LatentSequence load_labels(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path);
    return io::read_labels(is);
}

// Deduce the feature map from the data: tabular over the observed context
// ids unless dense context vectors are present.
FeatureMap infer_feature_map(const LoggedData& data) {
    if (data.empty()) throw DataError("cannot infer a feature map from empty data");
    int max_action = 0;
    int max_context = 0;
    bool dense = false;
    for (const auto& rec : data) {
        max_action = std::max(max_action, rec.action);
        max_context = std::max(max_context, rec.context.id);
        dense = dense || !rec.context.dense.empty();
    }
    if (dense) return FeatureMap::dense(static_cast<int>(data.front().context.dense.size()),
                                        std::max(2, max_action + 1));
    return FeatureMap::tabular(max_context + 1, std::max(2, max_action + 1));
}

int cmd_generate(const std::string& config_path, std::uint64_t seed, const std::string& out) {
    SyntheticEnvConfig env_cfg;
    if (!config_path.empty()) {
        json j = io::read_json_file(config_path);
        if (!j.contains("env")) j = json{{"env", j}};
        env_cfg = experiment_config_from_json(j).env;
    }
    SplitRng root(seed);
    SplitRng env_rng = root.child(hash_key("env"));
    SplitRng log_rng = root.child(hash_key("log"));
    const EnvSpec env = generate_synthetic_env(env_cfg, env_rng);
    const LoggedData data = simulate_log(env, log_rng);

    std::ostringstream lines;
    io::write_logged_data(lines, data);
    io::write_file(out, lines.str());
    io::write_file(out + ".env.json", io::to_json(env).dump(2) + "\n");
    std::cout << "wrote " << data.size() << " rounds to " << out << " (env descriptor alongside)\n";
    return 0;
}

int cmd_detect(const std::string& data_path, std::int64_t window, std::optional<double> threshold,
               std::optional<double> delta_lower, double delta, int k, const std::string& out) {
    const LoggedData data = load_data(data_path);
    std::vector<double> rewards(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) rewards[i] = data[i].reward;

    DetectorConfig cfg{window, 0.0, delta_lower};
    if (threshold) {
        cfg.threshold = *threshold;
    } else if (delta_lower) {
        const TheoremParams params =
            theorem_params(static_cast<std::int64_t>(data.size()), *delta_lower, delta);
        cfg = DetectorConfig{window > 0 ? window : params.window, params.threshold, delta_lower};
    } else {
        cfg.threshold = experiment_threshold(static_cast<std::int64_t>(data.size()), window);
    }

    const DetectionResult result = detect_change_points(rewards, cfg);
    const LatentSequence merged = k > 0 ? cluster_segments(data, result.labels, k) : result.labels;

    std::ostringstream os;
    io::write_labels(os, merged);
    io::write_file(out, os.str());

    json summary;
    summary["window"] = cfg.window;
    summary["threshold"] = cfg.threshold;
    json cps = json::array();
    for (std::int64_t cp : result.change_points) cps.push_back(cp + 1);
    summary["change_points"] = cps;
    summary["segments"] = result.labels.num_segments();
    summary["states_after_clustering"] = merged.num_states();
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_fit_hmm(const std::string& data_path, int L, int iters, double tol, int restarts,
                std::uint64_t seed, const std::string& out, const std::string& labels_out) {
    const LoggedData data = load_data(data_path);
    const FeatureMap map = infer_feature_map(data);
    EmFitOptions opt;
    opt.max_iters = iters;
    opt.tol = tol;
    opt.restarts = restarts;
    SplitRng rng(seed);
    const EmFitResult fit = fit_hmm(data, map, L, opt, rng);
    io::write_file(out, io::to_json(fit.params).dump(2) + "\n");
    if (!labels_out.empty()) {
        const SmoothResult smooth = smooth_labels(fit.params, data);
        std::ostringstream os;
        io::write_labels(os, smooth.labels);
        io::write_file(labels_out, os.str());
    }
    for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << json{{"log_likelihood", fit.log_likelihood},
                      {"best_restart", fit.best_restart + 1},
                      {"iterations", fit.traces[fit.best_restart].log_likelihood.size()}}
                     .dump(2)
              << "\n";
    return 0;
}

int cmd_learn(const std::string& data_path, const std::string& labels_path, double clip, double tau,
              const std::string& kind, int steps, double learning_rate, double var_penalty,
              const std::string& out) {
    const LoggedData data = load_data(data_path);
    const FeatureMap map = infer_feature_map(data);
    validate(data, map.num_actions());
    TrainConfig cfg;
    cfg.clip = clip;
    cfg.temperature = tau;
    cfg.steps = steps;
    cfg.learning_rate = learning_rate;
    cfg.var_penalty = var_penalty;
    if (kind == "ips") cfg.objective = LearnerObjective::Ips;
    else if (kind == "dr") cfg.objective = LearnerObjective::Dr;
    else if (kind == "poem") cfg.objective = LearnerObjective::Poem;
    else throw InputError("learn: unknown kind " + kind);

    PolicyBundle bundle;
    if (!labels_path.empty()) {
        bundle = train_sub_policies(data, load_labels(labels_path), map, cfg);
    } else {
        bundle.sub_policies.push_back(train_stationary_baseline(data, map, cfg));
        bundle.objective_curves.assign(1, {});
    }
    for (const auto& w : bundle.warnings) std::cerr << "warning: " << w << "\n";
    io::write_file(out, io::to_json(bundle).dump(2) + "\n");
    std::cout << "wrote " << bundle.num_states() << " sub-policies to " << out << "\n";
    return 0;
}

int cmd_evaluate(const std::string& data_path, const std::string& policy_path,
                 const std::string& labels_path, double clip, const std::string& kind) {
    const LoggedData data = load_data(data_path);
    const PolicyBundle bundle = io::bundle_from_policy_json(io::read_json_file(policy_path));
    EstimatorConfig cfg;
    cfg.clip = clip;

    json out;
    if (!labels_path.empty()) {
        const LatentSequence labels = load_labels(labels_path);
        if (kind == "ips") {
            const PartitionedEstimate est =
                partitioned_ips_estimate(data, bundle.sub_policies, labels, cfg);
            out["estimate"] = est.total;
            out["per_state"] = est.per_state;
        } else {
            const RewardModel model = fit_reward_model(data, infer_feature_map(data), &labels);
            std::vector<double> per_state(bundle.num_states(), 0.0);
            std::vector<LoggedData> parts(bundle.num_states());
            for (std::size_t i = 0; i < data.size(); ++i) parts[labels[i]].push_back(data[i]);
            double total = 0.0;
            for (int z = 0; z < bundle.num_states(); ++z) {
                if (parts[z].empty()) continue;
                per_state[z] = kind == "dm"
                                   ? dm_estimate(parts[z], bundle.policy_for(z), model, z)
                                   : dr_estimate(parts[z], bundle.policy_for(z), model, cfg, z);
                total += per_state[z];
            }
            out["estimate"] = total;
            out["per_state"] = per_state;
        }
    } else {
        const SoftmaxPolicy& policy = bundle.policy_for(0);
        if (kind == "ips") {
            out["estimate"] = ips_estimate(data, policy, cfg);
        } else {
            const RewardModel model = fit_reward_model(data, infer_feature_map(data));
            out["estimate"] = kind == "dm" ? dm_estimate(data, policy, model)
                                           : dr_estimate(data, policy, model, cfg);
        }
    }
    out["kind"] = kind;
    if (std::isfinite(clip))
        out["clip"] = clip;
    else
        out["clip"] = "inf";
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_deploy(const std::string& env_path, const std::string& bundle_path,
               const std::string& hmm_path, const std::string& switcher, std::int64_t horizon,
               std::uint64_t seed, std::int64_t latent_shift, const std::string& trace_path) {
    const EnvSpec env = io::env_from_json(io::read_json_file(env_path));
    const PolicyBundle bundle = io::bundle_from_policy_json(io::read_json_file(bundle_path));

    DeployOptions opts;
    opts.horizon = horizon;
    HmmParams hmm;
    if (switcher == "exp4s") {
        opts.switcher = SwitcherKind::Exp4s;
    } else if (switcher == "posterior") {
        if (hmm_path.empty()) throw InputError("deploy: posterior switcher needs --hmm");
        hmm = io::hmm_from_json(io::read_json_file(hmm_path));
        opts.switcher = SwitcherKind::Posterior;
        opts.hmm = &hmm;
    } else if (switcher == "oracle") {
        opts.switcher = SwitcherKind::Oracle;
    } else {
        throw InputError("deploy: unknown switcher " + switcher);
    }

    std::optional<LatentSequence> shifted;
    if (latent_shift != 0) {
        const std::int64_t n = env.schedule.size();
        const std::int64_t shift = ((latent_shift % n) + n) % n;
        std::vector<int> labels(n);
        for (std::int64_t t = 0; t < n; ++t) labels[t] = env.schedule[(t + shift) % n];
        shifted.emplace(std::move(labels), env.num_states);
        opts.latent_override = &*shifted;
    }

    SplitRng rng(seed);
    const DeploymentTrace trace = run_deployment(env, bundle, opts, rng);
    if (!trace_path.empty()) {
        std::ostringstream os;
        io::write_trace(os, trace);
        io::write_file(trace_path, os.str());
    }
    std::cout << json{{"mean_reward", trace.mean_reward},
                      {"mean_realized", trace.mean_realized},
                      {"regret", trace.regret},
                      {"horizon", trace.horizon},
                      {"reward_clamp_warnings", trace.clamp_warnings}}
                     .dump(2)
              << "\n";
    if (trace.schedule_cycled) std::cerr << "warning: horizon exceeds the schedule; cycled\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_override,
                   std::vector<std::uint64_t> seeds, std::vector<int> k_values,
                   std::vector<std::string> methods, std::int64_t horizon, int threads,
                   std::int64_t latent_shift) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = experiment_config_from_json(io::read_json_file(config_path));
    if (!seeds.empty()) cfg.seeds = std::move(seeds);
    if (!k_values.empty()) cfg.k_values = std::move(k_values);
    if (!methods.empty()) cfg.methods = std::move(methods);
    if (horizon > 0) cfg.horizon = horizon;
    if (threads > 0) cfg.threads = threads;
    if (latent_shift != 0) cfg.latent_shift = latent_shift;
    fs::path out = out_override.empty() ? default_out_dir() / cfg.out_dir : fs::path(out_override);

    const ExperimentReport report = run_experiment(cfg);
    write_report_files(report, out);
    io::write_file(out / "config.json", to_json(cfg).dump(2) + "\n");
    std::cout << text_table(report.rows, aggregate_rows(report.rows));
    std::cout << "report files in " << out.string() << "\n";
    return report.all_succeeded ? 0 : 1;
}

int cmd_report(const std::string& rows_path, const std::string& out_dir) {
    std::ifstream is(rows_path);
    if (!is) throw InputError("cannot open " + rows_path);
    std::string line;
    std::getline(is, line);  // header
    ExperimentReport report;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        ReportRow row;
        std::getline(ls, row.method, ',');
        std::getline(ls, field, ',');
        row.k = std::stoi(field);
        std::getline(ls, field, ',');
        row.seed = std::stoull(field);
        std::getline(ls, field, ',');
        row.mean_reward = std::stod(field);
        std::getline(ls, field, ',');
        row.regret = std::stod(field);
        if (std::getline(ls, field, ',')) row.failed = field == "1";
        report.all_succeeded = report.all_succeeded && !row.failed;
        report.rows.push_back(std::move(row));
    }
    if (report.rows.empty()) throw DataError("report: no rows");
    write_report_files(report, out_dir.empty() ? default_out_dir() : fs::path(out_dir));
    std::cout << text_table(report.rows, aggregate_rows(report.rows));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"off-policy optimization for piecewise-stationary bandits"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "generate a synthetic environment and logged data");
    std::string gen_config, gen_out = "log.txt";
    std::uint64_t gen_seed = 1;
    gen->add_option("--config", gen_config, "environment config JSON");
    gen->add_option("--seed", gen_seed, "RNG seed");
    gen->add_option("--out", gen_out, "output path for the logged data")->required();

    // detect
    auto* det = app.add_subcommand("detect", "run the change-point detector on logged rewards");
    std::string det_data, det_out = "labels.jsonl";
    std::int64_t det_w = 0;
    double det_delta = 0.05;
    int det_k = 0;
    std::optional<double> det_c, det_delta_lower;
    det->add_option("--data", det_data)->required();
    det->add_option("--w", det_w, "window size (rounds)");
    det->add_option("--c", det_c, "detection threshold");
    det->add_option("--delta-lower", det_delta_lower, "lower bound on the change magnitude");
    det->add_option("--delta", det_delta, "failure probability for the parameter rule");
    det->add_option("--k", det_k, "cluster segments into at most k states (0 = off)");
    det->add_option("--out", det_out);

    // fit-hmm
    auto* fit = app.add_subcommand("fit-hmm", "fit the latent HMM by EM");
    std::string fit_data, fit_out = "hmm.json", fit_labels_out;
    int fit_L = 5, fit_iters = 100, fit_restarts = 10;
    double fit_tol = 1e-6;
    std::uint64_t fit_seed = 1;
    fit->add_option("--data", fit_data)->required();
    fit->add_option("--L", fit_L, "number of latent states");
    fit->add_option("--iters", fit_iters);
    fit->add_option("--tol", fit_tol);
    fit->add_option("--restarts", fit_restarts);
    fit->add_option("--seed", fit_seed);
    fit->add_option("--out", fit_out);
    fit->add_option("--labels-out", fit_labels_out, "also write the smoothed labels here");

    // learn
    auto* learn = app.add_subcommand("learn", "train sub-policies (or a stationary baseline)");
    std::string learn_data, learn_labels, learn_kind = "ips", learn_out = "bundle.json";
    double learn_M = 100.0, learn_tau = 0.01, learn_lr = 0.05, learn_lambda = 1.0;
    int learn_steps = 2000;
    learn->add_option("--data", learn_data)->required();
    learn->add_option("--labels", learn_labels, "latent labels (omit for a stationary policy)");
    learn->add_option("--M", learn_M, "clipping parameter");
    learn->add_option("--tau", learn_tau, "entropy temperature");
    learn->add_option("--kind", learn_kind)->check(CLI::IsMember({"ips", "dr", "poem"}));
    learn->add_option("--steps", learn_steps);
    learn->add_option("--learning-rate", learn_lr);
    learn->add_option("--var-penalty", learn_lambda, "POEM dispersion weight");
    learn->add_option("--out", learn_out);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "off-policy value estimate of a policy file");
    std::string eval_data, eval_policy, eval_labels, eval_kind = "ips";
    double eval_M = std::numeric_limits<double>::infinity();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--policy", eval_policy)->required();
    eval->add_option("--labels", eval_labels);
    eval->add_option("--M", eval_M, "clipping parameter (default: off)");
    eval->add_option("--kind", eval_kind)->check(CLI::IsMember({"ips", "dm", "dr"}));

    // deploy
    auto* dep = app.add_subcommand("deploy", "online deployment of a policy bundle");
    std::string dep_env, dep_bundle, dep_hmm, dep_switcher = "exp4s", dep_trace;
    std::int64_t dep_horizon = 0, dep_shift = 0;
    std::uint64_t dep_seed = 1;
    dep->add_option("--env", dep_env)->required();
    dep->add_option("--bundle", dep_bundle)->required();
    dep->add_option("--hmm", dep_hmm, "HMM parameters (posterior switcher)");
    dep->add_option("--switcher", dep_switcher)->check(CLI::IsMember({"exp4s", "posterior", "oracle"}));
    dep->add_option("--horizon", dep_horizon, "0 = schedule length");
    dep->add_option("--seed", dep_seed);
    dep->add_option("--latent-shift", dep_shift, "deploy on the schedule rotated by this many rounds");
    dep->add_option("--trace", dep_trace, "write the per-round trace here");

    // experiment
    auto* exp = app.add_subcommand("experiment", "run the full method comparison");
    std::string exp_config, exp_out;
    std::vector<std::uint64_t> exp_seeds;
    std::vector<int> exp_k;
    std::vector<std::string> exp_methods;
    std::int64_t exp_horizon = 0, exp_shift = 0;
    int exp_threads = 0;
    exp->add_option("--config", exp_config, "experiment config JSON");
    exp->add_option("--out", exp_out, "output directory");
    exp->add_option("--seeds", exp_seeds)->delimiter(',');
    exp->add_option("--k", exp_k)->delimiter(',');
    exp->add_option("--method", exp_methods);
    exp->add_option("--horizon", exp_horizon);
    exp->add_option("--threads", exp_threads);
    exp->add_option("--latent-shift", exp_shift);

    // report
    auto* rep = app.add_subcommand("report", "re-aggregate a per-seed rows.csv");
    std::string rep_rows, rep_out;
    rep->add_option("--rows", rep_rows)->required();
    rep->add_option("--out", rep_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(gen_config, gen_seed, gen_out);
        if (det->parsed())
            return cmd_detect(det_data, det_w, det_c, det_delta_lower, det_delta, det_k, det_out);
        if (fit->parsed())
            return cmd_fit_hmm(fit_data, fit_L, fit_iters, fit_tol, fit_restarts, fit_seed, fit_out,
                               fit_labels_out);
        if (learn->parsed())
            return cmd_learn(learn_data, learn_labels, learn_M, learn_tau, learn_kind, learn_steps,
                             learn_lr, learn_lambda, learn_out);
        if (eval->parsed()) return cmd_evaluate(eval_data, eval_policy, eval_labels, eval_M, eval_kind);
        if (dep->parsed())
            return cmd_deploy(dep_env, dep_bundle, dep_hmm, dep_switcher, dep_horizon, dep_seed,
                              dep_shift, dep_trace);
        if (exp->parsed())
            return cmd_experiment(exp_config, exp_out, exp_seeds, exp_k, exp_methods, exp_horizon,
                                  exp_threads, exp_shift);
        if (rep->parsed()) return cmd_report(rep_rows, rep_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
