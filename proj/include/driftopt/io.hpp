#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftopt/core.hpp"
#include "driftopt/deploy.hpp"
#include "driftopt/envgen.hpp"
#include "driftopt/hmm.hpp"
#include "driftopt/learner.hpp"

// Exchange formats. Actions, latent states, round indices, and context ids
// are all 1-based on disk and 0-based in memory.
namespace driftopt::io {

using nlohmann::json;

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// ---- logged data: one record per line, "t,context,action,reward,propensity",
// with a dense context written as a bracketed space-separated vector ----

inline std::string context_to_string(const Context& x) {
    if (x.dense.empty()) return std::to_string(x.id + 1);
    std::string out = "[";
    for (std::size_t i = 0; i < x.dense.size(); ++i) {
        if (i) out += ' ';
        out += format_double(x.dense[i]);
    }
    out += ']';
    return out;
}

inline Context context_from_string(const std::string& s) {
    if (s.empty()) throw DataError("logged data: empty context field");
    if (s.front() == '[') {
        if (s.back() != ']') throw DataError("logged data: unterminated context vector");
        std::istringstream in(s.substr(1, s.size() - 2));
        std::vector<double> v;
        double x;
        while (in >> x) v.push_back(x);
        return Context::vec(std::move(v));
    }
    return Context::tabular(std::stoi(s) - 1);
}

inline void write_logged_data(std::ostream& os, const LoggedData& data) {
    for (const auto& rec : data) {
        os << (rec.t + 1) << ',' << context_to_string(rec.context) << ',' << (rec.action + 1) << ','
           << format_double(rec.reward) << ',' << format_double(rec.propensity) << '\n';
    }
}

inline LoggedData read_logged_data(std::istream& is) {
    LoggedData data;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        bool in_brackets = false;
        for (char c : line) {
            if (c == '[') in_brackets = true;
            if (c == ']') in_brackets = false;
            if (c == ',' && !in_brackets) {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        fields.push_back(cur);
        if (fields.size() != 5) throw DataError("logged data: expected 5 fields per line");
        LoggedInteraction rec;
        rec.t = std::stoll(fields[0]) - 1;
        rec.context = context_from_string(fields[1]);
        rec.action = std::stoi(fields[2]) - 1;
        rec.reward = std::stod(fields[3]);
        rec.propensity = std::stod(fields[4]);
        if (!(rec.propensity > 0.0)) throw DataError("logged data: non-positive propensity");
        data.push_back(std::move(rec));
    }
    return data;
}

// ---- feature maps and policies ----

inline json to_json(const FeatureMap& map) {
    json j;
    j["num_actions"] = map.num_actions();
    if (map.mode() == FeatureMode::TabularIndicator) {
        j["mode"] = "tabular-indicator";
        j["num_contexts"] = map.num_contexts();
    } else {
        j["mode"] = "dense";
        j["context_dim"] = map.context_dim();
    }
    return j;
}

inline FeatureMap feature_map_from_json(const json& j) {
    const std::string mode = j.at("mode");
    if (mode == "tabular-indicator")
        return FeatureMap::tabular(j.at("num_contexts"), j.at("num_actions"));
    if (mode == "dense") return FeatureMap::dense(j.at("context_dim"), j.at("num_actions"));
    throw DataError("feature map: unknown mode " + mode);
}

inline json to_json(const SoftmaxPolicy& policy) {
    return json{{"feature_map", to_json(policy.feature_map())}, {"theta", policy.theta()}};
}

inline SoftmaxPolicy policy_from_json(const json& j) {
    return SoftmaxPolicy(feature_map_from_json(j.at("feature_map")),
                         j.at("theta").get<std::vector<double>>());
}

inline json to_json(const PolicyBundle& bundle) {
    json policies = json::array();
    for (const auto& p : bundle.sub_policies) policies.push_back(to_json(p));
    return json{{"num_states", bundle.num_states()}, {"policies", policies}};
}

inline PolicyBundle bundle_from_json(const json& j) {
    PolicyBundle bundle;
    for (const auto& p : j.at("policies")) bundle.sub_policies.push_back(policy_from_json(p));
    bundle.objective_curves.assign(bundle.sub_policies.size(), {});
    if (bundle.sub_policies.empty()) throw DataError("policy bundle: no policies");
    return bundle;
}

// A policy file may hold either a single policy or a bundle.
inline PolicyBundle bundle_from_policy_json(const json& j) {
    if (j.contains("policies")) return bundle_from_json(j);
    PolicyBundle bundle;
    bundle.sub_policies.push_back(policy_from_json(j));
    bundle.objective_curves.assign(1, {});
    return bundle;
}

// ---- latent labels: header line with the state count, then one
// {"t": .., "z": ..} object per round ----

inline void write_labels(std::ostream& os, const LatentSequence& labels) {
    os << json{{"num_states", labels.num_states()}, {"horizon", labels.size()}}.dump() << '\n';
    for (std::int64_t t = 0; t < labels.size(); ++t)
        os << json{{"t", t + 1}, {"z", labels[t] + 1}}.dump() << '\n';
}

inline LatentSequence read_labels(std::istream& is) {
    std::string line;
    std::vector<int> labels;
    int num_states = 0;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (first && j.contains("num_states")) {
            num_states = j.at("num_states");
            first = false;
            continue;
        }
        first = false;
        labels.push_back(j.at("z").get<int>() - 1);
    }
    if (labels.empty()) throw DataError("labels: empty file");
    int max_label = 0;
    for (int z : labels) max_label = std::max(max_label, z);
    return LatentSequence(std::move(labels), std::max(num_states, max_label + 1));
}

// ---- HMM parameters ----

inline json to_json(const HmmParams& params) {
    json j;
    j["feature_map"] = to_json(params.map);
    j["p0"] = params.p0;
    const int L = params.num_states();
    json rows = json::array();
    for (int z = 0; z < L; ++z)
        rows.push_back(std::vector<double>(params.transition.begin() + static_cast<std::size_t>(z) * L,
                                           params.transition.begin() + static_cast<std::size_t>(z + 1) * L));
    j["transition"] = rows;
    j["beta"] = params.beta;
    j["sigma"] = params.sigma;
    if (!params.sigma_per_state.empty()) j["sigma_per_state"] = params.sigma_per_state;
    return j;
}

inline HmmParams hmm_from_json(const json& j) {
    HmmParams p;
    p.map = feature_map_from_json(j.at("feature_map"));
    p.p0 = j.at("p0").get<std::vector<double>>();
    for (const auto& row : j.at("transition")) {
        const auto r = row.get<std::vector<double>>();
        p.transition.insert(p.transition.end(), r.begin(), r.end());
    }
    p.beta = j.at("beta").get<std::vector<std::vector<double>>>();
    p.sigma = j.at("sigma");
    if (j.contains("sigma_per_state"))
        p.sigma_per_state = j.at("sigma_per_state").get<std::vector<double>>();
    p.validate();
    return p;
}

// ---- environment descriptor (schedule stored as 1-based inclusive segments) ----

inline json to_json(const EnvSpec& env) {
    json j;
    j["num_actions"] = env.num_actions;
    j["num_states"] = env.num_states;
    j["noise_sigma"] = env.noise_sigma;
    json mu = json::array();
    for (int a = 0; a < env.num_actions; ++a) {
        std::vector<double> row(env.num_states);
        for (int z = 0; z < env.num_states; ++z) row[z] = env.mu(a, z);
        mu.push_back(row);
    }
    j["mean_reward"] = mu;
    json segs = json::array();
    for (const auto& s : env.schedule.segments())
        segs.push_back(std::vector<std::int64_t>{s.begin + 1, s.end, s.label + 1});
    j["schedule_segments"] = segs;
    j["logging_policy"] = to_json(env.logging_policy);
    return j;
}

inline EnvSpec env_from_json(const json& j) {
    const int K = j.at("num_actions");
    const int L = j.at("num_states");
    std::vector<double> mu(static_cast<std::size_t>(K) * L);
    const auto rows = j.at("mean_reward");
    for (int a = 0; a < K; ++a)
        for (int z = 0; z < L; ++z) mu[static_cast<std::size_t>(a) * L + z] = rows.at(a).at(z);
    std::vector<Segment> segments;
    for (const auto& s : j.at("schedule_segments"))
        segments.push_back(Segment{s.at(0).get<std::int64_t>() - 1, s.at(1).get<std::int64_t>(),
                                   s.at(2).get<int>() - 1});
    return EnvSpec{K, L, j.at("noise_sigma"),     std::move(mu),
                   LatentSequence::from_segments(segments, L),
                   policy_from_json(j.at("logging_policy"))};
}

// ---- deployment trace: line-oriented records ----

inline void write_trace(std::ostream& os, const DeploymentTrace& trace) {
    os << "t,context,action,reward,expected_reward,mixture_state\n";
    for (const auto& row : trace.rows) {
        os << (row.t + 1) << ',' << context_to_string(row.context) << ',' << (row.action + 1) << ','
           << format_double(row.reward) << ',' << format_double(row.expected_reward) << ",[";
        for (std::size_t i = 0; i < row.mixture_state.size(); ++i) {
            if (i) os << ' ';
            os << format_double(row.mixture_state[i]);
        }
        os << "]\n";
    }
}

// ---- small file helpers ----

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path.string() + " for writing");
    os << contents;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

inline json read_json_file(const std::filesystem::path& path) { return json::parse(read_file(path)); }

}  // namespace driftopt::io
