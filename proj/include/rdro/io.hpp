#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "optim.hpp"
#include "theory.hpp"
#include "world_io.hpp"

namespace rdro {

inline const char* method_name(Method m) {
    switch (m) {
        case Method::RDRO: return "rdro";
        case Method::DDRO_Raw: return "ddro-raw";
        case Method::DDRO_Stabilized: return "ddro-stab";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "rdro") return Method::RDRO;
    if (s == "ddro-raw") return Method::DDRO_Raw;
    if (s == "ddro-stab") return Method::DDRO_Stabilized;
    throw std::invalid_argument("unknown method '" + s + "' (expected rdro, ddro-raw or ddro-stab)");
}

inline const char* schedule_name(Schedule s) { return s == Schedule::Cosine ? "cosine" : "constant"; }

inline Schedule parse_schedule(const std::string& s) {
    if (s == "cosine") return Schedule::Cosine;
    if (s == "constant") return Schedule::Constant;
    throw std::invalid_argument("unknown schedule '" + s + "'");
}

inline json config_to_json(const TrainConfig& c) {
    return json{{"method", method_name(c.method)},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"kl_in_grad", c.kl_in_grad},
                {"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"warmup_ratio", c.warmup_ratio},
                {"clip_norm", c.clip_norm},
                {"seed", c.seed},
                {"exact_mode", c.exact_mode},
                {"schedule", schedule_name(c.schedule)},
                {"adam", {{"beta1", c.adam.beta1},
                          {"beta2", c.adam.beta2},
                          {"epsilon", c.adam.epsilon},
                          {"weight_decay", c.adam.weight_decay}}},
                {"init_scale", c.init_scale},
                {"frozen_prompts", c.frozen_prompts}};
}

/// Keys absent from `j` keep the values already in `base`.
inline TrainConfig config_from_json(const json& j, TrainConfig base = {}) {
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("method")) base.method = parse_method(j.at("method").get<std::string>());
    if (j.contains("schedule")) base.schedule = parse_schedule(j.at("schedule").get<std::string>());
    take("alpha", base.alpha);
    take("beta", base.beta);
    take("kl_in_grad", base.kl_in_grad);
    take("learning_rate", base.learning_rate);
    take("batch_size", base.batch_size);
    take("epochs", base.epochs);
    take("warmup_ratio", base.warmup_ratio);
    take("clip_norm", base.clip_norm);
    take("seed", base.seed);
    take("exact_mode", base.exact_mode);
    take("init_scale", base.init_scale);
    take("frozen_prompts", base.frozen_prompts);
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        if (a.contains("beta1")) base.adam.beta1 = a.at("beta1").get<double>();
        if (a.contains("beta2")) base.adam.beta2 = a.at("beta2").get<double>();
        if (a.contains("epsilon")) base.adam.epsilon = a.at("epsilon").get<double>();
        if (a.contains("weight_decay")) base.adam.weight_decay = a.at("weight_decay").get<double>();
    }
    return base;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
    return v;
}

inline constexpr const char* kRunLogHeader =
    "step,lr,loss,grad_norm_preclip,grad_norm_postclip,pref_logratio,nonpref_logratio,margin,clamp_events";

inline std::string run_log_csv(const RunLog& log) {
    std::ostringstream out;
    out << kRunLogHeader << '\n';
    for (const auto& s : log.steps) {
        out << s.step << ',' << format_double(s.lr) << ',' << format_double(s.loss) << ','
            << format_double(s.grad_norm_preclip) << ',' << format_double(s.grad_norm_postclip) << ','
            << format_double(s.mean_preferred_logratio) << ',' << format_double(s.mean_nonpreferred_logratio) << ','
            << format_double(s.margin) << ',' << s.clamp_events << '\n';
    }
    return out.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::vector<StepMetrics> parse_run_log_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kRunLogHeader) throw std::invalid_argument("run log header mismatch");
    std::vector<StepMetrics> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = split_csv_line(line);
        if (c.size() != 9) throw std::invalid_argument("run log row has " + std::to_string(c.size()) + " cells");
        StepMetrics s;
        s.step = std::stoull(c[0]);
        s.lr = parse_double(c[1]);
        s.loss = parse_double(c[2]);
        s.grad_norm_preclip = parse_double(c[3]);
        s.grad_norm_postclip = parse_double(c[4]);
        s.mean_preferred_logratio = parse_double(c[5]);
        s.mean_nonpreferred_logratio = parse_double(c[6]);
        s.margin = parse_double(c[7]);
        s.clamp_events = std::stoull(c[8]);
        rows.push_back(s);
    }
    return rows;
}

inline json run_log_sidecar(const RunLog& log) {
    json j{{"config", config_to_json(log.config)},
           {"world_fingerprint", log.world_fingerprint},
           {"steps", log.steps.size()},
           {"total_clamp_events", log.total_clamp_events()},
           {"max_preclip_norm", log.max_preclip_norm()}};
    if (log.failure) j["failure"] = {{"step", log.failure->step}, {"message", log.failure->message}};
    return j;
}

inline json bound_report_to_json(const BoundReport& r) {
    json j{{"method", r.method == BoundMethod::RDRO ? "rdro" : "ddro"}, {"n", r.n}, {"m", r.m}, {"m_plus", r.m_plus}};
    if (r.diverged) {
        j["diverged"] = true;
        j["bound_value"] = "diverged";
        j["sup_g_star"] = "diverged";
        return j;
    }
    j["diverged"] = false;
    j["inf_risk"] = r.inf_risk;
    j["mu"] = r.mu;
    j["l1"] = r.l1;
    j["l2"] = r.l2;
    j["c_lip"] = r.c_lip;
    j["rademacher_n"] = r.rademacher_n;
    j["rademacher_m"] = r.rademacher_m;
    j["rademacher_n_se"] = r.rademacher_n_se;
    j["rademacher_m_se"] = r.rademacher_m_se;
    j["coefficient"] = r.coefficient;
    j["bound_value"] = r.bound_value;
    if (r.sup_g_star) j["sup_g_star"] = *r.sup_g_star;
    return j;
}

inline BoundReport bound_report_from_json(const json& j) {
    BoundReport r;
    r.method = j.at("method").get<std::string>() == "rdro" ? BoundMethod::RDRO : BoundMethod::DDRO;
    r.n = j.at("n").get<std::size_t>();
    r.m = j.at("m").get<std::size_t>();
    r.m_plus = j.at("m_plus").get<double>();
    r.diverged = j.at("diverged").get<bool>();
    if (r.diverged) {
        r.bound_value = r.coefficient = std::numeric_limits<double>::infinity();
        return r;
    }
    r.inf_risk = j.at("inf_risk").get<double>();
    r.mu = j.at("mu").get<double>();
    r.l1 = j.at("l1").get<double>();
    r.l2 = j.at("l2").get<double>();
    r.c_lip = j.at("c_lip").get<double>();
    r.rademacher_n = j.at("rademacher_n").get<double>();
    r.rademacher_m = j.at("rademacher_m").get<double>();
    r.rademacher_n_se = j.at("rademacher_n_se").get<double>();
    r.rademacher_m_se = j.at("rademacher_m_se").get<double>();
    r.coefficient = j.at("coefficient").get<double>();
    r.bound_value = j.at("bound_value").get<double>();
    if (j.contains("sup_g_star")) r.sup_g_star = j.at("sup_g_star").get<double>();
    return r;
}

inline json rate_study_to_json(const RateStudy& s) {
    return json{{"sizes", s.sizes},
                {"mean_error", s.mean_error},
                {"std_error", s.std_error},
                {"seeds_per_size", s.seeds_per_size},
                {"fitted_slope", s.fitted_slope},
                {"fit_r2", s.fit_r2}};
}

inline RateStudy rate_study_from_json(const json& j) {
    RateStudy s;
    s.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    s.mean_error = j.at("mean_error").get<std::vector<double>>();
    s.std_error = j.at("std_error").get<std::vector<double>>();
    s.seeds_per_size = j.at("seeds_per_size").get<std::size_t>();
    s.fitted_slope = j.at("fitted_slope").get<double>();
    s.fit_r2 = j.at("fit_r2").get<double>();
    return s;
}

inline std::string rate_study_csv(const RateStudy& s) {
    std::ostringstream out;
    out << "size,mean_error,std_error\n";
    for (std::size_t i = 0; i < s.sizes.size(); ++i)
        out << s.sizes[i] << ',' << format_double(s.mean_error[i]) << ',' << format_double(s.std_error[i]) << '\n';
    return out.str();
}

inline std::string sweep_csv(const SweepResult& r) {
    std::ostringstream out;
    out << "alpha,final_estimation_error,final_margin,max_r_theta,final_kl\n";
    for (const auto& row : r.rows)
        out << format_double(row.alpha) << ',' << format_double(row.final_estimation_error) << ','
            << format_double(row.final_margin) << ',' << format_double(row.max_r_theta) << ','
            << format_double(row.final_kl) << '\n';
    return out.str();
}

/// Parses a header + numeric rows CSV into columns keyed by header name order.
struct NumericCsv {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline NumericCsv parse_numeric_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    NumericCsv csv;
    if (!std::getline(in, line)) throw std::invalid_argument("empty csv");
    csv.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != csv.header.size()) throw std::invalid_argument("csv row width differs from header");
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_double(c));
        csv.rows.push_back(std::move(row));
    }
    return csv;
}

}  // namespace rdro
