#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "numeric.hpp"
#include "policy.hpp"
#include "world.hpp"

namespace rdro {

using json = nlohmann::json;

inline json world_to_json(const WorldSpec& w) {
    return json{{"num_prompts", w.num_prompts},
                {"num_responses", w.num_responses},
                {"alpha", w.alpha},
                {"prompt_dist", w.prompt_dist},
                {"preferred_cond", w.preferred_cond.to_rows()},
                {"nonpreferred_cond", w.nonpreferred_cond.to_rows()}};
}

inline WorldSpec world_from_json(const json& j) {
    WorldSpec w;
    w.num_prompts = j.at("num_prompts").get<std::size_t>();
    w.num_responses = j.at("num_responses").get<std::size_t>();
    w.alpha = j.at("alpha").get<double>();
    w.prompt_dist = j.at("prompt_dist").get<std::vector<double>>();
    w.preferred_cond = Table::from_rows(j.at("preferred_cond").get<std::vector<std::vector<double>>>());
    w.nonpreferred_cond = Table::from_rows(j.at("nonpreferred_cond").get<std::vector<std::vector<double>>>());
    w.validate();
    return w;
}

/// Canonical file text of a world; fingerprints hash exactly these bytes.
inline std::string world_file_text(const WorldSpec& w) { return world_to_json(w).dump(2) + "\n"; }

inline std::string fingerprint_bytes(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

inline std::string world_fingerprint(const WorldSpec& w) { return fingerprint_bytes(world_file_text(w)); }

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path);
}

inline WorldSpec load_world(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        return world_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

inline void save_world(const std::string& path, const WorldSpec& w) { write_text_file(path, world_file_text(w)); }

inline const char* label_name(Label l) { return l == Label::Preferred ? "preferred" : "nonpreferred"; }

inline Label parse_label(const std::string& s) {
    if (s == "preferred") return Label::Preferred;
    if (s == "nonpreferred") return Label::NonPreferred;
    throw std::invalid_argument("unknown label '" + s + "'");
}

inline json dataset_to_json(const PreferenceDataset& d) {
    json arr = json::array();
    for (const auto& s : d.samples())
        arr.push_back({{"prompt", s.prompt}, {"response", s.response}, {"label", label_name(s.label)}});
    return arr;
}

inline PreferenceDataset dataset_from_json(const json& j) {
    if (!j.is_array()) throw std::invalid_argument("dataset file must hold an array of records");
    PreferenceDataset d;
    for (const auto& r : j)
        d.add({r.at("prompt").get<std::size_t>(), r.at("response").get<std::size_t>(),
               parse_label(r.at("label").get<std::string>())});
    return d;
}

struct Checkpoint {
    PolicyLogits policy;
    std::string world_fingerprint;
};

inline json checkpoint_to_json(const Checkpoint& c) {
    return json{{"logits", c.policy.logits().to_rows()}, {"world_fingerprint", c.world_fingerprint}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
    return {PolicyLogits(Table::from_rows(j.at("logits").get<std::vector<std::vector<double>>>())),
            j.at("world_fingerprint").get<std::string>()};
}

}  // namespace rdro
