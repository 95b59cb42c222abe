// Command-line front end: world generation, training, studies, bounds and demos.
// Exit codes: 0 success, 2 usage or config error, 3 runtime numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <rdro/rdro.hpp>

namespace fs = std::filesystem;
using rdro::json;

namespace {

constexpr int kUsageError = 2;
constexpr int kNumericFailure = 3;

/// A run that produced a non-finite quantity; maps to exit code 3.
struct NumericFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flag > config file > preset > built-in default. Config keys are the long
/// flag names without leading dashes.
class Layers {
public:
    explicit Layers(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "JSON file with option values (flags take precedence)");
    }

    template <class T>
    CLI::Option* option(const std::string& key, T& var, const std::string& help) {
        CLI::Option* opt = app_->add_option("--" + key, var, help);
        bind(key, opt, var);
        return opt;
    }

    CLI::Option* flag(const std::string& key, bool& var, const std::string& help) {
        CLI::Option* opt = app_->add_flag("--" + key, var, help);
        bind(key, opt, var);
        return opt;
    }

    /// Applies the config file to every option not given on the command line.
    void resolve() {
        if (!config_path_.empty()) {
            try {
                config_ = json::parse(rdro::read_text_file(config_path_));
            } catch (const json::exception& e) {
                throw std::invalid_argument("config " + config_path_ + ": " + e.what());
            }
            if (!config_.is_object()) throw std::invalid_argument("config file must hold a JSON object");
            for (const auto& [key, _] : config_.items())
                if (!appliers_.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
        }
        for (auto& [key, apply] : appliers_) apply();
    }

    bool explicitly_set(const std::string& key) const {
        return app_->count("--" + key) > 0 || config_.contains(key);
    }

private:
    template <class T>
    void bind(const std::string& key, CLI::Option* opt, T& var) {
        appliers_[key] = [this, key, opt, &var] {
            if (opt->count() == 0 && config_.contains(key)) {
                try {
                    var = config_.at(key).get<T>();
                } catch (const json::exception& e) {
                    throw std::invalid_argument("config key '" + key + "': " + e.what());
                }
            }
        };
    }

    CLI::App* app_;
    std::string config_path_;
    json config_ = json::object();
    std::map<std::string, std::function<void()>> appliers_;
};

/// Training flags shared by train, study and sweep.
struct TrainFlags {
    std::string method = "rdro";
    double alpha = 0.0;  // 0 = subcommand default
    double beta = 0.0;
    bool kl_in_grad = false;
    double lr = 1e-2;
    std::size_t batch = 64;
    std::size_t epochs = 200;
    double clip = 1.0;
    double warmup = 0.1;
    std::uint64_t seed = 0;
    bool exact = false;
    std::string schedule = "cosine";
    double init_scale = 0.0;
    std::string preset = "desk";

    void add(Layers& l, bool with_method) {
        if (with_method) l.option("method", method, "rdro | ddro-raw | ddro-stab");
        l.option("alpha", alpha, "training alpha in (0,1)");
        l.option("beta", beta, "KL weight for DDRO");
        l.flag("kl-in-grad", kl_in_grad, "include the KL term in DDRO gradients");
        l.option("lr", lr, "base learning rate");
        l.option("batch", batch, "mini-batch size");
        l.option("epochs", epochs, "training epochs");
        l.option("clip", clip, "gradient clip norm (<= 0 disables)");
        l.option("warmup", warmup, "warmup fraction of total steps");
        l.option("seed", seed, "random seed");
        l.flag("exact", exact, "train on exact expectations instead of samples");
        l.option("schedule", schedule, "cosine | constant");
        l.option("init-scale", init_scale, "std of the logit noise added at initialization");
        l.option("preset", preset, "desk | large-model");
    }

    rdro::TrainConfig build(const Layers& l) const {
        rdro::TrainConfig c;
        if (preset == "large-model") {
            const auto p = rdro::TrainConfig::large_model_preset();
            c.learning_rate = p.learning_rate;
            c.batch_size = p.batch_size;
            c.epochs = p.epochs;
        } else if (preset != "desk") {
            throw std::invalid_argument("unknown preset '" + preset + "'");
        }
        c.method = rdro::parse_method(method);
        c.schedule = rdro::parse_schedule(schedule);
        c.beta = beta;
        c.kl_in_grad = kl_in_grad;
        if (l.explicitly_set("lr") || preset == "desk") c.learning_rate = lr;
        if (l.explicitly_set("batch") || preset == "desk") c.batch_size = batch;
        if (l.explicitly_set("epochs") || preset == "desk") c.epochs = epochs;
        c.clip_norm = clip;
        c.warmup_ratio = warmup;
        c.seed = seed;
        c.exact_mode = exact;
        c.init_scale = init_scale;
        return c;
    }
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// ---------------------------------------------------------------- gen

struct GenArgs {
    std::size_t prompts = 4;
    std::size_t responses = 8;
    double alpha = 0.5;
    double overlap = 1.0;
    double dirichlet = 1.0;
    std::uint64_t seed = 0;
    std::string out;
};

void run_gen(const GenArgs& a) {
    if (a.prompts == 0 || a.responses == 0) throw std::invalid_argument("--prompts and --responses must be >= 1");
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw std::invalid_argument("--alpha must lie in (0, 1)");
    const rdro::WorldSpec w = rdro::make_disjoint_world(a.prompts, a.responses, a.overlap, a.alpha, a.seed,
                                                         a.dirichlet);
    rdro::save_world(a.out, w);
    std::cout << json{{"out", a.out},
                      {"fingerprint", rdro::world_fingerprint(w)},
                      {"max_support_overlap", rdro::max_support_overlap(w)}}
                     .dump()
              << "\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string world;
    std::string data;
    std::size_t n = 100;
    std::size_t m = 100;
    std::string out_dir;
    TrainFlags flags;
};

void run_train(const TrainArgs& a, const Layers& layers) {
    const rdro::WorldSpec world = rdro::load_world(a.world);
    rdro::TrainConfig cfg = a.flags.build(layers);

    rdro::PreferenceDataset data;
    std::string data_source = "none";
    if (!a.data.empty()) {
        try {
            data = rdro::dataset_from_json(json::parse(rdro::read_text_file(a.data)));
        } catch (const json::exception& e) {
            throw std::invalid_argument(a.data + ": " + e.what());
        }
        data_source = a.data;
    } else if (!cfg.exact_mode) {
        data = rdro::sample_dataset(world, a.n, a.m, rdro::derive_seed(cfg.seed, 0xda7a));
        data_source = "sampled";
    }
    if (!cfg.exact_mode && data.empty()) throw std::invalid_argument("training needs --n + --m >= 1 or --data");

    if (layers.explicitly_set("alpha"))
        cfg.alpha = a.flags.alpha;
    else
        cfg.alpha = cfg.exact_mode ? world.alpha : data.preferred_fraction();
    cfg.validate();

    const auto result = rdro::train(world, data, cfg);
    ensure_dir(a.out_dir);
    rdro::write_text_file(join(a.out_dir, "run_log.csv"), rdro::run_log_csv(result.log));
    const std::string ckpt = join(a.out_dir, "checkpoint.json");
    rdro::write_text_file(ckpt, rdro::checkpoint_to_json({result.policy, result.log.world_fingerprint}).dump(2) + "\n");
    if (!data.empty()) rdro::write_text_file(join(a.out_dir, "dataset.json"), rdro::dataset_to_json(data).dump() + "\n");

    const auto ref = rdro::ReferenceLogProbs::from_probabilities(rdro::reference_policy(world));
    json summary{{"method", rdro::method_name(cfg.method)},
                 {"alpha", cfg.alpha},
                 {"steps", result.log.steps.size()},
                 {"final_loss", result.log.steps.empty() ? 0.0 : result.log.steps.back().loss},
                 {"estimation_error", rdro::estimation_error(result.policy, world)},
                 {"total_clamp_events", result.log.total_clamp_events()},
                 {"max_preclip_norm", result.log.max_preclip_norm()},
                 {"max_r_theta", rdro::max_r_theta(result.policy, ref)}};
    if (!data.empty()) summary["final_margin"] = rdro::dataset_margin(result.policy, ref, data);
    if (result.log.failure) summary["failure"] = {{"step", result.log.failure->step}, {"message", result.log.failure->message}};

    json sidecar = rdro::run_log_sidecar(result.log);
    sidecar["world"] = a.world;
    sidecar["data"] = data_source;
    sidecar["n"] = data.n_preferred();
    sidecar["m"] = data.m_nonpreferred();
    sidecar["checkpoint"] = ckpt;
    sidecar["summary"] = summary;
    rdro::write_text_file(join(a.out_dir, "run.json"), sidecar.dump(2) + "\n");
    std::cout << summary.dump() << "\n";
    if (result.log.failure) throw NumericFailure("training aborted: " + result.log.failure->message);
}

// ---------------------------------------------------------------- study

struct StudyArgs {
    std::string world;
    std::vector<std::size_t> sizes{64, 128, 256, 512, 1024, 2048, 4096};
    std::size_t seeds = 10;
    std::string out_dir;
    TrainFlags flags;
};

void run_study(const StudyArgs& a, const Layers& layers) {
    if (a.sizes.size() < 4) throw std::invalid_argument("--sizes needs at least 4 entries");
    if (a.seeds < 5) throw std::invalid_argument("--seeds must be >= 5");
    const rdro::WorldSpec world = rdro::load_world(a.world);
    rdro::TrainConfig cfg = a.flags.build(layers);
    cfg.alpha = layers.explicitly_set("alpha") ? a.flags.alpha : world.alpha;
    cfg.validate();
    const auto study = rdro::convergence_study(world, a.sizes, a.seeds, cfg);
    ensure_dir(a.out_dir);
    rdro::write_text_file(join(a.out_dir, "study.csv"), rdro::rate_study_csv(study));
    json j = rdro::rate_study_to_json(study);
    j["config"] = rdro::config_to_json(cfg);
    j["world"] = a.world;
    j["world_fingerprint"] = rdro::world_fingerprint(world);
    rdro::write_text_file(join(a.out_dir, "study.json"), j.dump(2) + "\n");
    std::cout << json{{"fitted_slope", study.fitted_slope}, {"fit_r2", study.fit_r2}}.dump() << "\n";
    for (double e : study.mean_error)
        if (!std::isfinite(e)) throw NumericFailure("non-finite estimation error in study");
}

// ---------------------------------------------------------------- bound

struct BoundArgs {
    std::string world;
    std::size_t n = 1000;
    std::size_t m = 1000;
    std::size_t trials = 2000;
    std::uint64_t seed = 0;
    std::string out;
};

void run_bound(const BoundArgs& a) {
    const rdro::WorldSpec world = rdro::load_world(a.world);
    const auto r = rdro::rdro_bound(world, rdro::rdro_default_range(world), a.n, a.m, a.trials, a.seed);
    const auto d = rdro::ddro_bound(world, std::nullopt, a.n, a.m, a.trials, a.seed);
    const auto cond = rdro::alpha_condition(std::min(1.0, r.m_plus));
    json j{{"world", a.world},
           {"world_fingerprint", rdro::world_fingerprint(world)},
           {"alpha", world.alpha},
           {"seed", a.seed},
           {"trials", a.trials},
           {"rdro", rdro::bound_report_to_json(r)},
           {"ddro", rdro::bound_report_to_json(d)},
           {"alpha_condition",
            {{"m_plus", r.m_plus}, {"threshold_exact", cond.threshold_exact}, {"threshold_taylor", cond.threshold_taylor}}},
           {"constants",
            {{"mu", r.mu}, {"l1", r.l1}, {"l2", r.l2}, {"c_lip", r.c_lip}}},
           {"rdro_coefficient_smaller", d.diverged || r.coefficient < d.coefficient},
           {"rademacher_weighting_holds", r.rademacher_weighting_holds(world.alpha)}};
    if (!d.diverged) {
        j["constants"]["ddro_mu"] = d.mu;
        j["constants"]["ddro_l1"] = d.l1;
        j["constants"]["ddro_l2"] = d.l2;
        j["constants"]["c_lip_prime"] = d.c_lip;
    } else {
        j["constants"]["c_lip_prime"] = "diverged";
    }
    if (!a.out.empty()) rdro::write_text_file(a.out, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- btdemo

struct BtArgs {
    double t = 0.7;
    std::size_t steps = 10000;
    double lr = 0.5;
    std::string out;
};

void run_btdemo(const BtArgs& a) {
    if (!(a.t > 0.0 && a.t < 1.0)) throw std::invalid_argument("--t must lie in (0, 1)");
    const auto f = rdro::bt_cyclic_fit(a.t, a.steps, a.lr);
    json j{{"t", a.t},
           {"steps", a.steps},
           {"lr", a.lr},
           {"rewards", {{"a", f.rewards[0]}, {"b", f.rewards[1]}, {"c", f.rewards[2]}}},
           {"pairwise_probs", {{"a_over_b", f.pairwise_probs[0]}, {"b_over_c", f.pairwise_probs[1]},
                               {"c_over_a", f.pairwise_probs[2]}}}};
    if (!a.out.empty()) rdro::write_text_file(a.out, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    for (double p : f.pairwise_probs)
        if (!std::isfinite(p)) throw NumericFailure("non-finite probability in BT fit");
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
    std::string world;
    std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::size_t n = 500;
    std::size_t m = 500;
    std::size_t seeds = 3;
    std::string out;
    TrainFlags flags;
};

void run_sweep(const SweepArgs& a, const Layers& layers) {
    const rdro::WorldSpec world = rdro::load_world(a.world);
    rdro::TrainConfig cfg = a.flags.build(layers);
    cfg.validate();
    const auto r = rdro::alpha_sweep(world, a.alphas, a.n, a.m, a.seeds, cfg);
    const std::string csv = rdro::sweep_csv(r);
    rdro::write_text_file(a.out, csv);
    json side{{"config", rdro::config_to_json(cfg)},
              {"world", a.world},
              {"world_fingerprint", rdro::world_fingerprint(world)},
              {"alphas", a.alphas},
              {"n", a.n},
              {"m", a.m},
              {"seeds", a.seeds}};
    rdro::write_text_file(a.out + ".json", side.dump(2) + "\n");
    std::cout << csv;
    for (const auto& run : r.runs)
        if (!run.finite) throw NumericFailure("a sweep run hit a non-finite loss");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Relative density ratio optimization lab"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate a world file");
    Layers gen_layers(gen_cmd);
    gen_layers.option("prompts", gen.prompts, "number of prompts");
    gen_layers.option("responses", gen.responses, "number of responses");
    gen_layers.option("alpha", gen.alpha, "mixture weight in (0,1)");
    gen_layers.option("overlap", gen.overlap, "support overlap fraction in [0,1]");
    gen_layers.option("dirichlet", gen.dirichlet, "Dirichlet concentration");
    gen_layers.option("seed", gen.seed, "random seed");
    gen_layers.option("out", gen.out, "output world file")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train a policy and log metrics");
    Layers train_layers(train_cmd);
    train_layers.option("world", tr.world, "world file")->required();
    train_layers.option("data", tr.data, "dataset file (default: sample --n/--m from the world)");
    train_layers.option("n", tr.n, "preferred samples to draw");
    train_layers.option("m", tr.m, "non-preferred samples to draw");
    train_layers.option("out-dir", tr.out_dir, "output directory")->required();
    tr.flags.add(train_layers, true);

    StudyArgs st;
    st.flags.lr = 0.05;
    st.flags.epochs = 500;
    st.flags.batch = std::size_t{1} << 20;
    auto* study_cmd = app.add_subcommand("study", "convergence-rate study");
    Layers study_layers(study_cmd);
    study_layers.option("world", st.world, "world file")->required();
    study_layers.option("sizes", st.sizes, "comma-separated N = M values")->delimiter(',');
    study_layers.option("seeds", st.seeds, "seeds per size");
    study_layers.option("out-dir", st.out_dir, "output directory")->required();
    st.flags.add(study_layers, false);

    BoundArgs bd;
    auto* bound_cmd = app.add_subcommand("bound", "assemble the RDRO and DDRO error bounds");
    Layers bound_layers(bound_cmd);
    bound_layers.option("world", bd.world, "world file")->required();
    bound_layers.option("n", bd.n, "preferred sample size");
    bound_layers.option("m", bd.m, "non-preferred sample size");
    bound_layers.option("trials", bd.trials, "Monte-Carlo trials for the Rademacher estimates");
    bound_layers.option("seed", bd.seed, "random seed");
    bound_layers.option("out", bd.out, "also write the report here");

    BtArgs bt;
    auto* bt_cmd = app.add_subcommand("btdemo", "Bradley-Terry fit to cyclic preferences");
    Layers bt_layers(bt_cmd);
    bt_layers.option("t", bt.t, "target probability in (0,1)");
    bt_layers.option("steps", bt.steps, "gradient steps");
    bt_layers.option("lr", bt.lr, "step size");
    bt_layers.option("out", bt.out, "also write the result here");

    SweepArgs sw;
    auto* sweep_cmd = app.add_subcommand("sweep", "train RDRO across an alpha grid");
    Layers sweep_layers(sweep_cmd);
    sweep_layers.option("world", sw.world, "world file")->required();
    sweep_layers.option("alphas", sw.alphas, "comma-separated alpha grid")->delimiter(',');
    sweep_layers.option("n", sw.n, "preferred samples per seed");
    sweep_layers.option("m", sw.m, "non-preferred samples per seed");
    sweep_layers.option("seeds", sw.seeds, "datasets (and runs) per alpha");
    sweep_layers.option("out", sw.out, "output CSV")->required();
    sw.flags.add(sweep_layers, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*gen_cmd) {
            gen_layers.resolve();
            run_gen(gen);
        } else if (*train_cmd) {
            train_layers.resolve();
            run_train(tr, train_layers);
        } else if (*study_cmd) {
            study_layers.resolve();
            run_study(st, study_layers);
        } else if (*bound_cmd) {
            bound_layers.resolve();
            run_bound(bd);
        } else if (*bt_cmd) {
            bt_layers.resolve();
            run_btdemo(bt);
        } else if (*sweep_cmd) {
            sweep_layers.resolve();
            run_sweep(sw, sweep_layers);
        }
    } catch (const NumericFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    }
    return 0;
}
