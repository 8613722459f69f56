// Batch front end: train, eval, ablate, transfer.
//
// Log level comes from SPDLOG_LEVEL (e.g. SPDLOG_LEVEL=debug); default info.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <locale>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "ma2rl/training/trainer.hpp"

#ifndef MA2RL_VERSION
#define MA2RL_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace ma2rl;

namespace {

struct Options {
    std::string config;
    std::string checkpoint;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "runs";
    int episodes = 100;
    std::vector<std::string> overrides;
    std::vector<std::uint64_t> seeds;
};

/// Locale-independent number text (dot decimal separator).
std::string num(double x) {
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s << std::setprecision(10) << x;
    return s.str();
}

json load_config_doc(const Options& o) {
    json doc = read_json_file(o.config);
    for (const auto& ov : o.overrides) apply_override(doc, ov);
    if (o.seed) apply_override(doc, "train.seed=" + std::to_string(*o.seed));
    return doc;
}

std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

fs::path make_run_dir(const std::string& out_dir, const std::string& stem, std::uint64_t seed) {
    fs::path base = fs::path(out_dir) / (stem + timestamp() + "-seed" + std::to_string(seed));
    fs::path dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
    fs::create_directories(dir / "checkpoints");
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

/// Trains one configuration into its own self-describing run directory.
/// Returns the learner and the metrics.
struct RunResult {
    fs::path dir;
    std::vector<training::MetricsRecord> metrics;
    std::unique_ptr<training::Learner> learner;
};

RunResult run_training(const ExperimentConfig& cfg, const fs::path& dir, const training::Checkpoint* warm_start) {
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
    write_text(dir / "version.txt", std::string("ma2rl ") + MA2RL_VERSION + "\nseed " + std::to_string(cfg.train.seed) + "\n");
    RunResult r;
    r.dir = dir;
    r.learner = std::make_unique<training::Learner>(cfg.model, cfg.train, cfg.train.seed);
    if (warm_start) {
        training::check_compatible(warm_start->config.model, cfg.model);
        training::load_parameters(r.learner->store, warm_start->doc);
        training::load_value_norm(r.learner->value_norm, warm_start->doc);
        spdlog::info("warm start from checkpoint ({} entries)", r.learner->store.size());
    }
    std::ofstream metrics(dir / "metrics.jsonl");
    training::TrainHooks hooks;
    hooks.on_metrics = [&](const training::MetricsRecord& m) {
        metrics << training::to_json(m).dump() << '\n';
        metrics.flush();
        spdlog::debug("update {} env_steps {} mean_return {:.3f} recon {:.4f}", m.update, m.env_steps, m.mean_return,
                      m.losses.recon_loss);
        if (m.update % 25 == 0)
            spdlog::info("update {} env_steps {} mean_return {:.3f}", m.update, m.env_steps, m.mean_return);
    };
    hooks.on_checkpoint = [&](const training::Learner& L, int update) {
        const fs::path p = dir / "checkpoints" / ("update_" + std::to_string(update) + ".json");
        training::save_checkpoint(p.string(), L.store, cfg, L.value_norm);
        fs::copy_file(p, dir / "checkpoint.json", fs::copy_options::overwrite_existing);
    };
    r.metrics = training::train(*r.learner, cfg.arena, hooks);
    spdlog::info("finished: {} updates, run directory {}", r.metrics.size(), dir.string());
    return r;
}

int cmd_train(const Options& o) {
    const ExperimentConfig cfg = parse_config(load_config_doc(o));
    const fs::path dir = make_run_dir(o.out_dir, "", cfg.train.seed);
    run_training(cfg, dir, nullptr);
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_transfer(const Options& o) {
    if (o.checkpoint.empty()) throw ConfigError("transfer needs --checkpoint");
    const ExperimentConfig cfg = parse_config(load_config_doc(o));
    const training::Checkpoint ckpt = training::read_checkpoint(o.checkpoint);
    const fs::path dir = make_run_dir(o.out_dir, "transfer-", cfg.train.seed);
    run_training(cfg, dir, &ckpt);
    std::cout << dir.string() << "\n";
    return 0;
}

const char* kEvalHeader = "target,n_agents,n_targets,grid_size,sight_radius,episodes,mean_return,std,ci95\n";

std::string eval_row(const std::string& label, const arena::ArenaConfig& a, const training::EvalResult& r) {
    return label + "," + std::to_string(a.n_agents) + "," + std::to_string(a.n_targets) + "," + std::to_string(a.grid_size) +
           "," + num(a.sight_radius) + "," + std::to_string(r.summary.n) + "," + num(r.summary.mean) + "," +
           num(r.summary.std) + "," + num(r.summary.ci95) + "\n";
}

/// One CSV row per target arena: the (overridden) training arena, then every eval entry.
int cmd_eval(const Options& o) {
    if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    if (o.episodes < 0) throw ConfigError("--episodes must be nonnegative");
    const training::Checkpoint ckpt = training::read_checkpoint(o.checkpoint);
    json doc = to_json(ckpt.config);
    if (!o.config.empty()) {
        // eval targets from another config file replace the checkpoint's list
        const ExperimentConfig other = parse_config(read_json_file(o.config));
        doc["eval"] = json::array();
        for (const auto& e : other.eval) doc["eval"].push_back(e);
    }
    for (const auto& ov : o.overrides) apply_override(doc, ov);
    const ExperimentConfig cfg = parse_config(doc);
    ParameterStore store = training::restore_store(ckpt, cfg.model);
    const std::uint64_t seed = o.seed.value_or(cfg.train.seed + 1000003);

    std::vector<std::pair<std::string, arena::ArenaConfig>> targets{{"train", cfg.arena}};
    for (std::size_t k = 0; k < cfg.eval.size(); ++k) targets.emplace_back("eval" + std::to_string(k), cfg.eval[k]);
    std::string csv = kEvalHeader;
    if (o.episodes > 0)
        for (const auto& [label, a] : targets) {
            const auto r = training::evaluate(store, cfg.model, a, o.episodes, seed, true);
            spdlog::info("{}: n_agents {} n_targets {} mean {:.3f} +- {:.3f}", label, a.n_agents, a.n_targets,
                         r.summary.mean, r.summary.ci95);
            csv += eval_row(label, a, r);
        }
    fs::create_directories(o.out_dir);
    const fs::path out = fs::path(o.out_dir) / "eval.csv";
    write_text(out, csv);
    std::cout << out.string() << "\n";
    return 0;
}

/// Minimal SVG line chart: one polyline per variant of mean return vs env steps.
std::string svg_chart(const std::map<std::string, std::vector<std::pair<double, double>>>& series) {
    const double W = 640, H = 400, pad = 50;
    double x_max = 1, y_min = 1e300, y_max = -1e300;
    for (const auto& [_, pts] : series)
        for (auto [x, y] : pts) x_max = std::max(x_max, x), y_min = std::min(y_min, y), y_max = std::max(y_max, y);
    if (y_min >= y_max) y_min -= 1, y_max += 1;
    auto sx = [&](double x) { return pad + (W - 2 * pad) * x / x_max; };
    auto sy = [&](double y) { return H - pad - (H - 2 * pad) * (y - y_min) / (y_max - y_min); };
    const char* colors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">env steps (max " << x_max << ")</text>\n"
      << "<text x=\"12\" y=\"" << H / 2 << "\" transform=\"rotate(-90 12 " << H / 2 << ")\" text-anchor=\"middle\">mean return ["
      << num(y_min) << ", " << num(y_max) << "]</text>\n";
    int c = 0;
    for (const auto& [name, pts] : series) {
        s << "<polyline fill=\"none\" stroke=\"" << colors[c % 4] << "\" stroke-width=\"1.5\" points=\"";
        for (auto [x, y] : pts) s << sx(x) << "," << sy(y) << " ";
        s << "\"/>\n<text x=\"" << W - pad - 150 << "\" y=\"" << pad + 18 * c << "\" fill=\"" << colors[c % 4] << "\">" << name
          << "</text>\n";
        ++c;
    }
    s << "</svg>\n";
    return s.str();
}

/// Trains every variant on shared seeds; CSV of final greedy returns plus a learning-curve chart.
int cmd_ablate(const Options& o) {
    const json base = load_config_doc(o);
    const ExperimentConfig base_cfg = parse_config(base);
    std::vector<std::uint64_t> seeds = o.seeds;
    if (seeds.empty())
        for (std::uint64_t k = 0; k < 5; ++k) seeds.push_back(base_cfg.train.seed + k);
    const fs::path dir = fs::path(o.out_dir) / ("ablate-" + timestamp());
    fs::create_directories(dir);
    std::string csv = "variant,label,seed,env_steps,final_mean_return,final_std,episodes\n";
    std::string curves = "variant,seed,update,env_steps,mean_return\n";
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (Ablation a : {Ablation::full, Ablation::no_decoder_reuse, Ablation::no_masked_inference}) {
        std::vector<std::vector<training::MetricsRecord>> runs;
        for (std::uint64_t seed : seeds) {
            json doc = base;
            apply_override(doc, "model.ablation=" + std::string(ablation_key(a)));
            apply_override(doc, "train.seed=" + std::to_string(seed));
            const ExperimentConfig cfg = parse_config(doc);
            const fs::path run_dir = make_run_dir(dir.string(), std::string(ablation_key(a)) + "-", seed);
            spdlog::info("ablation {} seed {}", ablation_label(a), seed);
            RunResult r = run_training(cfg, run_dir, nullptr);
            const auto ev = training::evaluate(r.learner->store, cfg.model, cfg.arena, o.episodes, seed + 1000003, true);
            const std::int64_t steps = r.metrics.empty() ? 0 : r.metrics.back().env_steps;
            csv += std::string(ablation_key(a)) + "," + std::string(ablation_label(a)) + "," + std::to_string(seed) + "," +
                   std::to_string(steps) + "," + num(ev.summary.mean) + "," + num(ev.summary.std) + "," +
                   std::to_string(ev.summary.n) + "\n";
            for (const auto& m : r.metrics)
                curves += std::string(ablation_key(a)) + "," + std::to_string(seed) + "," + std::to_string(m.update) + "," +
                          std::to_string(m.env_steps) + "," + num(m.mean_return) + "\n";
            runs.push_back(r.metrics);
        }
        // average curve over seeds by update index, truncated to the shortest run
        std::size_t len = runs.front().size();
        for (const auto& r : runs) len = std::min(len, r.size());
        auto& pts = series[std::string(ablation_label(a))];
        for (std::size_t u = 0; u < len; ++u) {
            double x = 0, y = 0;
            for (const auto& r : runs) x += static_cast<double>(r[u].env_steps), y += r[u].mean_return;
            pts.emplace_back(x / static_cast<double>(runs.size()), y / static_cast<double>(runs.size()));
        }
    }
    write_text(dir / "ablation.csv", csv);
    write_text(dir / "curves.csv", curves);
    write_text(dir / "ablation.svg", svg_chart(series));
    std::cout << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_logger_mt("ma2rl"));
    spdlog::set_level(spdlog::level::info);
    spdlog::cfg::load_env_levels();

    CLI::App app{"ma2rl: entity-based multi-agent RL on a tag arena"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Experiment config (JSON)");
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
        sub->add_option("--seed", o.seed, "Override train.seed");
        sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
        sub->add_option("--episodes", o.episodes, "Evaluation episodes")->capture_default_str();
        sub->add_option("--override", o.overrides, "key=value applied to the config (repeatable)");
    };
    auto* train = app.add_subcommand("train", "Train from a config");
    common(train);
    train->get_option("--config")->required();
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one or more arenas");
    common(eval);
    auto* ablate = app.add_subcommand("ablate", "Train full and ablated variants on shared seeds");
    common(ablate);
    ablate->get_option("--config")->required();
    ablate->add_option("--seeds", o.seeds, "Seeds (default: train.seed .. train.seed+4)")->delimiter(',');
    auto* transfer = app.add_subcommand("transfer", "Train with a warm start from a checkpoint");
    common(transfer);
    transfer->get_option("--config")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*ablate) return cmd_ablate(o);
        if (*transfer) return cmd_transfer(o);
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return 2;
    } catch (const LoadError& e) {
        spdlog::error("load error: {}", e.what());
        return 3;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
