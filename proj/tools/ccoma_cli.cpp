#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccoma/analysis.hpp"
#include "ccoma/checkpoint.hpp"
#include "ccoma/config.hpp"
#include "ccoma/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

ccoma::config::RunConfig load_config(const CommonArgs& args) {
    return ccoma::config::load_file(args.config_path, args.overrides);
}

// actor and critic parameters share one checkpoint file
ccoma::ParamStore combined_params(ccoma::Trainer& trainer) {
    ccoma::ParamStore all;
    for (auto& item : trainer.policy().params().items) all.items.push_back(item);
    for (auto& item : trainer.critic().params().items) all.items.push_back(item);
    return all;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    f << text;
}

json manifest_json(const ccoma::config::RunConfig& cfg, const ccoma::Trainer& trainer) {
    json m;
    m["format"] = "ccoma-manifest v1";
    m["config"] = ccoma::config::to_json(cfg);
    m["config_ini"] = ccoma::config::to_ini(cfg);
    m["config_hash"] = ccoma::config::config_hash(cfg);
    m["algo"] = cfg.get("train", "algo");
    m["env"] = cfg.get("env", "name");
    m["mode"] = cfg.get("env", "name") == "traffic" ? cfg.get("env", "mode") : "";
    m["seed"] = cfg.get_int("train", "seed");
    m["step"] = trainer.steps_done();
    m["rng_state"] = trainer.rng_state();
    // steps are environment timesteps summed over the parallel environments
    m["step_unit"] = "env timesteps summed over parallel envs";
    return m;
}

ccoma::Trainer make_trainer(const ccoma::config::RunConfig& cfg) {
    return ccoma::Trainer(ccoma::config::train_config(cfg), ccoma::config::make_env_factory(cfg),
                          ccoma::config::policy_config(cfg), ccoma::config::critic_hidden(cfg));
}

int cmd_train(const CommonArgs& common, const std::string& out_dir) {
    const auto cfg = load_config(common);
    fs::create_directories(out_dir);
    ccoma::Trainer trainer = make_trainer(cfg);

    const bool wall_timing = cfg.get("eval", "timing") == "wall";
    if (cfg.get("eval", "timing") != "wall" && cfg.get("eval", "timing") != "none")
        throw ccoma::config::ConfigError("eval.timing must be wall or none");

    write_text(fs::path(out_dir) / "manifest.json", manifest_json(cfg, trainer).dump(2) + "\n");
    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc | std::ios::binary);
    if (!metrics) throw std::runtime_error("cannot open metrics file");

    const std::string algo = cfg.get("train", "algo");
    const std::string env_name = cfg.get("env", "name");
    const std::string mode = env_name == "traffic" ? cfg.get("env", "mode") : "";

    try {
        trainer.run([&](const ccoma::Trainer::EvalRecord& rec) {
            json line;
            line["step"] = rec.step;
            line["algo"] = algo;
            line["env"] = env_name;
            line["mode"] = mode;
            if (rec.metrics.success_rate.has_value())
                line["success_rate"] = *rec.metrics.success_rate;
            else
                line["success_rate"] = nullptr;
            line["mean_return"] = rec.metrics.mean_return;
            line["actor_loss"] = rec.last_update.actor_loss;
            line["critic_loss"] = rec.last_update.critic_loss;
            line["wall_ms"] = wall_timing ? rec.wall_ms : 0.0;
            metrics << line.dump() << "\n";
            metrics.flush();
            auto all = combined_params(trainer);
            ccoma::checkpoint::save_file((fs::path(out_dir) / "checkpoint.bin").string(), all);
            std::cout << "step " << rec.step << " mean_return " << rec.metrics.mean_return;
            if (rec.metrics.success_rate.has_value())
                std::cout << " success_rate " << *rec.metrics.success_rate;
            std::cout << "\n";
        });
    } catch (const ccoma::NumericalError& e) {
        write_text(fs::path(out_dir) / "abort_dump.json", e.dump().dump(2) + "\n");
        std::cerr << "numerical abort: " << e.what() << " (batch dumped to abort_dump.json)\n";
        return kExitNumeric;
    }

    auto all = combined_params(trainer);
    ccoma::checkpoint::save_file((fs::path(out_dir) / "checkpoint.bin").string(), all);
    write_text(fs::path(out_dir) / "manifest.json", manifest_json(cfg, trainer).dump(2) + "\n");
    return kExitOk;
}

ccoma::config::RunConfig config_from_manifest(const std::string& checkpoint_path,
                                              std::string manifest_path,
                                              const std::vector<std::string>& overrides) {
    if (manifest_path.empty())
        manifest_path = (fs::path(checkpoint_path).parent_path() / "manifest.json").string();
    std::ifstream f(manifest_path);
    if (!f) throw ccoma::config::ConfigError("cannot open manifest '" + manifest_path + "'");
    json m = json::parse(f, nullptr, false);
    if (m.is_discarded() || !m.contains("config_ini"))
        throw ccoma::config::ConfigError("manifest '" + manifest_path + "' is not usable");
    return ccoma::config::load_text(m["config_ini"].get<std::string>(), overrides);
}

int cmd_eval(const CommonArgs& common, const std::string& checkpoint_path,
             const std::string& manifest_path, int episodes, bool greedy,
             const std::string& out_path, const std::string& trace_path) {
    const auto cfg = config_from_manifest(checkpoint_path, manifest_path, common.overrides);
    ccoma::Trainer trainer = make_trainer(cfg);
    auto all = combined_params(trainer);
    ccoma::checkpoint::load_file(checkpoint_path, all);

    const std::string records_path =
        out_path.empty() ? (fs::path(checkpoint_path).parent_path() / "eval_episodes.jsonl").string()
                         : out_path;
    std::ofstream records(records_path, std::ios::trunc | std::ios::binary);
    if (!records) throw std::runtime_error("cannot open '" + records_path + "'");
    std::ofstream trace;
    if (!trace_path.empty()) {
        trace.open(trace_path, std::ios::trunc | std::ios::binary);
        if (!trace) throw std::runtime_error("cannot open '" + trace_path + "'");
    }

    double mean_return = 0.0;
    int successes = 0, success_known = 0;
    trainer.evaluate_episodes(episodes, greedy, [&](int i, const ccoma::EpisodeData& ep) {
        json line;
        line["episode"] = i;
        line["return"] = ep.episode_return;
        line["steps"] = ep.length();
        if (ep.success.has_value())
            line["success"] = *ep.success;
        else
            line["success"] = nullptr;
        records << line.dump() << "\n";
        if (trace.is_open())
            for (const auto& rec : ep.traces) {
                json t = rec;
                t["episode"] = i;
                trace << t.dump() << "\n";
            }
        mean_return += ep.episode_return;
        if (ep.success.has_value()) {
            ++success_known;
            if (*ep.success) ++successes;
        }
    });
    if (episodes > 0) mean_return /= episodes;

    json summary;
    summary["episodes"] = episodes;
    summary["mean_return"] = mean_return;
    if (success_known > 0)
        summary["success_rate"] = static_cast<double>(successes) / success_known;
    else
        summary["success_rate"] = nullptr;
    write_text(fs::path(records_path).parent_path() / "eval_summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_analyze(const CommonArgs& common, const std::string& checkpoint_path,
                const std::string& manifest_path, const std::string& env_name, int episodes,
                const std::string& out_dir) {
    const auto cfg = config_from_manifest(checkpoint_path, manifest_path, common.overrides);
    if (env_name != "traffic" || cfg.get("env", "name") != "traffic")
        throw ccoma::config::ConfigError("analyze supports the traffic environment only");

    ccoma::Trainer trainer = make_trainer(cfg);
    auto all = combined_params(trainer);
    ccoma::checkpoint::load_file(checkpoint_path, all);
    trainer.set_collect_messages(true);

    const auto tj_cfg = ccoma::config::traffic_config(cfg);
    ccoma::analysis::AnalysisGrid grid;
    grid.init(tj_cfg.rows, tj_cfg.cols);
    const int n = trainer.policy().config().n_slots;
    const int obs_dim = trainer.policy().config().obs_dim;
    const int d_model = trainer.policy().config().d_model;
    trainer.evaluate_episodes(episodes, true, [&](int, const ccoma::EpisodeData& ep) {
        ccoma::analysis::accumulate_episode(grid, ep, n, obs_dim, d_model, tj_cfg.rows, tj_cfg.cols);
    });

    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "brake_prob.csv", grid.brake_probability_csv());
    write_text(fs::path(out_dir) / "message_norm.csv", grid.mean_norm_csv());

    ccoma::traffic::TrafficEnv env(tj_cfg);
    const auto junctions = ccoma::traffic::junction_cells(tj_cfg.mode);
    const auto approaches = ccoma::analysis::junction_approach_cells(env.routes(), junctions);
    const json summary = grid.summary(junctions, approaches);
    write_text(fs::path(out_dir) / "analysis_summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked graph-attention multi-agent actor-critic"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* train = app.add_subcommand("train", "train a model and write metrics + checkpoints");
    std::string out_dir = "run";
    train->add_option("--config", common.config_path, "configuration file");
    train->add_option("--out", out_dir, "output directory");
    std::string algo, env_name, mode, seed, steps;
    train->add_option("--algo", algo, "ccoma|coma|iql_comm");
    train->add_option("--env", env_name, "traffic|manufacture");
    train->add_option("--mode", mode, "traffic mode: easy|hard|harder");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--steps", steps, "total environment steps");
    train->add_option("--set", common.overrides, "override section.key=value")->take_all();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string checkpoint, manifest, eval_out, trace_path;
    int episodes = 96;
    bool greedy = false;
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--manifest", manifest, "manifest (default: next to the checkpoint)");
    eval->add_option("--episodes", episodes, "episodes to run");
    eval->add_flag("--greedy", greedy, "greedy action selection");
    eval->add_option("--out", eval_out, "per-episode records file");
    eval->add_option("--trace", trace_path, "episode trace export (JSON lines)");
    eval->add_option("--set", common.overrides, "override section.key=value")->take_all();

    auto* analyze = app.add_subcommand("analyze", "per-cell brake/message analysis");
    std::string a_env = "traffic", a_out = "analysis";
    int a_episodes = 96;
    analyze->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    analyze->add_option("--manifest", manifest, "manifest (default: next to the checkpoint)");
    analyze->add_option("--env", a_env, "environment (traffic)");
    analyze->add_option("--episodes", a_episodes, "episodes to run");
    analyze->add_option("--out", a_out, "output directory");
    analyze->add_option("--set", common.overrides, "override section.key=value")->take_all();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (train->parsed()) {
            if (!algo.empty()) common.overrides.push_back("train.algo=" + algo);
            if (!env_name.empty()) common.overrides.push_back("env.name=" + env_name);
            if (!mode.empty()) common.overrides.push_back("env.mode=" + mode);
            if (!seed.empty()) common.overrides.push_back("train.seed=" + seed);
            if (!steps.empty()) common.overrides.push_back("train.steps=" + steps);
            return cmd_train(common, out_dir);
        }
        if (eval->parsed())
            return cmd_eval(common, checkpoint, manifest, episodes, greedy, eval_out, trace_path);
        if (analyze->parsed())
            return cmd_analyze(common, checkpoint, manifest, a_env, a_episodes, a_out);
    } catch (const ccoma::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
