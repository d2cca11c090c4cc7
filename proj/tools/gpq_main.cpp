#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "gpq/cli.hpp"

namespace {

using gpq::RunConfig;

// Plain key=value config file, '#' comments. Keys mirror the flag names with
// underscores; flags given on the command line override file values.
void apply_config_file(const std::string& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);

    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto set_int = [](int& field) { return [&field](const std::string& v) { field = std::stoi(v); }; };
    auto set_i64 = [](int64_t& field) { return [&field](const std::string& v) { field = std::stoll(v); }; };
    auto set_f = [](float& field) { return [&field](const std::string& v) { field = std::stof(v); }; };
    auto set_s = [](std::string& field) { return [&field](const std::string& v) { field = v; }; };
    auto set_b = [](bool& field) {
        return [&field](const std::string& v) { field = (v == "1" || v == "true" || v == "yes"); };
    };
    setters["nq"] = set_int(cfg.nq);
    setters["grid"] = set_int(cfg.grid);
    setters["embed_dim"] = set_int(cfg.embed_dim);
    setters["value_dim"] = set_int(cfg.value_dim);
    setters["hidden_dim"] = set_int(cfg.hidden_dim);
    setters["heads"] = set_int(cfg.heads);
    setters["layers"] = set_int(cfg.layers);
    setters["classes"] = set_int(cfg.classes);
    setters["max_objects"] = set_int(cfg.max_objects);
    setters["sinusoid_freqs"] = set_int(cfg.sinusoid_freqs);
    setters["encode_sigma"] = set_f(cfg.encode_sigma);
    setters["iterations"] = set_i64(cfg.iterations);
    setters["final_queries"] = set_int(cfg.final_queries);
    setters["interval"] = set_i64(cfg.interval);
    setters["per_event_k"] = set_int(cfg.per_event_k);
    setters["criterion"] = set_s(cfg.criterion);
    setters["one_shot"] = set_b(cfg.one_shot);
    setters["lr"] = set_f(cfg.lr);
    setters["weight_decay"] = set_f(cfg.weight_decay);
    setters["batch_size"] = set_int(cfg.batch_size);
    setters["seed"] = [&cfg](const std::string& v) { cfg.seed = std::stoull(v); };
    setters["scenes"] = set_int(cfg.scenes);
    setters["trials"] = set_int(cfg.trials);
    setters["topk"] = set_int(cfg.topk);
    setters["log_every"] = set_i64(cfg.log_every);
    setters["out_dir"] = set_s(cfg.out_dir);
    setters["checkpoint"] = set_s(cfg.checkpoint);
    setters["dataset"] = set_s(cfg.dataset);
    setters["report"] = set_s(cfg.report);

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(value);
        auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
        it->second(value);
    }
}

void add_model_dims(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--nq", cfg.nq, "number of object queries");
    cmd->add_option("--grid", cfg.grid, "feature grid side (keys = grid^2)");
    cmd->add_option("--embed-dim", cfg.embed_dim, "query/key embedding width");
    cmd->add_option("--value-dim", cfg.value_dim, "value width (must equal embed-dim)");
    cmd->add_option("--hidden-dim", cfg.hidden_dim, "FFN hidden width");
    cmd->add_option("--heads", cfg.heads, "attention heads");
    cmd->add_option("--layers", cfg.layers, "decoder layers");
    cmd->add_option("--classes", cfg.classes, "object classes");
    cmd->add_option("--max-objects", cfg.max_objects, "max objects per scene");
    cmd->add_option("--sinusoid-freqs", cfg.sinusoid_freqs, "frequencies per coordinate");
    cmd->add_option("--encode-sigma", cfg.encode_sigma, "scene encoding gaussian width");
}

void add_train_opts(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--iterations", cfg.iterations, "training iterations");
    cmd->add_option("--batch-size", cfg.batch_size, "scenes per gradient step");
    cmd->add_option("--lr", cfg.lr, "base learning rate");
    cmd->add_option("--weight-decay", cfg.weight_decay, "AdamW weight decay");
    cmd->add_option("--log-every", cfg.log_every, "progress print interval (0 silences)");
}

void add_data_opts(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--scenes", cfg.scenes, "scene count when generating data");
    cmd->add_option("--dataset", cfg.dataset, "scene dataset file (overrides generation)");
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;

    // flag > config file > default: the file is applied before parsing.
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            try {
                apply_config_file(argv[i + 1], cfg);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return gpq::kExitConfigError;
            }
        }
    }

    CLI::App app{"query-based detector with gradual query pruning"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "key=value config file")->expected(1);

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", cfg.seed, "master seed");
        cmd->add_option("--out", cfg.out_dir, "output directory");
        cmd->add_option("--config", config_path, "key=value config file (applied before flags)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic scene dataset");
    add_common(gen);
    gen->add_option("--scenes", cfg.scenes, "scene count");
    gen->add_option("--classes", cfg.classes, "object classes");
    gen->add_option("--max-objects", cfg.max_objects, "max objects per scene");

    CLI::App* train = app.add_subcommand("train", "train a detector from scratch");
    add_common(train);
    add_model_dims(train, cfg);
    add_train_opts(train, cfg);
    add_data_opts(train, cfg);

    CLI::App* prune = app.add_subcommand("prune", "gradually prune queries from a checkpoint");
    add_common(prune);
    prune->add_option("--checkpoint", cfg.checkpoint, "checkpoint to prune")->required();
    prune->add_option("--final-queries", cfg.final_queries, "queries to keep");
    prune->add_option("--interval", cfg.interval, "iterations between prune events (0 = auto)");
    prune->add_option("--per-event-k", cfg.per_event_k, "queries removed per event");
    prune->add_option("--criterion", cfg.criterion, "lowest | highest | cost");
    prune->add_flag("--one-shot", cfg.one_shot, "remove everything at the first event");
    add_train_opts(prune, cfg);
    add_data_opts(prune, cfg);

    CLI::App* eval = app.add_subcommand("eval", "evaluate mAP on synthetic scenes");
    add_common(eval);
    eval->add_option("--checkpoint", cfg.checkpoint, "checkpoint to evaluate")->required();
    eval->add_option("--topk", cfg.topk, "detections kept per scene");
    add_data_opts(eval, cfg);

    CLI::App* bench = app.add_subcommand("bench", "FLOPs accounting and latency measurement");
    add_common(bench);
    bench->add_flag("--flops", cfg.bench_flops, "emit FLOPs reports");
    bench->add_flag("--latency", cfg.bench_latency, "measure forward latency");
    bench->add_option("--nq", cfg.bench_nq, "query counts to benchmark (repeatable)");
    bench->add_option("--trials", cfg.trials, "latency trials (>= 30)");
    bench->add_option("--scenes", cfg.scenes, "scenes for latency inputs");
    add_model_dims(bench, cfg);

    CLI::App* analyze = app.add_subcommand("analyze", "inspect prune reports, selection frequency, reference points");
    add_common(analyze);
    analyze->add_option("--report", cfg.report, "prune report to summarize");
    analyze->add_flag("--frequency", cfg.analyze_frequency, "emit selection-frequency histogram");
    analyze->add_flag("--ref-points", cfg.analyze_ref_points, "export reference points");
    analyze->add_option("--checkpoint", cfg.checkpoint, "checkpoint for --frequency/--ref-points");
    analyze->add_option("--topk", cfg.topk, "selector k for --frequency");
    add_data_opts(analyze, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : gpq::kExitConfigError;
    }

    if (gen->parsed()) cfg.task = gpq::Task::GenData;
    if (train->parsed()) cfg.task = gpq::Task::Train;
    if (prune->parsed()) cfg.task = gpq::Task::Prune;
    if (eval->parsed()) cfg.task = gpq::Task::Eval;
    if (bench->parsed()) cfg.task = gpq::Task::Bench;
    if (analyze->parsed()) cfg.task = gpq::Task::Analyze;

    try {
        return gpq::run(cfg);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return gpq::kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return gpq::kExitRuntimeError;
    }
}
