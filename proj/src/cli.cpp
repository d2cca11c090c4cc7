#include "gpq/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "gpq/bench.hpp"
#include "gpq/checkpoint.hpp"
#include "gpq/gpq.hpp"

namespace fs = std::filesystem;

namespace gpq {

const char* task_name(Task t) {
    switch (t) {
        case Task::GenData: return "gen-data";
        case Task::Train: return "train";
        case Task::Prune: return "prune";
        case Task::Eval: return "eval";
        case Task::Bench: return "bench";
        case Task::Analyze: return "analyze";
    }
    return "?";
}

uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for checksum: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= uint8_t(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (in.eof()) break;
    }
    return h;
}

namespace {

std::string fmt_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void atomic_write(const std::string& path, const std::function<void(const std::string&)>& writer) {
    std::string tmp = path + ".tmp";
    writer(tmp);
    fs::rename(tmp, path);
}

ModelConfig model_config_from(const RunConfig& cfg) {
    ModelConfig m;
    m.num_queries = cfg.nq;
    m.grid = cfg.grid;
    m.embed_dim = cfg.embed_dim;
    m.value_dim = cfg.value_dim;
    m.hidden_dim = cfg.hidden_dim;
    m.heads = cfg.heads;
    m.layers = cfg.layers;
    m.classes = cfg.classes;
    m.sinusoid_freqs = cfg.sinusoid_freqs;
    m.encode_sigma = cfg.encode_sigma;
    m.max_objects = cfg.max_objects;
    m.validate();
    return m;
}

std::map<std::string, std::string> config_as_map(const RunConfig& c) {
    std::map<std::string, std::string> m;
    m["task"] = task_name(c.task);
    m["nq"] = std::to_string(c.nq);
    m["grid"] = std::to_string(c.grid);
    m["embed_dim"] = std::to_string(c.embed_dim);
    m["value_dim"] = std::to_string(c.value_dim);
    m["hidden_dim"] = std::to_string(c.hidden_dim);
    m["heads"] = std::to_string(c.heads);
    m["layers"] = std::to_string(c.layers);
    m["classes"] = std::to_string(c.classes);
    m["max_objects"] = std::to_string(c.max_objects);
    m["sinusoid_freqs"] = std::to_string(c.sinusoid_freqs);
    m["encode_sigma"] = fmt_float(c.encode_sigma);
    m["iterations"] = std::to_string(c.iterations);
    m["final_queries"] = std::to_string(c.final_queries);
    m["interval"] = std::to_string(c.interval);
    m["per_event_k"] = std::to_string(c.per_event_k);
    m["criterion"] = c.criterion;
    m["one_shot"] = c.one_shot ? "1" : "0";
    m["lr"] = fmt_float(c.lr);
    m["weight_decay"] = fmt_float(c.weight_decay);
    m["batch_size"] = std::to_string(c.batch_size);
    m["seed"] = std::to_string(c.seed);
    m["scenes"] = std::to_string(c.scenes);
    m["trials"] = std::to_string(c.trials);
    m["topk"] = std::to_string(c.topk);
    m["out_dir"] = c.out_dir;
    m["checkpoint"] = c.checkpoint;
    m["dataset"] = c.dataset;
    m["report"] = c.report;
    return m;
}

void write_manifest(const RunConfig& cfg, const std::vector<std::string>& artifacts) {
    std::string path = (fs::path(cfg.out_dir) / "manifest.txt").string();
    atomic_write(path, [&](const std::string& tmp) {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        for (const auto& [k, v] : config_as_map(cfg)) out << k << '=' << v << '\n';
        for (const auto& a : artifacts) {
            char hex[32];
            std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)fnv1a64_file(a));
            out << "artifact " << fs::path(a).filename().string() << ' ' << hex << '\n';
        }
        if (!out) throw std::runtime_error("write failed: " + tmp);
    });
}

SceneConfig scene_config_from(const RunConfig& cfg) {
    SceneConfig s;
    s.classes = cfg.classes;
    s.max_objects = cfg.max_objects;
    s.validate();
    return s;
}

std::vector<Scene> load_or_generate_scenes(const RunConfig& cfg, const std::string& stream) {
    if (!cfg.dataset.empty()) return read_scenes(cfg.dataset);
    if (cfg.scenes < 1) throw std::invalid_argument("scenes: must be >= 1");
    Rng derive(cfg.seed, stream);
    return generate_scenes(derive.next(), cfg.scenes, scene_config_from(cfg));
}

PruneCriterion criterion_from(const RunConfig& cfg) {
    auto c = parse_criterion(cfg.criterion);
    if (!c) throw std::invalid_argument("criterion: expected lowest|highest|cost, got '" + cfg.criterion + "'");
    return *c;
}

PruneSchedule schedule_from(const RunConfig& cfg, int initial_queries) {
    PruneSchedule s;
    s.total_iterations = cfg.iterations;
    s.initial_queries = initial_queries;
    s.final_queries = cfg.final_queries;
    s.per_event_k = cfg.per_event_k;
    s.criterion = criterion_from(cfg);
    s.one_shot = cfg.one_shot;
    if (cfg.interval > 0) {
        s.interval = cfg.interval;
    } else {
        // Default budget: pruning completes within the first quarter of the run.
        int64_t budget = std::max<int64_t>(1, cfg.iterations / 4);
        s.interval = std::max<int64_t>(1, budget / std::max(1, s.events_needed()));
    }
    s.validate();
    return s;
}

void log_progress(const RunConfig& cfg, int64_t t, double loss) {
    if (cfg.log_every > 0 && (t % cfg.log_every == 0 || t == 1))
        std::fprintf(stderr, "iter %lld loss %.5f\n", (long long)t, loss);
}

int run_gen_data(const RunConfig& cfg) {
    auto scenes = generate_scenes(cfg.seed, cfg.scenes, scene_config_from(cfg));
    fs::create_directories(cfg.out_dir);
    std::string path = (fs::path(cfg.out_dir) / "scenes.txt").string();
    atomic_write(path, [&](const std::string& tmp) { write_scenes(tmp, scenes); });
    write_manifest(cfg, {path});
    std::printf("wrote %zu scenes to %s\n", scenes.size(), path.c_str());
    return kExitOk;
}

int run_train(const RunConfig& cfg) {
    ModelConfig mc = model_config_from(cfg);
    auto scenes = load_or_generate_scenes(cfg, "train-data");
    Rng init(cfg.seed, "init");
    Model model = Model::init(mc, init);

    TrainConfig tc;
    tc.iterations = cfg.iterations;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.lr;
    tc.cosine_lr = true;
    tc.weight_decay = cfg.weight_decay;
    tc.seed = cfg.seed;
    tc.on_iteration = [&](int64_t t, double loss) { log_progress(cfg, t, loss); };
    train(model, scenes, tc);

    fs::create_directories(cfg.out_dir);
    std::string ckpt = (fs::path(cfg.out_dir) / "checkpoint.gpq").string();
    save_checkpoint(model, ckpt, cfg.seed, cfg.iterations);
    write_manifest(cfg, {ckpt});
    std::printf("trained %lld iterations, checkpoint at %s\n", (long long)cfg.iterations, ckpt.c_str());
    return kExitOk;
}

int run_prune(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw std::invalid_argument("prune: --checkpoint is required");
    auto ck = load_checkpoint(cfg.checkpoint);
    Model& model = ck.model;

    PruneSchedule sched = schedule_from(cfg, model.bank.alive_count());
    RunConfig data_cfg = cfg;
    data_cfg.classes = model.cfg.classes;
    data_cfg.max_objects = model.cfg.max_objects;
    auto scenes = load_or_generate_scenes(data_cfg, "train-data");

    TrainConfig tc;
    tc.iterations = cfg.iterations;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.lr * 0.5f;  // fine-tune at half the scratch rate, constant
    tc.cosine_lr = false;
    tc.weight_decay = cfg.weight_decay;
    tc.seed = cfg.seed;
    tc.on_iteration = [&](int64_t t, double loss) { log_progress(cfg, t, loss); };
    PruneReport report = finetune(model, scenes, sched, tc);

    fs::create_directories(cfg.out_dir);
    std::string ckpt = (fs::path(cfg.out_dir) / "pruned.gpq").string();
    std::string rep = (fs::path(cfg.out_dir) / "prune_report.csv").string();
    std::string pts = (fs::path(cfg.out_dir) / "ref_points.csv").string();
    save_checkpoint(model, ckpt, cfg.seed, ck.iteration + cfg.iterations);
    atomic_write(rep, [&](const std::string& tmp) { write_prune_report(tmp, report); });
    atomic_write(pts, [&](const std::string& tmp) { export_reference_points(model.bank, tmp); });
    write_manifest(cfg, {ckpt, rep, pts});
    std::printf("pruned %d -> %d queries over %zu events, checkpoint at %s\n", report.initial_queries,
                int(report.final_alive.size()), report.events.size(), ckpt.c_str());
    return kExitOk;
}

int run_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required");
    auto ck = load_checkpoint(cfg.checkpoint);
    RunConfig data_cfg = cfg;
    data_cfg.classes = ck.model.cfg.classes;
    data_cfg.max_objects = ck.model.cfg.max_objects;
    auto scenes = load_or_generate_scenes(data_cfg, "eval-data");

    EvalConfig ec;
    ec.topk = cfg.topk;
    EvalResult result = eval_map(ck.model, scenes, ec);

    fs::create_directories(cfg.out_dir);
    std::string path = (fs::path(cfg.out_dir) / "eval_summary.csv").string();
    atomic_write(path, [&](const std::string& tmp) { write_eval_csv(tmp, result); });
    write_manifest(cfg, {path});
    std::printf("mAP %.4f over %zu scenes (%d queries)\n", result.map, scenes.size(), ck.model.bank.alive_count());
    return kExitOk;
}

int run_bench(const RunConfig& cfg) {
    if (!cfg.bench_flops && !cfg.bench_latency)
        throw std::invalid_argument("bench: pass --flops and/or --latency");
    std::vector<int> nqs = cfg.bench_nq.empty() ? std::vector<int>{cfg.nq} : cfg.bench_nq;
    fs::create_directories(cfg.out_dir);
    std::vector<std::string> artifacts;

    if (cfg.bench_flops) {
        int64_t first_total = 0;
        for (size_t i = 0; i < nqs.size(); ++i) {
            FlopsConfig fc;
            fc.num_queries = nqs[i];
            fc.num_keys = cfg.grid * cfg.grid;
            fc.embed_dim = cfg.embed_dim;
            fc.value_dim = cfg.value_dim;
            fc.hidden_dim = cfg.hidden_dim;
            fc.heads = cfg.heads;
            fc.layers = cfg.layers;
            fc.classes = cfg.classes;
            fc.encoding_dim = 2 * cfg.sinusoid_freqs * 2;
            FlopsReport r = count_flops(fc);
            std::string path = (fs::path(cfg.out_dir) / ("flops_nq" + std::to_string(nqs[i]) + ".csv")).string();
            atomic_write(path, [&](const std::string& tmp) { write_flops_csv(tmp, r); });
            artifacts.push_back(path);
            if (i == 0) first_total = r.total;
            std::printf("flops nq=%d total=%lld (%.4f GFLOPs)", nqs[i], (long long)r.total, r.total_gflops());
            if (i > 0 && first_total > 0)
                std::printf(" reduction=%.2f%%", 100.0 * (1.0 - double(r.total) / double(first_total)));
            std::printf("\n");
        }
    }

    if (cfg.bench_latency) {
        SceneConfig sc = scene_config_from(cfg);
        Rng derive(cfg.seed, "bench-data");
        auto scenes = generate_scenes(derive.next(), std::max(1, std::min(cfg.scenes, 8)), sc);
        for (int nq : nqs) {
            RunConfig one = cfg;
            one.nq = nq;
            ModelConfig mc = model_config_from(one);
            Rng init(cfg.seed, "init");
            Model model = Model::init(mc, init);
            LatencyStats stats = measure_latency(model, scenes, cfg.trials);
            std::string path = (fs::path(cfg.out_dir) / ("latency_nq" + std::to_string(nq) + ".csv")).string();
            atomic_write(path, [&](const std::string& tmp) { write_latency_csv(tmp, stats); });
            artifacts.push_back(path);
            std::printf("latency nq=%d median=%.3fms p90=%.3fms over %d trials\n", nq, stats.median_ms, stats.p90_ms,
                        stats.trials);
        }
    }
    write_manifest(cfg, artifacts);
    return kExitOk;
}

int run_analyze(const RunConfig& cfg) {
    bool any = false;
    std::vector<std::string> artifacts;
    fs::create_directories(cfg.out_dir);

    if (!cfg.report.empty()) {
        any = true;
        auto events = read_prune_report_events(cfg.report);
        size_t removed = 0;
        for (const auto& ev : events) removed += ev.removed.size();
        std::printf("prune report: %zu events, %zu queries removed", events.size(), removed);
        if (!events.empty())
            std::printf(", iterations %lld..%lld", (long long)events.front().iteration,
                        (long long)events.back().iteration);
        std::printf("\n");
        for (const auto& ev : events) {
            double mean = 0.0;
            for (double s : ev.ledger_scores) mean += s;
            if (!ev.ledger_scores.empty()) mean /= double(ev.ledger_scores.size());
            std::printf("  iter %lld: removed %zu (mean ledger score %.5f)\n", (long long)ev.iteration,
                        ev.removed.size(), mean);
        }
    }

    if (cfg.analyze_frequency || cfg.analyze_ref_points) {
        if (cfg.checkpoint.empty()) throw std::invalid_argument("analyze: --checkpoint is required for this mode");
        auto ck = load_checkpoint(cfg.checkpoint);
        if (cfg.analyze_frequency) {
            any = true;
            RunConfig data_cfg = cfg;
            data_cfg.classes = ck.model.cfg.classes;
            data_cfg.max_objects = ck.model.cfg.max_objects;
            auto scenes = load_or_generate_scenes(data_cfg, "eval-data");
            auto counts = selection_frequency(ck.model, scenes, cfg.topk);
            std::string path = (fs::path(cfg.out_dir) / "frequency.csv").string();
            atomic_write(path, [&](const std::string& tmp) { write_frequency_csv(tmp, counts); });
            artifacts.push_back(path);
            auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
            std::printf("selection frequency over %zu scenes: min=%lld max=%lld\n", scenes.size(), (long long)*mn,
                        (long long)*mx);
        }
        if (cfg.analyze_ref_points) {
            any = true;
            std::string path = (fs::path(cfg.out_dir) / "ref_points.csv").string();
            atomic_write(path, [&](const std::string& tmp) { export_reference_points(ck.model.bank, tmp); });
            artifacts.push_back(path);
            std::printf("exported %d reference points (%d alive)\n", ck.model.bank.initial_count(),
                        ck.model.bank.alive_count());
        }
    }

    if (!any) throw std::invalid_argument("analyze: pass --report, --frequency and/or --ref-points");
    write_manifest(cfg, artifacts);
    return kExitOk;
}

}  // namespace

int run(const RunConfig& cfg) {
    switch (cfg.task) {
        case Task::GenData: return run_gen_data(cfg);
        case Task::Train: return run_train(cfg);
        case Task::Prune: return run_prune(cfg);
        case Task::Eval: return run_eval(cfg);
        case Task::Bench: return run_bench(cfg);
        case Task::Analyze: return run_analyze(cfg);
    }
    throw std::invalid_argument("unknown task");
}

}  // namespace gpq
