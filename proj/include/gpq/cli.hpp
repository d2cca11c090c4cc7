#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gpq {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeError = 3;

enum class Task { GenData, Train, Prune, Eval, Bench, Analyze };

const char* task_name(Task t);

// Resolved run configuration. Flags mirror these keys one-to-one; precedence
// is flag > config file > default.
struct RunConfig {
    Task task = Task::Train;

    // model dims
    int nq = 64;
    int grid = 8;
    int embed_dim = 64;
    int value_dim = 64;
    int hidden_dim = 256;
    int heads = 8;
    int layers = 2;
    int classes = 4;
    int max_objects = 8;
    int sinusoid_freqs = 16;
    float encode_sigma = 0.08f;

    // schedule
    int64_t iterations = 600;
    int final_queries = 16;
    int64_t interval = 0;  // 0: derived so pruning finishes in the first 25% of iterations
    int per_event_k = 1;
    std::string criterion = "lowest";  // lowest | highest | cost
    bool one_shot = false;

    // optimizer
    float lr = 2e-4f;
    float weight_decay = 1e-2f;
    int batch_size = 8;

    // data and misc
    uint64_t seed = 0;
    int scenes = 512;
    int trials = 35;
    int topk = 10;
    int64_t log_every = 50;

    // paths
    std::string out_dir = "out";
    std::string checkpoint;
    std::string dataset;
    std::string report;

    // bench switches
    bool bench_flops = false;
    bool bench_latency = false;
    std::vector<int> bench_nq;

    // analyze switches
    bool analyze_frequency = false;
    bool analyze_ref_points = false;
};

// Dispatches to the named task and writes a manifest (resolved config, seed,
// artifact checksums) alongside the outputs. Throws std::invalid_argument
// for configuration problems and std::runtime_error for runtime failures.
int run(const RunConfig& cfg);

uint64_t fnv1a64_file(const std::string& path);

}  // namespace gpq
