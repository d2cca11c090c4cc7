#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gpq/detector.hpp"
#include "gpq/model.hpp"
#include "gpq/scene.hpp"

namespace gpq {

int64_t matmul_flops(int64_t m, int64_t n, int64_t k);  // 2*m*n*k

struct FlopsConfig {
    int num_queries;
    int num_keys;
    int embed_dim;
    int value_dim;
    int hidden_dim;
    int heads;  // reshape only; never changes the counts
    int layers;
    int classes;
    int encoding_dim = 64;

    static FlopsConfig from_model(const ModelConfig& cfg, int num_queries = -1);
};

// Closed-form counts per decoder submodule. Softmax is counted as 5 FLOPs
// per attention-map element; biases are not counted.
struct FlopsReport {
    FlopsConfig config;
    int64_t self_attention = 0;
    int64_t cross_attention = 0;
    int64_t ffn = 0;
    int64_t heads = 0;
    int64_t query_embed = 0;
    int64_t total = 0;

    double total_gflops() const { return double(total) / 1e9; }
};

FlopsReport count_flops(const FlopsConfig& cfg);

struct LatencyStats {
    int trials = 0;
    double median_ms = 0.0;
    double p90_ms = 0.0;
    std::vector<double> samples_ms;
};

// Wall time of forward passes only: scene encoding is excluded (features are
// prepared up front) and the measured region runs on a single thread.
// Warmup runs are excluded from the samples.
LatencyStats measure_latency(Model& m, std::span<const Scene> scenes, int trials, int warmup = 5);

// Appearance counts of each alive query in select_topk over the scene set.
std::vector<int64_t> selection_frequency(Model& m, std::span<const Scene> scenes, int k);

struct EvalConfig {
    std::vector<float> thresholds = {0.05f, 0.10f, 0.20f};
    int topk = 10;
};

struct ClassThresholdAp {
    int class_id;
    float threshold;
    double ap;
};

struct EvalResult {
    double map = 0.0;
    std::vector<ClassThresholdAp> per_class;  // classes with ground truth only
};

// Center-distance mAP: per class and threshold, detections sorted by score
// greedily match the nearest unmatched ground truth within the threshold;
// precision-recall integrated with 101-point interpolation.
EvalResult eval_map(Model& m, std::span<const Scene> scenes, const EvalConfig& cfg = {});

// Same metric on precomputed per-scene detections (final decoder layer).
EvalResult eval_map_detections(std::span<const std::vector<Detection>> per_scene, std::span<const Scene> scenes,
                               std::span<const float> thresholds, int classes);

// CSV of (index,x,y,alive) over the bank's original query set.
void export_reference_points(const QueryBank& bank, const std::string& path);

void write_flops_csv(const std::string& path, const FlopsReport& report);
void write_frequency_csv(const std::string& path, std::span<const int64_t> counts);  // sorted ascending
void write_eval_csv(const std::string& path, const EvalResult& result);
void write_latency_csv(const std::string& path, const LatencyStats& stats);

}  // namespace gpq
