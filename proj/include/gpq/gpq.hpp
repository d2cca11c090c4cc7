#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpq/matching.hpp"
#include "gpq/model.hpp"
#include "gpq/optimizer.hpp"

namespace gpq {

enum class PruneCriterion { LowestScore, HighestScore, AssignerCost };

const char* criterion_name(PruneCriterion c);
std::optional<PruneCriterion> parse_criterion(const std::string& s);

// Control record for a gradual-pruning run: every `interval` iterations
// remove `per_event_k` queries (all of them at once when one_shot) until
// `final_queries` remain.
struct PruneSchedule {
    int64_t total_iterations = 0;  // T
    int initial_queries = 0;       // Nq
    int final_queries = 0;         // Nq'
    int64_t interval = 1;          // n
    int per_event_k = 1;
    PruneCriterion criterion = PruneCriterion::LowestScore;
    bool one_shot = false;

    int events_needed() const;
    void validate() const;  // throws std::invalid_argument
};

// Running per-query statistics since the last prune event. Keys are original
// query indices and always equal the current alive set.
struct ScoreLedger {
    std::vector<int> keys;
    std::vector<int64_t> counts;
    std::vector<double> sums;

    void reset(const std::vector<int>& alive);
    double mean_at(size_t i) const { return counts[i] ? sums[i] / double(counts[i]) : 0.0; }
    bool has_records() const;
};

// Per query: max score over classes, then mean over the batch samples.
// `batch_final` holds the final decoder layer's prediction per sample.
void record_scores(ScoreLedger& ledger, std::span<const Prediction> batch_final, const std::vector<int>& alive);

// GPQ-C criterion: mean assigner cost per query; samples where a query went
// unmatched contribute the batch's worst matched cost instead.
void record_assigner_costs(ScoreLedger& ledger, std::span<const Assignment> batch_assignments,
                           std::span<const CostMatrix> batch_costs, const std::vector<int>& alive);

struct PruneEvent {
    int64_t iteration;
    std::vector<int> removed;         // original indices
    std::vector<double> ledger_scores;  // their ledger means at removal time
};

struct PruneReport {
    int initial_queries = 0;
    std::vector<PruneEvent> events;
    std::vector<int> final_alive;
};

// Fires when t is a multiple of the interval and queries remain above the
// floor; removes the scheduled number of queries (never below final_queries),
// drops their optimizer state and resets the ledger.
std::optional<PruneEvent> prune_step(QueryBank& bank, ScoreLedger& ledger, const PruneSchedule& sched, int64_t t,
                                     AdamW* opt);

struct TrainConfig {
    int64_t iterations = 500;
    int batch_size = 8;
    float lr = 2e-4f;
    bool cosine_lr = true;
    float weight_decay = 1e-2f;
    uint64_t seed = 0;
    LossConfig loss;
    std::function<void(int64_t, double)> on_iteration;  // (t, batch mean loss)
};

// Scratch training: the same loop as finetune with pruning disabled.
void train(Model& m, std::span<const Scene> dataset, const TrainConfig& cfg);

// The pruning loop: per iteration forward, set loss, gradient step, record
// scores, prune step. Works from a loaded checkpoint or a fresh model.
PruneReport finetune(Model& m, std::span<const Scene> dataset, const PruneSchedule& sched, const TrainConfig& cfg);

// Line-delimited (iteration, removed_index, ledger_score) with a header.
void write_prune_report(const std::string& path, const PruneReport& report);
std::vector<PruneEvent> read_prune_report_events(const std::string& path);

}  // namespace gpq
