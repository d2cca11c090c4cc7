#include "gpq/gpq.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "gpq/detector.hpp"

namespace gpq {

const char* criterion_name(PruneCriterion c) {
    switch (c) {
        case PruneCriterion::LowestScore: return "lowest";
        case PruneCriterion::HighestScore: return "highest";
        case PruneCriterion::AssignerCost: return "cost";
    }
    return "?";
}

std::optional<PruneCriterion> parse_criterion(const std::string& s) {
    if (s == "lowest") return PruneCriterion::LowestScore;
    if (s == "highest") return PruneCriterion::HighestScore;
    if (s == "cost") return PruneCriterion::AssignerCost;
    return std::nullopt;
}

int PruneSchedule::events_needed() const {
    if (one_shot) return 1;
    int to_remove = initial_queries - final_queries;
    return (to_remove + per_event_k - 1) / per_event_k;
}

void PruneSchedule::validate() const {
    if (final_queries < 1)
        throw std::invalid_argument("schedule: final_queries must be >= 1, got " + std::to_string(final_queries));
    if (final_queries >= initial_queries)
        throw std::invalid_argument("schedule: final_queries must be below initial_queries (" +
                                    std::to_string(final_queries) + " >= " + std::to_string(initial_queries) + ")");
    if (interval < 1) throw std::invalid_argument("schedule: interval must be >= 1");
    if (per_event_k < 1) throw std::invalid_argument("schedule: per_event_k must be >= 1");
    int64_t last_event = interval * int64_t(events_needed());
    if (last_event > total_iterations)
        throw std::invalid_argument("schedule: pruning does not fit in " + std::to_string(total_iterations) +
                                    " iterations (last event at " + std::to_string(last_event) + ")");
}

void ScoreLedger::reset(const std::vector<int>& alive) {
    keys = alive;
    counts.assign(alive.size(), 0);
    sums.assign(alive.size(), 0.0);
}

bool ScoreLedger::has_records() const {
    for (int64_t c : counts)
        if (c > 0) return true;
    return false;
}

void record_scores(ScoreLedger& ledger, std::span<const Prediction> batch_final, const std::vector<int>& alive) {
    if (ledger.keys != alive) throw std::invalid_argument("record_scores: ledger keys do not match alive set");
    const int nq = int(alive.size());
    if (batch_final.empty()) throw std::invalid_argument("record_scores: empty batch");
    std::vector<double> batch_mean(nq, 0.0);
    for (const auto& pred : batch_final) {
        if (pred.scores.shape[0] != nq)
            throw std::invalid_argument("record_scores: prediction rows " + std::to_string(pred.scores.shape[0]) +
                                        " do not match alive count " + std::to_string(nq));
        const int c = pred.scores.shape[1];
        for (int q = 0; q < nq; ++q) {
            float best = pred.scores.at(q, 0);
            for (int j = 1; j < c; ++j) best = std::max(best, pred.scores.at(q, j));
            batch_mean[q] += double(best);
        }
    }
    for (int q = 0; q < nq; ++q) {
        ledger.sums[q] += batch_mean[q] / double(batch_final.size());
        ledger.counts[q] += 1;
    }
}

void record_assigner_costs(ScoreLedger& ledger, std::span<const Assignment> batch_assignments,
                           std::span<const CostMatrix> batch_costs, const std::vector<int>& alive) {
    if (ledger.keys != alive) throw std::invalid_argument("record_assigner_costs: ledger keys mismatch");
    if (batch_assignments.size() != batch_costs.size() || batch_assignments.empty())
        throw std::invalid_argument("record_assigner_costs: malformed batch");
    const int nq = int(alive.size());

    double worst_matched = -std::numeric_limits<double>::infinity();
    for (size_t s = 0; s < batch_assignments.size(); ++s)
        for (auto [q, g] : batch_assignments[s].pairs)
            worst_matched = std::max(worst_matched, double(batch_costs[s].values.at(q, g)));

    std::vector<double> batch_mean(nq, 0.0);
    for (size_t s = 0; s < batch_assignments.size(); ++s) {
        std::vector<double> per_query(nq, worst_matched);
        for (auto [q, g] : batch_assignments[s].pairs) per_query[q] = double(batch_costs[s].values.at(q, g));
        for (int q = 0; q < nq; ++q) batch_mean[q] += per_query[q];
    }
    for (int q = 0; q < nq; ++q) {
        ledger.sums[q] += batch_mean[q] / double(batch_assignments.size());
        ledger.counts[q] += 1;
    }
}

std::optional<PruneEvent> prune_step(QueryBank& bank, ScoreLedger& ledger, const PruneSchedule& sched, int64_t t,
                                     AdamW* opt) {
    if (t % sched.interval != 0) return std::nullopt;
    const int alive = bank.alive_count();
    if (alive <= sched.final_queries) return std::nullopt;
    if (!ledger.has_records()) throw std::runtime_error("prune event at iteration " + std::to_string(t) +
                                                        " with no recorded scores");

    int k = sched.one_shot ? alive - sched.final_queries : std::min(sched.per_event_k, alive - sched.final_queries);

    // Order candidates by ledger mean; ties fall back to the original index.
    std::vector<size_t> order(ledger.keys.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const bool take_highest = sched.criterion != PruneCriterion::LowestScore;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        double ma = ledger.mean_at(a), mb = ledger.mean_at(b);
        if (ma != mb) return take_highest ? ma > mb : ma < mb;
        return ledger.keys[a] < ledger.keys[b];
    });

    PruneEvent ev;
    ev.iteration = t;
    std::vector<int> rows;
    for (int i = 0; i < k; ++i) {
        ev.removed.push_back(ledger.keys[order[i]]);
        ev.ledger_scores.push_back(ledger.mean_at(order[i]));
        rows.push_back(bank.row_of(ledger.keys[order[i]]));
    }
    bank.remove_rows(rows);
    if (opt) opt->remove_rows("bank.ref_points", rows, 2);
    ledger.reset(bank.alive);
    return ev;
}

namespace {

PruneReport run_loop(Model& m, std::span<const Scene> dataset, const PruneSchedule* sched, const TrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("training: empty dataset");
    if (cfg.batch_size < 1) throw std::invalid_argument("training: batch_size must be >= 1");
    if (cfg.iterations < 1) throw std::invalid_argument("training: iterations must be >= 1");
    if (sched) {
        sched->validate();
        if (sched->initial_queries != m.bank.alive_count())
            throw std::invalid_argument("schedule: initial_queries " + std::to_string(sched->initial_queries) +
                                        " does not match the model's " + std::to_string(m.bank.alive_count()));
    }

    AdamW opt(m.named_params(), AdamWConfig{.weight_decay = cfg.weight_decay});
    Rng shuffle(cfg.seed, "shuffle");
    ScoreLedger ledger;
    ledger.reset(m.bank.alive);
    PruneReport report;
    report.initial_queries = m.bank.alive_count();

    const int batch = cfg.batch_size;
    const double pi = 3.14159265358979323846;
    std::vector<autograd::Graph> graphs(batch);
    std::vector<GraphPredictions> gps(batch);
    std::vector<std::vector<Assignment>> assigns(batch);
    std::vector<std::vector<CostMatrix>> costs(batch);
    std::vector<autograd::NodeId> losses(batch);

    for (int64_t t = 1; t <= cfg.iterations; ++t) {
        std::vector<int> picks(batch);
        for (int& i : picks) i = shuffle.uniform_int(0, int(dataset.size()) - 1);

        for (int b = 0; b < batch; ++b) {
            graphs[b] = autograd::Graph();
            assigns[b].clear();
            costs[b].clear();
        }
        // Sample graphs are independent; gradients land in node-local
        // buffers and are flushed serially below, so the result does not
        // depend on the thread count.
#pragma omp parallel for schedule(static) if (batch > 1)
        for (int b = 0; b < batch; ++b) {
            const Scene& scene = dataset[picks[b]];
            gps[b] = forward_graph(graphs[b], m, scene);
            losses[b] = set_loss_graph(graphs[b], gps[b], scene, cfg.loss, &assigns[b], &costs[b]);
            graphs[b].sweep_backward(losses[b], 1.0f / float(batch));
        }

        m.zero_grads();
        double loss_mean = 0.0;
        for (int b = 0; b < batch; ++b) {
            graphs[b].flush_leaf_grads();
            loss_mean += double(graphs[b].value(losses[b]).data[0]) / batch;
        }

        float lr_t = cfg.cosine_lr
                         ? cfg.lr * 0.5f * (1.0f + float(std::cos(pi * double(t - 1) / double(cfg.iterations))))
                         : cfg.lr;
        opt.step(lr_t);

        if (sched && m.bank.alive_count() > sched->final_queries) {
            if (sched->criterion == PruneCriterion::AssignerCost) {
                std::vector<Assignment> final_assign;
                std::vector<CostMatrix> final_cost;
                for (int b = 0; b < batch; ++b) {
                    final_assign.push_back(assigns[b].back());
                    final_cost.push_back(costs[b].back());
                }
                record_assigner_costs(ledger, final_assign, final_cost, m.bank.alive);
            } else {
                std::vector<Prediction> final_preds;
                for (int b = 0; b < batch; ++b) {
                    final_preds.push_back({graphs[b].value(gps[b].scores.back()), graphs[b].value(gps[b].boxes.back()),
                                           int(gps[b].scores.size()) - 1});
                }
                record_scores(ledger, final_preds, m.bank.alive);
            }
            auto ev = prune_step(m.bank, ledger, *sched, t, &opt);
            if (ev) report.events.push_back(std::move(*ev));
        }

        if (cfg.on_iteration) cfg.on_iteration(t, loss_mean);
    }
    report.final_alive = m.bank.alive;
    return report;
}

}  // namespace

void train(Model& m, std::span<const Scene> dataset, const TrainConfig& cfg) {
    run_loop(m, dataset, nullptr, cfg);
}

PruneReport finetune(Model& m, std::span<const Scene> dataset, const PruneSchedule& sched, const TrainConfig& cfg) {
    return run_loop(m, dataset, &sched, cfg);
}

void write_prune_report(const std::string& path, const PruneReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "iteration,removed_index,ledger_score\n";
    char buf[64];
    for (const auto& ev : report.events) {
        for (size_t i = 0; i < ev.removed.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", ev.ledger_scores[i]);
            out << ev.iteration << ',' << ev.removed[i] << ',' << buf << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<PruneEvent> read_prune_report_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty prune report: " + path);
    std::map<int64_t, PruneEvent> by_iter;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string it_s, idx_s, score_s;
        if (!std::getline(ss, it_s, ',') || !std::getline(ss, idx_s, ',') || !std::getline(ss, score_s, ','))
            throw std::runtime_error("malformed prune report line: " + line);
        int64_t it = std::stoll(it_s);
        auto& ev = by_iter[it];
        ev.iteration = it;
        ev.removed.push_back(std::stoi(idx_s));
        ev.ledger_scores.push_back(std::stod(score_s));
    }
    std::vector<PruneEvent> events;
    events.reserve(by_iter.size());
    for (auto& [it, ev] : by_iter) events.push_back(std::move(ev));
    return events;
}

}  // namespace gpq
