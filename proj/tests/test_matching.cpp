#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gpq/detector.hpp"
#include "gpq/matching.hpp"
#include "oracles.hpp"

using namespace gpq;

namespace {

CostMatrix random_cost(int nq, int m, Rng& rng, float lo = -2.0f, float hi = 2.0f) {
    CostMatrix c{Tensor::matrix(nq, m)};
    rng.fill_uniform(c.values, lo, hi);
    return c;
}

Model tiny_model(uint64_t seed = 2024) {
    ModelConfig cfg;
    cfg.num_queries = 3;
    cfg.grid = 2;
    cfg.embed_dim = 8;
    cfg.value_dim = 8;
    cfg.hidden_dim = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.classes = 2;
    Rng rng(seed, "init");
    return Model::init(cfg, rng);
}

}  // namespace

TEST_CASE("build_cost worked examples") {
    Scene scene;
    scene.objects.push_back({1, 0.4f, 0.6f, 0.2f, 0.1f});

    Prediction pred;
    pred.scores = Tensor({2, 3}, {0.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f});
    pred.boxes = Tensor({2, 4}, {0.4f, 0.6f, 0.2f, 0.1f, 0.4f, 0.6f, 0.2f, 0.1f});

    auto cost = build_cost(pred, scene, 2.0f, 0.25f);
    // perfect score and exact box: cost = -w_cls
    CHECK(cost.values.at(0, 0) == doctest::Approx(-2.0f));
    // zero score and exact box: cost = 0
    CHECK(cost.values.at(1, 0) == doctest::Approx(0.0f));

    // zero score, box at L1 distance 1: cost = w_box
    Prediction pred2;
    pred2.scores = Tensor({1, 3}, {0.0f, 0.0f, 0.0f});
    pred2.boxes = Tensor({1, 4}, {0.4f + 0.4f, 0.6f + 0.3f, 0.2f + 0.2f, 0.1f + 0.1f});
    auto cost2 = build_cost(pred2, scene, 2.0f, 0.25f);
    CHECK(cost2.values.at(0, 0) == doctest::Approx(0.25f).epsilon(1e-6));
}

TEST_CASE("build_cost matches the direct formula on random instances") {
    Rng rng(3, "cost");
    Scene scene;
    for (int g = 0; g < 3; ++g)
        scene.objects.push_back({g % 2, rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05f, 0.3f),
                                 rng.uniform(0.05f, 0.3f)});
    Prediction pred;
    pred.scores = Tensor::matrix(5, 2);
    rng.fill_uniform(pred.scores, 0.0f, 1.0f);
    pred.boxes = Tensor::matrix(5, 4);
    rng.fill_uniform(pred.boxes, 0.01f, 0.99f);

    auto cost = build_cost(pred, scene, 2.0f, 0.25f);
    for (int q = 0; q < 5; ++q)
        for (int g = 0; g < 3; ++g) {
            const auto& o = scene.objects[g];
            double l1 = std::abs(double(pred.boxes.at(q, 0)) - o.cx) + std::abs(double(pred.boxes.at(q, 1)) - o.cy) +
                        std::abs(double(pred.boxes.at(q, 2)) - o.w) + std::abs(double(pred.boxes.at(q, 3)) - o.h);
            double expect = -2.0 * double(pred.scores.at(q, o.class_id)) + 0.25 * l1;
            CHECK(std::abs(double(cost.values.at(q, g)) - expect) < 1e-6);
        }
}

TEST_CASE("hungarian: diagonal-dominant and singleton cases") {
    CostMatrix diag{Tensor({3, 3}, {0.0f, 5.0f, 5.0f, 5.0f, 0.0f, 5.0f, 5.0f, 5.0f, 0.0f})};
    auto a = hungarian(diag);
    REQUIRE(a.pairs.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(a.pairs[i].first == i);
        CHECK(a.pairs[i].second == i);
    }
    CHECK(a.total_cost == 0.0);

    CostMatrix single{Tensor({1, 1}, {3.5f})};
    auto s = hungarian(single);
    REQUIRE(s.pairs.size() == 1);
    CHECK(s.pairs[0] == std::pair<int, int>{0, 0});
    CHECK(s.total_cost == doctest::Approx(3.5));
}

TEST_CASE("hungarian equals the exhaustive oracle on 200 random instances") {
    Rng rng(11, "hungarian");
    for (int trial = 0; trial < 200; ++trial) {
        int m = 1 + int(rng.next() % 7);
        int nq = m + int(rng.next() % (8 - m));
        CostMatrix cost = random_cost(nq, m, rng);
        auto got = hungarian(cost);
        double expect = oracles::brute_force_assignment(cost);
        CHECK(got.total_cost == expect);

        // both solver paths agree on the optimum
        auto km = detail::hungarian_padded_km(cost);
        auto dp = detail::hungarian_subset_dp(cost);
        CHECK(km.total_cost == expect);
        CHECK(dp.total_cost == expect);

        // assignment well-formed: each gt exactly once, queries distinct
        std::vector<char> gt_seen(m, 0), q_seen(nq, 0);
        for (auto [q, g] : got.pairs) {
            CHECK(!gt_seen[g]);
            CHECK(!q_seen[q]);
            gt_seen[g] = 1;
            q_seen[q] = 1;
        }
        CHECK(got.pairs.size() == size_t(m));
    }
}

TEST_CASE("hungarian picks the lexicographically smallest optimal pair list") {
    // two optimal assignments exist; (0,0),(1,1) is the smaller list
    CostMatrix tie{Tensor({3, 2}, {0.0f, 0.0f, 0.0f, 0.0f, 7.0f, 7.0f})};
    auto a = hungarian(tie);
    REQUIRE(a.pairs.size() == 2);
    CHECK(a.pairs[0] == std::pair<int, int>{0, 0});
    CHECK(a.pairs[1] == std::pair<int, int>{1, 1});
}

TEST_CASE("assignment structure is invariant to constant cost shifts") {
    Rng rng(13, "shift");
    for (int trial = 0; trial < 20; ++trial) {
        int m = 1 + int(rng.next() % 5);
        int nq = m + int(rng.next() % 4);
        CostMatrix cost = random_cost(nq, m, rng);
        auto base = hungarian(cost);
        CostMatrix shifted = cost;
        for (float& v : shifted.values.data) v += 3.25f;  // exactly representable
        auto moved = hungarian(shifted);
        CHECK(base.pairs == moved.pairs);
        CHECK(moved.total_cost == doctest::Approx(base.total_cost + 3.25 * m).epsilon(1e-5));
    }
}

TEST_CASE("hungarian rejects more targets than queries and non-finite entries") {
    CHECK_THROWS_AS(hungarian(CostMatrix{Tensor::matrix(2, 3)}), std::invalid_argument);
    CostMatrix bad{Tensor::matrix(3, 2)};
    bad.values.at(1, 1) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
}

TEST_CASE("set loss is zero for perfect predictions") {
    Scene scene;
    scene.objects.push_back({1, 0.25f, 0.75f, 0.1f, 0.2f});
    scene.objects.push_back({0, 0.6f, 0.4f, 0.15f, 0.1f});

    Prediction pred;
    pred.scores = Tensor({3, 2}, {0.0f, 1.0f, 1.0f, 0.0f, 0.0f, 0.0f});
    pred.boxes = Tensor({3, 4},
                        {0.25f, 0.75f, 0.1f, 0.2f, 0.6f, 0.4f, 0.15f, 0.1f, 0.5f, 0.5f, 0.5f, 0.5f});
    float loss = set_loss_value({pred}, scene, {});
    CHECK(loss == 0.0f);
}

TEST_CASE("set loss is positive and permutation invariant for uniform scores") {
    Scene scene;
    scene.objects.push_back({0, 0.5f, 0.5f, 0.1f, 0.1f});

    Prediction pred;
    pred.scores = Tensor::matrix(3, 2, 0.5f);
    pred.boxes = Tensor({3, 4}, {0.2f, 0.2f, 0.1f, 0.1f, 0.5f, 0.5f, 0.1f, 0.1f, 0.8f, 0.8f, 0.1f, 0.1f});
    float base = set_loss_value({pred}, scene, {});
    CHECK(base > 0.0f);

    // permute query rows
    std::vector<int> perm = {2, 0, 1};
    Prediction shuffled;
    shuffled.scores = Tensor::matrix(3, 2);
    shuffled.boxes = Tensor::matrix(3, 4);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 2; ++c) shuffled.scores.at(r, c) = pred.scores.at(perm[r], c);
        for (int c = 0; c < 4; ++c) shuffled.boxes.at(r, c) = pred.boxes.at(perm[r], c);
    }
    float permuted = set_loss_value({shuffled}, scene, {});
    CHECK(permuted == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("set loss equals the hand-computed focal plus L1 oracle") {
    Scene scene;
    scene.objects.push_back({0, 0.3f, 0.4f, 0.1f, 0.2f});

    Prediction pred;
    pred.scores = Tensor({3, 2}, {0.8f, 0.1f, 0.3f, 0.2f, 0.1f, 0.05f});
    pred.boxes = Tensor({3, 4}, {0.35f, 0.45f, 0.12f, 0.22f,  //
                                 0.6f, 0.6f, 0.2f, 0.2f,      //
                                 0.5f, 0.5f, 0.3f, 0.3f});
    LossConfig cfg;  // w_cls 2.0, w_box 0.25, alpha 0.25, gamma 2

    // query 0 dominates the match for the single object
    auto fl_pos = [](double p) { return -0.25 * (1 - p) * (1 - p) * std::log(p); };
    auto fl_neg = [](double p) { return -0.75 * p * p * std::log(1 - p); };
    double focal = fl_pos(0.8) + fl_neg(0.1) + fl_neg(0.3) + fl_neg(0.2) + fl_neg(0.1) + fl_neg(0.05);
    double l1 = 0.05 + 0.05 + 0.02 + 0.02;
    double expect = 2.0 * focal / 1.0 + 0.25 * l1 / 1.0;

    float loss = set_loss_value({pred}, scene, cfg);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("deep supervision averages the per-layer losses") {
    Scene scene;
    scene.objects.push_back({0, 0.3f, 0.4f, 0.1f, 0.2f});
    Prediction a;
    a.scores = Tensor::matrix(2, 2, 0.4f);
    a.boxes = Tensor::matrix(2, 4, 0.5f);
    Prediction b;
    b.scores = Tensor::matrix(2, 2, 0.7f);
    b.boxes = Tensor::matrix(2, 4, 0.2f);
    float la = set_loss_value({a}, scene, {});
    float lb = set_loss_value({b}, scene, {});
    float lab = set_loss_value({a, b}, scene, {});
    CHECK(lab == doctest::Approx(0.5 * (la + lb)).epsilon(1e-6));
}

TEST_CASE("set loss gradients match finite differences at a matching-stable point") {
    Model model = tiny_model();
    SceneConfig sc;
    sc.classes = 2;
    sc.max_objects = 2;
    Scene scene = generate_scene(31337, sc);
    LossConfig cfg;

    auto compute_assignments = [&]() {
        autograd::Graph g;
        auto gp = forward_graph(g, model, scene);
        std::vector<Assignment> assigns;
        set_loss_graph(g, gp, scene, cfg, &assigns);
        std::vector<std::vector<std::pair<int, int>>> pairs;
        for (auto& a : assigns) pairs.push_back(a.pairs);
        return pairs;
    };

    auto frozen = compute_assignments();

    // the assignment must be stable under +-1e-4 parameter perturbations
    auto params = model.named_params();
    Rng noise(99, "stability");
    for (int dir = 0; dir < 3; ++dir) {
        std::vector<std::vector<float>> saved;
        for (auto& [name, p] : params) {
            saved.push_back(p->value.data);
            for (float& v : p->value.data) v += noise.uniform(-1e-4f, 1e-4f);
        }
        CHECK(compute_assignments() == frozen);
        for (size_t i = 0; i < params.size(); ++i) params[i].second->value.data = saved[i];
    }

    // analytic gradients from the tape
    model.zero_grads();
    autograd::Graph g;
    auto gp = forward_graph(g, model, scene);
    auto loss = set_loss_graph(g, gp, scene, cfg);
    g.backward(loss);

    // central differences on the double-precision oracle with the frozen
    // match; coordinates where a relu kink sits inside the step are excluded
    double base = oracles::f64::model_set_loss(model, scene, cfg, frozen);
    int checked = 0, bad = 0, skipped = 0;
    for (auto& [name, p] : params) {
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            float keep = p->value.data[i];
            float up_x = keep + 1e-3f, down_x = keep - 1e-3f;
            p->value.data[i] = up_x;
            double up = oracles::f64::model_set_loss(model, scene, cfg, frozen);
            p->value.data[i] = down_x;
            double down = oracles::f64::model_set_loss(model, scene, cfg, frozen);
            p->value.data[i] = keep;
            double fd = (up - down) / (double(up_x) - double(down_x));
            double d_up = (up - base) / (double(up_x) - double(keep));
            double d_down = (base - down) / (double(keep) - double(down_x));
            if (std::abs(d_up - d_down) > 1e-2 * std::max(1.0, std::abs(fd))) {
                ++skipped;
                continue;
            }
            double an = double(p->grad[i]);
            double abs_err = std::abs(an - fd);
            double rel = abs_err / std::max({std::abs(an), std::abs(fd), 1e-30});
            ++checked;
            if (abs_err > 1e-5 && rel > 1e-3) ++bad;
        }
    }
    CHECK(checked > 500);
    CHECK(bad == 0);
    CHECK(skipped < checked / 100);
}
