#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpq/tensor.hpp"

namespace gpq {

struct SceneObject {
    int class_id;
    float cx, cy;  // center, unit square
    float w, h;    // size, (0, 0.3]
};

// A synthetic ground-truth world standing in for camera input.
struct Scene {
    int64_t id = 0;
    std::vector<SceneObject> objects;
};

struct SceneConfig {
    int classes = 4;
    int max_objects = 8;
    float min_size = 0.05f;
    float max_size = 0.3f;

    void validate() const;
};

// Deterministic per seed: object count uniform in [1, max_objects], classes
// and centers uniform, sizes uniform in [min_size, max_size].
Scene generate_scene(uint64_t seed, const SceneConfig& cfg);

// count scenes with per-scene seeds drawn from one stream of the master seed.
std::vector<Scene> generate_scenes(uint64_t seed, int count, const SceneConfig& cfg);

// Per-cell, per-class gaussian influence on a grid x grid token map:
// mix[cell][c] = sum over objects of class c of exp(-dist^2 / (2 sigma^2)).
// Token index is gy * grid + gx, cell center ((gx+0.5)/G, (gy+0.5)/G).
Tensor gaussian_class_mix(const Scene& scene, int grid, int classes, float sigma);

// Line-delimited plain text: id,class,cx,cy,w,h[,class,cx,cy,w,h]...
void write_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::string& path);

}  // namespace gpq
