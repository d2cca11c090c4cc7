#include "gpq/scene.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gpq {

void SceneConfig::validate() const {
    if (classes < 2) throw std::invalid_argument("scene config: classes must be >= 2, got " + std::to_string(classes));
    if (max_objects < 1)
        throw std::invalid_argument("scene config: max_objects must be >= 1, got " + std::to_string(max_objects));
    if (!(min_size > 0.0f) || !(max_size <= 0.3f) || min_size > max_size)
        throw std::invalid_argument("scene config: sizes must satisfy 0 < min <= max <= 0.3");
}

Scene generate_scene(uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    Rng rng(seed, "scene");
    Scene s;
    s.id = int64_t(seed);
    int count = rng.uniform_int(1, cfg.max_objects);
    s.objects.reserve(count);
    for (int i = 0; i < count; ++i) {
        SceneObject o;
        o.class_id = rng.uniform_int(0, cfg.classes - 1);
        o.cx = rng.uniform(0.0f, 1.0f);
        o.cy = rng.uniform(0.0f, 1.0f);
        o.w = rng.uniform(cfg.min_size, cfg.max_size);
        o.h = rng.uniform(cfg.min_size, cfg.max_size);
        s.objects.push_back(o);
    }
    return s;
}

std::vector<Scene> generate_scenes(uint64_t seed, int count, const SceneConfig& cfg) {
    Rng stream(seed, "data");
    std::vector<Scene> scenes;
    scenes.reserve(count);
    for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(stream.next(), cfg));
    return scenes;
}

Tensor gaussian_class_mix(const Scene& scene, int grid, int classes, float sigma) {
    Tensor mix = Tensor::matrix(grid * grid, classes);
    const double two_sigma_sq = 2.0 * double(sigma) * double(sigma);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            int cell = gy * grid + gx;
            double cxc = (gx + 0.5) / grid;
            double cyc = (gy + 0.5) / grid;
            for (const auto& o : scene.objects) {
                double dx = cxc - double(o.cx);
                double dy = cyc - double(o.cy);
                double wgt = std::exp(-(dx * dx + dy * dy) / two_sigma_sq);
                mix.at(cell, o.class_id) += float(wgt);
            }
        }
    }
    return mix;
}

namespace {

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", double(v));
    return buf;
}

}  // namespace

void write_scenes(const std::string& path, const std::vector<Scene>& scenes) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& s : scenes) {
        out << s.id;
        for (const auto& o : s.objects)
            out << ',' << o.class_id << ',' << format_float(o.cx) << ',' << format_float(o.cy) << ','
                << format_float(o.w) << ',' << format_float(o.h);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Scene> read_scenes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<Scene> scenes;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        Scene s;
        if (!std::getline(ss, field, ',')) continue;
        s.id = std::stoll(field);
        std::vector<std::string> rest;
        while (std::getline(ss, field, ',')) rest.push_back(field);
        if (rest.size() % 5 != 0)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed scene record");
        for (size_t i = 0; i < rest.size(); i += 5) {
            SceneObject o;
            o.class_id = std::stoi(rest[i]);
            o.cx = std::stof(rest[i + 1]);
            o.cy = std::stof(rest[i + 2]);
            o.w = std::stof(rest[i + 3]);
            o.h = std::stof(rest[i + 4]);
            s.objects.push_back(o);
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace gpq
