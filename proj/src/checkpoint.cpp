#include "gpq/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace gpq {

namespace {

constexpr const char* kMagic = "GPQ1";
constexpr int kFormatVersion = 1;

std::string fmt_float(float v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", double(v));
    return buf;
}

void append_le_f32(std::string& out, float v) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    out.push_back(char(bits & 0xff));
    out.push_back(char((bits >> 8) & 0xff));
    out.push_back(char((bits >> 16) & 0xff));
    out.push_back(char((bits >> 24) & 0xff));
}

float read_le_f32(const char* p) {
    uint32_t bits = uint32_t(uint8_t(p[0])) | uint32_t(uint8_t(p[1])) << 8 | uint32_t(uint8_t(p[2])) << 16 |
                    uint32_t(uint8_t(p[3])) << 24;
    return std::bit_cast<float>(bits);
}

// The reference points are serialized at their original size: alive rows
// carry the live values, retired rows their last coordinates.
Tensor full_ref_points(const QueryBank& bank) {
    Tensor full = Tensor::matrix(bank.initial_count(), 2);
    for (int r = 0; r < bank.alive_count(); ++r) {
        full.at(bank.alive[r], 0) = bank.ref_points.value.at(r, 0);
        full.at(bank.alive[r], 1) = bank.ref_points.value.at(r, 1);
    }
    for (const auto& rp : bank.retired) {
        full.at(rp.original_index, 0) = rp.x;
        full.at(rp.original_index, 1) = rp.y;
    }
    return full;
}

}  // namespace

void save_checkpoint(Model& m, const std::string& path, uint64_t seed, int64_t iteration) {
    std::ostringstream header;
    header << kMagic << '\n';
    header << "format_version " << kFormatVersion << '\n';
    header << "seed " << seed << '\n';
    header << "iteration " << iteration << '\n';
    const ModelConfig& c = m.cfg;
    header << "num_queries " << c.num_queries << '\n';
    header << "grid " << c.grid << '\n';
    header << "embed_dim " << c.embed_dim << '\n';
    header << "value_dim " << c.value_dim << '\n';
    header << "hidden_dim " << c.hidden_dim << '\n';
    header << "heads " << c.heads << '\n';
    header << "layers " << c.layers << '\n';
    header << "classes " << c.classes << '\n';
    header << "sinusoid_freqs " << c.sinusoid_freqs << '\n';
    header << "encode_sigma " << fmt_float(c.encode_sigma) << '\n';
    header << "max_objects " << c.max_objects << '\n';
    header << "alive " << m.bank.alive.size();
    for (int i : m.bank.alive) header << ' ' << i;
    header << '\n';

    Tensor ref_full = full_ref_points(m.bank);
    std::string payload;
    for (auto& [name, p] : m.named_params()) {
        const Tensor& t = (name == "bank.ref_points") ? ref_full : p->value;
        header << "tensor " << name << ' ' << t.shape.size();
        for (int d : t.shape) header << ' ' << d;
        header << '\n';
        for (float v : t.data) append_le_f32(payload, v);
    }
    header << "end_header\n";

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw CheckpointError("cannot open for writing: " + tmp);
        const std::string h = header.str();
        out.write(h.data(), std::streamsize(h.size()));
        out.write(payload.data(), std::streamsize(payload.size()));
        if (!out) throw CheckpointError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);

    std::string line;
    if (!std::getline(in, line)) throw BadMagicError(path + ": empty file");
    if (line != kMagic) throw BadMagicError(path + ": bad magic '" + line + "'");

    std::map<std::string, std::string> fields;
    std::vector<int> alive;
    std::vector<std::pair<std::string, std::vector<int>>> tensors;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "alive") {
            size_t n;
            ss >> n;
            alive.resize(n);
            for (size_t i = 0; i < n; ++i)
                if (!(ss >> alive[i])) throw HeaderParseError(path + ": malformed alive list");
        } else if (key == "tensor") {
            std::string name;
            size_t ndim;
            ss >> name >> ndim;
            std::vector<int> shape(ndim);
            for (size_t i = 0; i < ndim; ++i)
                if (!(ss >> shape[i])) throw HeaderParseError(path + ": malformed tensor line: " + line);
            tensors.emplace_back(name, std::move(shape));
        } else {
            std::string value;
            std::getline(ss, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            if (key.empty()) throw HeaderParseError(path + ": malformed header line: " + line);
            fields[key] = value;
        }
    }
    if (line != "end_header") throw HeaderParseError(path + ": missing end_header");

    auto get_int = [&](const std::string& key) -> int64_t {
        auto it = fields.find(key);
        if (it == fields.end()) throw HeaderParseError(path + ": missing header field " + key);
        return std::stoll(it->second);
    };
    if (get_int("format_version") != kFormatVersion)
        throw BadVersionError(path + ": unsupported format_version " + fields["format_version"]);

    ModelConfig cfg;
    cfg.num_queries = int(get_int("num_queries"));
    cfg.grid = int(get_int("grid"));
    cfg.embed_dim = int(get_int("embed_dim"));
    cfg.value_dim = int(get_int("value_dim"));
    cfg.hidden_dim = int(get_int("hidden_dim"));
    cfg.heads = int(get_int("heads"));
    cfg.layers = int(get_int("layers"));
    cfg.classes = int(get_int("classes"));
    cfg.sinusoid_freqs = int(get_int("sinusoid_freqs"));
    cfg.encode_sigma = std::stof(fields.at("encode_sigma"));
    cfg.max_objects = int(get_int("max_objects"));

    LoadedCheckpoint ck;
    ck.seed = uint64_t(std::stoull(fields.at("seed")));
    ck.iteration = get_int("iteration");
    Rng rng(0, "load");
    ck.model = Model::init(cfg, rng);

    // Payload bytes, verified against the declared shapes.
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t expected = 0;
    for (auto& [name, shape] : tensors) {
        size_t n = 1;
        for (int d : shape) n *= size_t(d);
        expected += 4 * n;
    }
    if (payload.size() != expected)
        throw TruncatedPayloadError(path + ": payload is " + std::to_string(payload.size()) + " bytes, header declares " +
                                    std::to_string(expected));

    auto params = ck.model.named_params();
    if (tensors.size() != params.size()) throw HeaderParseError(path + ": unexpected tensor count");

    size_t off = 0;
    Tensor ref_full;
    for (size_t i = 0; i < tensors.size(); ++i) {
        auto& [name, shape] = tensors[i];
        if (name != params[i].first)
            throw HeaderParseError(path + ": tensor order mismatch: " + name + " vs " + params[i].first);
        size_t n = 1;
        for (int d : shape) n *= size_t(d);
        Tensor t(shape, 0.0f);
        for (size_t j = 0; j < n; ++j) t.data[j] = read_le_f32(payload.data() + off + 4 * j);
        off += 4 * n;
        if (name == "bank.ref_points") {
            ref_full = std::move(t);
        } else {
            if (params[i].second->value.shape != shape)
                throw HeaderParseError(path + ": shape mismatch for " + name);
            params[i].second->value = std::move(t);
            params[i].second->resize_like_value();
        }
    }

    // Split the full reference-point array into live rows and retired points.
    if (ref_full.shape.empty() || ref_full.shape[0] != cfg.num_queries)
        throw HeaderParseError(path + ": reference-point array does not match num_queries");
    auto& bank = ck.model.bank;
    bank.alive = alive;
    bank.retired.clear();
    bank.ref_points.value = Tensor::matrix(int(alive.size()), 2);
    size_t r = 0;
    for (int orig = 0; orig < cfg.num_queries; ++orig) {
        bool is_alive = r < alive.size() && alive[r] == orig;
        if (is_alive) {
            bank.ref_points.value.at(int(r), 0) = ref_full.at(orig, 0);
            bank.ref_points.value.at(int(r), 1) = ref_full.at(orig, 1);
            ++r;
        } else {
            bank.retired.push_back({orig, ref_full.at(orig, 0), ref_full.at(orig, 1)});
        }
    }
    if (r != alive.size()) throw HeaderParseError(path + ": alive list is not sorted or out of range");
    bank.ref_points.resize_like_value();
    return ck;
}

}  // namespace gpq
