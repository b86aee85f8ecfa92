#include "graspmamba/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "graspmamba/error.hpp"
#include "graspmamba/rng.hpp"
#include "graspmamba/ssm.hpp"

namespace graspmamba::harness {

using nlohmann::json;

Tensor loss_fn(const head::GraspMaps& pred, const head::GraspMaps& target) {
    auto term = [](const Tensor& p, const Tensor& t, const char* name) {
        if (p.shape() != t.shape()) {
            throw ShapeError(std::string("loss_fn: ") + name + " map shape " +
                             shape_str(p.shape()) + " vs target " + shape_str(t.shape()));
        }
        return smooth_l1(p, t);
    };
    Tensor total = term(pred.quality, target.quality, "quality");
    total = add(total, term(pred.cos2t, target.cos2t, "cos2t"));
    total = add(total, term(pred.sin2t, target.sin2t, "sin2t"));
    return add(total, term(pred.width, target.width, "width"));
}

// ---------------------------------------------------------------------------
// Configuration

std::string TrainConfig::to_json() const {
    json j;
    j["model"] = json::parse(model.to_json());
    j["train"] = {{"epochs", epochs},
                  {"batch_size", batch_size},
                  {"lr", lr},
                  {"momentum", momentum},
                  {"grad_clip", grad_clip},
                  {"warmup_steps", warmup_steps},
                  {"augment", augment},
                  {"seed", seed}};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig c;
    try {
        const auto j = json::parse(text);
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
        if (j.contains("train")) {
            const auto& t = j.at("train");
            c.epochs = t.value("epochs", c.epochs);
            c.batch_size = t.value("batch_size", c.batch_size);
            c.lr = t.value("lr", c.lr);
            c.momentum = t.value("momentum", c.momentum);
            c.grad_clip = t.value("grad_clip", c.grad_clip);
            c.warmup_steps = t.value("warmup_steps", c.warmup_steps);
            c.augment = t.value("augment", c.augment);
            c.seed = t.value("seed", c.seed);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    if (c.batch_size == 0) throw ArgumentError("train config: batch_size must be positive");
    if (!(c.lr >= 0.0) || !(c.momentum >= 0.0 && c.momentum < 1.0)) {
        throw ArgumentError("train config: need lr >= 0 and momentum in [0, 1)");
    }
    return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Training

namespace {

Augmented flip(const Augmented& in) {
    const std::size_t c = in.image.dim(0), h = in.image.dim(1), w = in.image.dim(2);
    auto src = in.image.data();
    std::vector<double> out(src.size());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
    Augmented r{Tensor::from_data(in.image.shape(), std::move(out)), in.grasps};
    for (auto& g : r.grasps) {
        g.x = static_cast<double>(w - 1) - g.x;
        g.theta = normalize_angle(-g.theta);
    }
    return r;
}

Augmented quarter_turn(const Augmented& in) {
    const std::size_t c = in.image.dim(0), s = in.image.dim(1);
    auto src = in.image.data();
    std::vector<double> out(src.size());
    // (x, y) -> (y, S - 1 - x), so output (x', y') reads (S - 1 - y', x').
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t yo = 0; yo < s; ++yo)
            for (std::size_t xo = 0; xo < s; ++xo)
                out[(ch * s + yo) * s + xo] = src[(ch * s + xo) * s + (s - 1 - yo)];
    Augmented r{Tensor::from_data(in.image.shape(), std::move(out)), in.grasps};
    for (auto& g : r.grasps) {
        const double x = g.x;
        g.x = g.y;
        g.y = static_cast<double>(s - 1) - x;
        g.theta = normalize_angle(g.theta - std::numbers::pi / 2);
    }
    return r;
}

}  // namespace

Augmented dihedral(const Tensor& image, const std::vector<GraspRect>& grasps, int transform) {
    if (transform < 0 || transform > 7) throw ArgumentError("dihedral: transform must be 0..7");
    if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
        throw ShapeError("dihedral: expected a square [C, S, S] image, got " +
                         shape_str(image.shape()));
    }
    Augmented r{image, grasps};
    if (transform >= 4) r = flip(r);
    for (int i = 0; i < transform % 4; ++i) r = quarter_turn(r);
    return r;
}

Tensor stack_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw ShapeError("stack_images: no images");
    const Shape s = images[0].shape();
    if (s.size() != 3) throw ShapeError("stack_images: expected [3, H, W], got " + shape_str(s));
    std::vector<double> data;
    data.reserve(images.size() * images[0].numel());
    for (const auto& im : images) {
        if (im.shape() != s) throw ShapeError("stack_images: images differ in shape");
        auto d = im.data();
        data.insert(data.end(), d.begin(), d.end());
    }
    return Tensor::from_data({images.size(), s[0], s[1], s[2]}, std::move(data));
}

TrainResult train(const TrainConfig& config, const std::vector<data::Sample>& dataset,
                  const EpochLogger& log) {
    std::vector<const data::Sample*> seen;
    for (const auto& s : dataset)
        if (s.split == data::Split::seen) seen.push_back(&s);
    if (seen.empty()) throw ArgumentError("train: the dataset has no seen-split samples");

    TrainResult result{make_model(config.model), {}};
    GraspModel& model = result.model;

    std::vector<head::GraspMaps> targets;
    for (const auto* s : seen) {
        targets.push_back(head::encode_targets(s->grasps, s->image.dim(1), s->image.dim(2),
                                               config.model.w_max));
    }

    auto params = model.parameters();
    std::vector<std::vector<double>> velocity;
    for (auto& [name, t] : params) velocity.emplace_back(t.numel(), 0.0);

    const std::size_t n = seen.size(), bs = config.batch_size;
    const std::size_t steps_per_epoch = (n + bs - 1) / bs;
    const double total_steps = static_cast<double>(config.epochs * steps_per_epoch);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(config.seed, epoch));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < n; start += bs, ++step) {
            const std::size_t end = std::min(n, start + bs);
            std::vector<Tensor> images;
            std::vector<std::string> prompts;
            std::vector<head::GraspMaps> batch_targets;
            for (std::size_t i = start; i < end; ++i) {
                const data::Sample& s = *seen[order[i]];
                prompts.push_back(s.prompt);
                if (config.augment) {
                    const auto a = dihedral(s.image, s.grasps, static_cast<int>(rng.below(8)));
                    images.push_back(a.image);
                    batch_targets.push_back(head::encode_targets(
                        a.grasps, s.image.dim(1), s.image.dim(2), config.model.w_max));
                } else {
                    images.push_back(s.image);
                    batch_targets.push_back(targets[order[i]]);
                }
            }
            const auto pred = model.forward(stack_images(images), prompts);
            const Tensor loss = loss_fn(pred, head::stack_maps(batch_targets));
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
            }
            epoch_sum += value;
            backward(loss);

            double lr = config.lr * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                        total_steps));
            if (step < config.warmup_steps) {
                lr *= static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
            }
            std::vector<std::vector<double>> grads;
            double norm_sq = 0.0;
            for (auto& [name, t] : params) {
                grads.push_back(t.grad());
                for (double g : grads.back()) norm_sq += g * g;
            }
            const double norm = std::sqrt(norm_sq);
            const double clip = config.grad_clip > 0.0 && norm > config.grad_clip
                                    ? config.grad_clip / norm
                                    : 1.0;
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& t = params[p].second;
                const auto& g = grads[p];
                auto w = t.mutable_data();
                auto& v = velocity[p];
                for (std::size_t i = 0; i < w.size(); ++i) {
                    v[i] = config.momentum * v[i] + clip * g[i];
                    w[i] = static_cast<double>(static_cast<float>(w[i] - lr * v[i]));
                }
                t.zero_grad();
            }
        }
        const double mean_loss = epoch_sum / static_cast<double>(steps_per_epoch);
        result.epoch_loss.push_back(mean_loss);
        if (log) log(epoch, mean_loss);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'G', 'M', 'V', '1'};
constexpr int kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ParsedCheckpoint {
    json header;
    std::size_t payload_start = 0;
};

ParsedCheckpoint parse_checkpoint(const std::string& bytes, const std::filesystem::path& path) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw LoadError(path.string() + " is not a GMV1 checkpoint (bad magic)");
    }
    const std::uint64_t header_len = get_u64(bytes, 4);
    if (header_len > bytes.size() - 12) throw LoadError(path.string() + ": truncated header");
    ParsedCheckpoint p;
    try {
        p.header = json::parse(bytes.substr(12, header_len));
    } catch (const json::exception& e) {
        throw LoadError(path.string() + ": unreadable header: " + e.what());
    }
    if (p.header.value("version", -1) != kVersion) {
        throw LoadError(path.string() + ": unsupported checkpoint version");
    }
    p.payload_start = 12 + header_len;
    return p;
}

}  // namespace

void save_checkpoint(GraspModel& model, const std::filesystem::path& path) {
    json manifest = json::array();
    std::string payload;
    model.visit([&](const std::string& name, Tensor& t) {
        manifest.push_back({{"name", name},
                            {"dtype", "f32"},
                            {"shape", t.shape()},
                            {"offset", payload.size()}});
        for (double v : t.data()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int i = 0; i < 4; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    });
    json header{{"version", kVersion},
                {"config", json::parse(model.config.to_json())},
                {"seed", model.config.seed},
                {"tensors", manifest}};
    const std::string header_text = header.dump();
    std::string out(kMagic, 4);
    put_u64(out, header_text.size());
    out += header_text;
    out += payload;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void load_checkpoint_into(const std::filesystem::path& path, GraspModel& model) {
    const std::string bytes = read_file(path);
    const auto parsed = parse_checkpoint(bytes, path);
    std::map<std::string, json> manifest;
    for (const auto& entry : parsed.header.at("tensors"))
        manifest[entry.at("name").get<std::string>()] = entry;

    model.visit([&](const std::string& name, Tensor& t) {
        const auto it = manifest.find(name);
        if (it == manifest.end()) throw LoadError(path.string() + ": missing tensor " + name);
        const Shape stored = it->second.at("shape").get<Shape>();
        if (stored != t.shape()) {
            throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(stored) +
                             " but the model expects " + shape_str(t.shape()));
        }
        if (it->second.value("dtype", "") != "f32") {
            throw LoadError(path.string() + ": tensor " + name + " is not f32");
        }
        const std::size_t offset = parsed.payload_start + it->second.at("offset").get<std::size_t>();
        if (offset + 4 * t.numel() > bytes.size()) {
            throw LoadError(path.string() + ": truncated payload for tensor " + name);
        }
        auto w = t.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(
                            static_cast<unsigned char>(bytes[offset + 4 * i + b]))
                        << (8 * b);
            w[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
    });
}

GraspModel load_checkpoint(const std::filesystem::path& path) {
    const auto parsed = parse_checkpoint(read_file(path), path);
    GraspModel model = make_model(ModelConfig::from_json(parsed.header.at("config").dump()));
    load_checkpoint_into(path, model);
    return model;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

InferResult infer(const GraspModel& model, const Tensor& image, const std::string& prompt,
                  int k) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("infer: expected a [3, H, W] image, got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0) {
        throw ShapeError("infer: image dims " + std::to_string(h) + "x" + std::to_string(w) +
                         " are not multiples of 32");
    }
    NoGradGuard no_grad;
    const auto maps = model.forward(reshape(image, {1, 3, h, w}), {prompt});
    InferResult r;
    r.grasps = head::decode_grasps(maps, k, model.config.w_max, model.decode_options());
    r.heatmap = colormap(maps.quality.data(), h, w);
    return r;
}

geometry::EvalReport evaluate_model(const GraspModel& model,
                                    const std::vector<data::Sample>& samples) {
    std::vector<geometry::EvalItem> items;
    for (const auto& s : samples) items.push_back({s.split, s.grasps});
    return geometry::evaluate(items, [&](std::size_t i) -> std::optional<GraspRect> {
        const auto r = infer(model, samples[i].image, samples[i].prompt, 1);
        if (r.grasps.empty()) return std::nullopt;
        return r.grasps.front().rect;
    });
}

std::string grasps_json(const std::vector<head::ScoredGrasp>& grasps) {
    json out = json::array();
    for (const auto& g : grasps) {
        out.push_back({{"x", g.rect.x},
                       {"y", g.rect.y},
                       {"w", g.rect.w},
                       {"h", g.rect.h},
                       {"theta", g.rect.theta},
                       {"quality", g.quality}});
    }
    return out.dump(2);
}

// ---------------------------------------------------------------------------
// Benchmark

std::string bench_mode_name(BenchMode mode) {
    switch (mode) {
        case BenchMode::scan: return "scan";
        case BenchMode::conv: return "conv";
        case BenchMode::attention: return "attention";
    }
    return "?";
}

BenchMode parse_bench_mode(const std::string& name) {
    for (auto m : {BenchMode::scan, BenchMode::conv, BenchMode::attention})
        if (bench_mode_name(m) == name) return m;
    throw ArgumentError("unknown benchmark mode \"" + name + "\"");
}

std::vector<BenchRow> benchmark_scan(const std::vector<long>& lengths,
                                     const std::vector<BenchMode>& modes,
                                     const BenchOptions& options) {
    NoGradGuard no_grad;
    Rng rng(options.seed);
    const std::size_t d = options.channels;
    const auto params = ssm::init_params(d, options.state_size, rng);
    const auto disc = ssm::discretize(params);

    auto random = [&](Shape shape) {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = rng.normal();
        return Tensor::from_data(std::move(shape), std::move(v));
    };

    struct Cell {
        Tensor x, q, k;
        long len;
        int calls = 1;
        std::vector<double> times;
    };
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    auto run = [&](BenchMode mode, const Cell& c) {
        switch (mode) {
            case BenchMode::scan: return ssm::scan(disc, params.c, c.x);
            case BenchMode::conv: return ssm::conv_apply(c.x, ssm::ssm_kernel(disc, params.c, c.len));
            case BenchMode::attention:
                return matmul(softmax_last(scale(matmul(c.q, transpose_last2(c.k)), inv)), c.x);
        }
        return Tensor();
    };
    auto elapsed = [](auto t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    std::vector<BenchRow> rows;
    for (auto mode : modes) {
        std::vector<Cell> cells;
        for (long len : lengths) {
            if (len <= 0) throw ArgumentError("benchmark_scan: lengths must be positive");
            const std::size_t l = static_cast<std::size_t>(len);
            Cell c{random({1, l, d}), random({1, l, d}), random({1, l, d}), len};
            // Warmup also calibrates how many calls one timed sample needs to
            // last at least min_seconds.
            double warm = 0.0;
            for (int i = 0; i < std::max(1, options.warmup); ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                run(mode, c);
                warm = elapsed(t0);
            }
            c.calls = std::max(1, static_cast<int>(std::ceil(options.min_seconds / std::max(warm, 1e-9))));
            cells.push_back(std::move(c));
        }
        // Lengths are interleaved within each repeat so that machine-wide
        // slowdowns affect all of them alike.
        for (int r = 0; r < std::max(1, options.repeats); ++r) {
            for (auto& c : cells) {
                const auto t0 = std::chrono::steady_clock::now();
                for (int i = 0; i < c.calls; ++i) run(mode, c);
                c.times.push_back(elapsed(t0) / c.calls);
            }
        }
        for (auto& c : cells) {
            std::sort(c.times.begin(), c.times.end());
            rows.push_back({mode, c.len, c.times[c.times.size() / 2]});
        }
    }
    return rows;
}

std::string bench_json(const std::vector<BenchRow>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"mode", bench_mode_name(r.mode)}, {"L", r.length}, {"seconds", r.seconds}});
    return out.dump(2);
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    char line[96];
    std::snprintf(line, sizeof(line), "%-10s %8s %14s\n", "mode", "L", "median_ms");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-10s %8ld %14.3f\n", bench_mode_name(r.mode).c_str(),
                      r.length, r.seconds * 1e3);
        out << line;
    }
    return out.str();
}

}  // namespace graspmamba::harness
