#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "graspmamba/data_synth.hpp"
#include "graspmamba/geometry.hpp"
#include "graspmamba/grasp_head.hpp"
#include "graspmamba/image_io.hpp"
#include "graspmamba/model.hpp"

namespace graspmamba::harness {

/// Sum over the four maps of the mean smooth-L1 (delta = 1) error.
Tensor loss_fn(const head::GraspMaps& pred, const head::GraspMaps& target);

struct TrainConfig {
    ModelConfig model;
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    double lr = 1e-2;  // peak, cosine-decayed to 0 over all steps
    double momentum = 0.9;
    double grad_clip = 0.0;       // global gradient-norm cap, 0 disables
    std::size_t warmup_steps = 0; // linear ramp before the cosine decay
    bool augment = false;         // random dihedral transform per sample and epoch
    std::uint64_t seed = 0;       // batch order

    std::string to_json() const;
    // {"model": {...}, "train": {...}}; missing keys keep their defaults.
    static TrainConfig from_json(const std::string& text);
    static TrainConfig from_file(const std::filesystem::path& path);
};

struct TrainResult {
    GraspModel model;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

using EpochLogger = std::function<void(std::size_t epoch, double loss)>;

/// SGD with momentum on the seen samples only. Throws ArgumentError when there
/// are none and NumericError on a non-finite loss.
TrainResult train(const TrainConfig& config, const std::vector<data::Sample>& dataset,
                  const EpochLogger& log = {});

/// One of the 8 symmetries of the square: `transform` = 4 * flip + quarter
/// turns. Pixel (x, y) of the flipped image comes from (S - 1 - x, y); a
/// quarter turn moves (x, y) to (y, S - 1 - x). Grasps follow their pixels.
struct Augmented {
    Tensor image;
    std::vector<GraspRect> grasps;
};
Augmented dihedral(const Tensor& image, const std::vector<GraspRect>& grasps, int transform);

/// Stacks [3, H, W] images into [B, 3, H, W].
Tensor stack_images(const std::vector<Tensor>& images);

// Checkpoint: "GMV1", u64 LE header length, UTF-8 JSON header (version, config,
// tensor manifest with name/dtype/shape/offset), then f32 LE payloads.
void save_checkpoint(GraspModel& model, const std::filesystem::path& path);
GraspModel load_checkpoint(const std::filesystem::path& path);
/// Loads tensors into an existing model; a tensor whose stored shape differs
/// from the model's is a ShapeError naming it.
void load_checkpoint_into(const std::filesystem::path& path, GraspModel& model);

struct InferResult {
    std::vector<head::ScoredGrasp> grasps;
    RgbImage heatmap;  // quality map, input dims
};

InferResult infer(const GraspModel& model, const Tensor& image, const std::string& prompt,
                  int k);

/// Top-1 success on every sample, grouped by split.
geometry::EvalReport evaluate_model(const GraspModel& model,
                                    const std::vector<data::Sample>& samples);

std::string grasps_json(const std::vector<head::ScoredGrasp>& grasps);

enum class BenchMode { scan, conv, attention };
std::string bench_mode_name(BenchMode mode);
BenchMode parse_bench_mode(const std::string& name);

struct BenchOptions {
    std::size_t channels = 64;    // D
    std::size_t state_size = 16;  // N
    int warmup = 1;
    int repeats = 5;
    double min_seconds = 0.05;  // short calls are repeated within one sample
    std::uint64_t seed = 0;
};

struct BenchRow {
    BenchMode mode;
    long length;
    double seconds;  // per call, median over repeats
};

/// scan: recurrence; conv: kernel materialization plus causal convolution;
/// attention: single-head softmax(Q K^T / sqrt(D)) V.
std::vector<BenchRow> benchmark_scan(const std::vector<long>& lengths,
                                     const std::vector<BenchMode>& modes,
                                     const BenchOptions& options = {});
std::string bench_json(const std::vector<BenchRow>& rows);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace graspmamba::harness
