#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "graspmamba/data_synth.hpp"
#include "graspmamba/error.hpp"
#include "graspmamba/harness.hpp"
#include "graspmamba/image_io.hpp"

using namespace graspmamba;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path);
    out << text << '\n';
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GraspMamba: language-driven grasp detection on synthetic scenes"};
    app.require_subcommand(1);

    std::string out_dir;
    std::size_t scenes = 0, image_size = 224;
    std::uint64_t seed = 0;
    double split_ratio = 0.7;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--scenes", scenes, "Number of scenes")->required();
    gen->add_option("--seed", seed, "Generator seed")->required();
    gen->add_option("--image-size", image_size, "Square image size in pixels");
    gen->add_option("--split-ratio", split_ratio, "Fraction of seen categories");

    std::string data_dir, ckpt, config_file;
    std::size_t epochs = 0;
    bool no_fusion = false;
    auto* tr = app.add_subcommand("train", "Train on the seen split");
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--out", ckpt, "Checkpoint path")->required();
    tr->add_option("--epochs", epochs, "Epochs")->required();
    tr->add_option("--seed", seed, "Initialization and shuffling seed")->required();
    tr->add_option("--config", config_file, "JSON config")->required();
    tr->add_flag("--no-fusion", no_fusion, "Image-only pyramid without the text path");

    std::string report;
    auto* ev = app.add_subcommand("eval", "Top-1 success on seen and unseen splits");
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--ckpt", ckpt, "Checkpoint path")->required();
    ev->add_option("--report", report, "Report JSON path")->required();

    std::string image_path, prompt, heatmap, grasps_out;
    int topk = 1;
    auto* inf = app.add_subcommand("infer", "Detect grasps for a prompt");
    inf->add_option("--ckpt", ckpt, "Checkpoint path")->required();
    inf->add_option("--image", image_path, "Input PNG")->required();
    inf->add_option("--prompt", prompt, "Text prompt")->required();
    inf->add_option("--topk", topk, "Number of grasps");
    inf->add_option("--heatmap", heatmap, "Quality heatmap PNG")->required();
    inf->add_option("--grasps", grasps_out, "Grasp list JSON")->required();

    std::string lengths = "256,1024,4096", modes = "scan,conv,attention";
    auto* bench = app.add_subcommand("bench", "Sequence-mixer scaling benchmark");
    bench->add_option("--lengths", lengths, "Comma-separated sequence lengths");
    bench->add_option("--modes", modes, "Comma-separated modes: scan, conv, attention");
    bench->add_option("--report", report, "Report JSON path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            data::SceneConfig cfg;
            cfg.image_size = image_size;
            cfg.split_ratio = split_ratio;
            const auto samples = data::generate_dataset(scenes, seed, cfg);
            data::save_dataset(samples, out_dir);
            std::size_t n_seen = 0;
            for (const auto& s : samples) n_seen += s.split == data::Split::seen;
            std::printf("wrote %zu scenes (%zu seen, %zu unseen) to %s\n", samples.size(), n_seen,
                        samples.size() - n_seen, out_dir.c_str());
        } else if (*tr) {
            auto cfg = harness::TrainConfig::from_file(config_file);
            cfg.epochs = epochs;
            cfg.seed = seed;
            cfg.model.seed = seed;
            if (no_fusion) cfg.model.fusion = false;
            const auto samples = data::load_dataset(data_dir);
            auto result = harness::train(cfg, samples, [](std::size_t e, double loss) {
                std::printf("epoch %4zu  loss %.6f\n", e + 1, loss);
                std::fflush(stdout);
            });
            harness::save_checkpoint(result.model, ckpt);
            std::printf("saved %s (%zu parameters)\n", ckpt.c_str(),
                        result.model.parameter_count());
        } else if (*ev) {
            const auto model = harness::load_checkpoint(ckpt);
            const auto samples = data::load_dataset(data_dir);
            const auto r = harness::evaluate_model(model, samples);
            const std::string text = geometry::report_json(r);
            write_text(report, text);
            std::printf("%s\n", text.c_str());
        } else if (*inf) {
            const auto model = harness::load_checkpoint(ckpt);
            const auto image = image_to_tensor(read_png(image_path));
            const auto r = harness::infer(model, image, prompt, topk);
            write_png(heatmap, r.heatmap);
            write_text(grasps_out, harness::grasps_json(r.grasps));
            std::printf("%zu grasps written to %s\n", r.grasps.size(), grasps_out.c_str());
        } else if (*bench) {
            std::vector<long> ls;
            for (const auto& s : split_list(lengths)) ls.push_back(std::stol(s));
            std::sort(ls.begin(), ls.end());
            std::vector<harness::BenchMode> ms;
            for (const auto& s : split_list(modes)) ms.push_back(harness::parse_bench_mode(s));
            const auto rows = harness::benchmark_scan(ls, ms);
            write_text(report, harness::bench_json(rows));
            std::printf("%s", harness::bench_table(rows).c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
