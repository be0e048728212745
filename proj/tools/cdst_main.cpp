// cdst: command-line surface over the library. One process per invocation;
// every command is deterministic given identical flags and seeds.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdst/calibrate.hpp"
#include "cdst/colorlab.hpp"
#include "cdst/edges.hpp"
#include "cdst/png_io.hpp"
#include "cdst/workflows.hpp"
#include "json.hpp"

namespace {

using namespace cdst;
using nlohmann::json;

std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r");
        line = line.substr(a, b - a + 1);
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        auto trim = [](std::string s) {
            size_t x = s.find_first_not_of(" \t");
            size_t y = s.find_last_not_of(" \t");
            return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": empty key or value");
        kv[key] = val;
    }
    return kv;
}

double get_num(const std::map<std::string, std::string>& kv, const std::string& key,
               double fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stod(it->second);
}

std::string get_str(const std::map<std::string, std::string>& kv, const std::string& key,
                    const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

WorkflowPreset preset_from(const std::map<std::string, std::string>& kv) {
    WorkflowPreset p;
    p.style_weight = get_num(kv, "style_weight", p.style_weight);
    p.color_weight = get_num(kv, "color_weight", p.color_weight);
    p.controlnet_weight = get_num(kv, "controlnet_weight", p.controlnet_weight);
    p.content_prior_strength = get_num(kv, "content_prior_strength", p.content_prior_strength);
    p.cfg_scale = get_num(kv, "cfg_scale", p.cfg_scale);
    p.steps = static_cast<size_t>(get_num(kv, "steps", static_cast<double>(p.steps)));
    p.gcc_alpha = get_num(kv, "gcc_alpha", p.gcc_alpha);
    p.cp_color_weight = get_num(kv, "cp_color_weight", p.cp_color_weight);
    p.validate();
    return p;
}

json preset_json(const WorkflowPreset& p) {
    return {{"style_weight", p.style_weight},
            {"color_weight", p.color_weight},
            {"controlnet_weight", p.controlnet_weight},
            {"content_prior_strength", p.content_prior_strength},
            {"cfg_scale", p.cfg_scale},
            {"steps", p.steps},
            {"gcc_alpha", p.gcc_alpha},
            {"cp_color_weight", p.cp_color_weight}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << text;
}

ColorHistogram read_histogram(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open histogram: " + path);
    json j = json::parse(in);
    ColorHistogram h;
    h.palette_version = j.at("palette_version").get<std::string>();
    h.bins = j.at("bins").get<std::vector<double>>();
    return h;
}

int cmd_histogram(const std::string& img_path, const std::string& out_path,
                  const std::string& palette_version) {
    Palette pal = build_palette(palette_version);
    ColorHistogram h = extract_histogram(read_png(img_path), pal);
    json j{{"palette_version", h.palette_version}, {"bins", h.bins}};
    write_text(out_path, j.dump(2) + "\n");
    return 0;
}

int cmd_distance(const std::string& a_path, const std::string& b_path) {
    double d = color_distance(read_histogram(a_path), read_histogram(b_path));
    std::printf("%g\n", d);
    return 0;
}

int cmd_calibrate(const std::string& img_path, const std::string& ref_path, double alpha,
                  const std::string& out_path) {
    ImageBuffer out =
        global_color_calibration(read_png(img_path), read_png(ref_path), alpha);
    write_png(out, out_path);
    return 0;
}

int cmd_greyscale(const std::string& img_path, const std::string& out_path) {
    write_png(greyscale(read_png(img_path)), out_path);
    return 0;
}

int cmd_canny(const std::string& img_path, const CannyParams& params,
              const std::string& out_path) {
    write_png(canny(read_png(img_path), params), out_path);
    return 0;
}

int cmd_layout(const std::string& preset) {
    if (preset != "sdxl") throw std::runtime_error("unknown layout preset: " + preset);
    BlockRegistry reg = build_sdxl_layout();
    InjectionPolicy pol = cdst_inference_policy(reg);
    std::printf("# block  section  lambda_s  lambda_c  style\n");
    for (size_t i = 0; i < reg.total; ++i) {
        const char* section = i < reg.encoder_range.second   ? "encoder"
                              : i < reg.middle_range.second ? "middle"
                                                            : "decoder";
        std::printf("%6zu  %-7s  %8.2f  %8.2f  %s\n", i, section, pol.lambda_s[i],
                    pol.lambda_c[i], pol.style_active[i] ? "on" : "off");
    }
    return 0;
}

int cmd_train(const std::string& config_path) {
    auto kv = read_config(config_path);
    TrainConfig cfg;
    cfg.steps = static_cast<size_t>(get_num(kv, "steps", static_cast<double>(cfg.steps)));
    cfg.batch = static_cast<size_t>(get_num(kv, "batch", static_cast<double>(cfg.batch)));
    cfg.grad_accum =
        static_cast<size_t>(get_num(kv, "grad_accum", static_cast<double>(cfg.grad_accum)));
    cfg.lr = get_num(kv, "lr", cfg.lr);
    cfg.weight_decay = get_num(kv, "weight_decay", cfg.weight_decay);
    cfg.text_dropout = get_num(kv, "text_dropout", cfg.text_dropout);
    cfg.seed = static_cast<uint64_t>(get_num(kv, "seed", static_cast<double>(cfg.seed)));
    cfg.validate();

    DatasetSpec ds;
    ds.count = static_cast<size_t>(get_num(kv, "dataset_count", 256));
    ds.seed = static_cast<uint64_t>(get_num(kv, "dataset_seed", 1));
    ds.size = static_cast<int>(get_num(kv, "dataset_size", 64));

    uint64_t frozen_seed = static_cast<uint64_t>(get_num(kv, "frozen_seed", 7));
    uint64_t init_seed = static_cast<uint64_t>(get_num(kv, "init_seed", 8));
    std::string ckpt = get_str(kv, "checkpoint", "model.ckpt");
    std::string loss_csv = get_str(kv, "loss_csv", "");

    CdstModel model(frozen_seed, init_seed);
    std::vector<TrainItem> items;
    for (const SynthSpec& s : sample_dataset(ds))
        items.push_back(
            make_train_item(model, gen_synthetic(s), static_cast<size_t>(s.family)));

    DiffusionSchedule sched = make_schedule();
    Trainer trainer(model, cfg, sched);
    std::vector<double> losses = trainer.run(items, loss_csv);
    model.save(ckpt);
    std::printf("trained %zu steps, final loss %.4f, checkpoint %s\n", losses.size(),
                losses.empty() ? 0.0 : losses.back(), ckpt.c_str());
    return 0;
}

int cmd_generate(const std::string& workflow, const std::string& style_path,
                 const std::string& color_path, const std::string& content_path,
                 size_t prompt_key, uint64_t seed, const std::string& config_path,
                 const std::string& checkpoint, const std::string& out_path) {
    WorkflowPreset preset =
        config_path.empty() ? WorkflowPreset{} : preset_from(read_config(config_path));
    std::map<std::string, std::string> kv =
        config_path.empty() ? std::map<std::string, std::string>{} : read_config(config_path);
    uint64_t frozen_seed = static_cast<uint64_t>(get_num(kv, "frozen_seed", 7));
    uint64_t init_seed = static_cast<uint64_t>(get_num(kv, "init_seed", 8));

    CdstModel model(frozen_seed, init_seed);
    if (!checkpoint.empty()) model.load(checkpoint);
    DiffusionSchedule sched = make_schedule();

    ImageBuffer style = read_png(style_path);
    ImageBuffer out;
    if (workflow == "scp") {
        out = style_color_prompt(model, sched, style, read_png(color_path), prompt_key,
                                 preset, seed);
    } else if (workflow == "scc") {
        out = style_color_content(model, sched, style, read_png(color_path),
                                  read_png(content_path), preset, seed);
    } else if (workflow == "cp") {
        out = characteristics_preserved(model, sched, style, read_png(content_path), preset,
                                        seed);
    } else {
        throw std::runtime_error("unknown workflow: " + workflow + " (want scp|scc|cp)");
    }
    write_png(out, out_path);

    json meta{{"workflow", workflow}, {"style", style_path},   {"seed", seed},
              {"checkpoint", checkpoint}, {"preset", preset_json(preset)}};
    // the color reference: cp measures against the content image
    meta["color"] = workflow == "cp" ? content_path : color_path;
    if (!content_path.empty()) meta["content"] = content_path;
    if (workflow == "scp") meta["prompt"] = prompt_key;
    write_text(out_path + ".json", meta.dump(2) + "\n");
    return 0;
}

int cmd_eval(const std::string& dir, const std::string& out_path) {
    namespace fs = std::filesystem;
    Palette pal = build_palette("default");
    std::vector<std::string> metas;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".json" &&
            entry.path().stem().extension() == ".png")
            metas.push_back(entry.path().string());
    std::sort(metas.begin(), metas.end());
    if (metas.empty()) throw std::runtime_error("no .png.json records under " + dir);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + out_path);
    for (const std::string& meta_path : metas) {
        std::ifstream in(meta_path);
        json meta = json::parse(in);
        std::string png_path = meta_path.substr(0, meta_path.size() - 5);
        ImageBuffer img = read_png(png_path);
        ImageBuffer ref = read_png(meta.at("color").get<std::string>());
        PairMetrics m = evaluate_pair(img, ref, pal);
        WorkflowPreset p;
        if (meta.contains("preset")) {
            const json& q = meta["preset"];
            p.style_weight = q.value("style_weight", p.style_weight);
            p.color_weight = q.value("color_weight", p.color_weight);
            p.controlnet_weight = q.value("controlnet_weight", p.controlnet_weight);
            p.content_prior_strength =
                q.value("content_prior_strength", p.content_prior_strength);
            p.cfg_scale = q.value("cfg_scale", p.cfg_scale);
            p.steps = q.value("steps", p.steps);
            p.gcc_alpha = q.value("gcc_alpha", p.gcc_alpha);
        }
        write_metrics_line(out, fs::path(png_path).filename().string(), m, p,
                           meta.value("seed", uint64_t{0}));
    }
    std::printf("wrote %zu records to %s\n", metas.size(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"color-disentangled style transfer toolkit"};
    app.require_subcommand(1);

    std::string img, ref, out, palette = "default";
    auto* c_hist = app.add_subcommand("histogram", "quantized color histogram of an image");
    c_hist->add_option("image", img)->required();
    c_hist->add_option("-o,--out", out)->required();
    c_hist->add_option("--palette", palette);

    std::string hist_a, hist_b;
    auto* c_dist = app.add_subcommand("distance", "L2 distance between two histograms");
    c_dist->add_option("a", hist_a)->required();
    c_dist->add_option("b", hist_b)->required();

    double alpha = 0.8;
    auto* c_cal = app.add_subcommand("calibrate", "global color calibration against a reference");
    c_cal->add_option("image", img)->required();
    c_cal->add_option("reference", ref)->required();
    c_cal->add_option("--alpha", alpha);
    c_cal->add_option("-o,--out", out)->required();

    auto* c_grey = app.add_subcommand("greyscale", "BT.601 luma of an image");
    c_grey->add_option("image", img)->required();
    c_grey->add_option("-o,--out", out)->required();

    CannyParams canny_params;
    auto* c_canny = app.add_subcommand("canny", "edge map of an image");
    c_canny->add_option("image", img)->required();
    c_canny->add_option("--low", canny_params.low);
    c_canny->add_option("--high", canny_params.high);
    c_canny->add_option("--sigma", canny_params.blur_sigma);
    c_canny->add_option("-o,--out", out)->required();

    std::string layout_preset = "sdxl";
    auto* c_layout = app.add_subcommand("layout", "print the cross-attention block table");
    c_layout->add_option("--preset", layout_preset);

    std::string config;
    auto* c_train = app.add_subcommand("train", "train the adapter on synthetic textures");
    c_train->add_option("--config", config)->required();

    std::string workflow, style_path, color_path, content_path, checkpoint;
    size_t prompt_key = 0;
    uint64_t seed = 0;
    auto* c_gen = app.add_subcommand("generate", "run a style transfer workflow");
    c_gen->add_option("--workflow", workflow, "scp | scc | cp")->required();
    c_gen->add_option("--style", style_path)->required();
    c_gen->add_option("--color", color_path);
    c_gen->add_option("--content", content_path);
    c_gen->add_option("--prompt", prompt_key);
    c_gen->add_option("--seed", seed);
    c_gen->add_option("--config", config);
    c_gen->add_option("--checkpoint", checkpoint);
    c_gen->add_option("-o,--out", out)->required();

    std::string eval_dir;
    auto* c_eval = app.add_subcommand("eval", "score generated images against their references");
    c_eval->add_option("--dir", eval_dir)->required();
    c_eval->add_option("-o,--out", out)->default_val("metrics.jsonl");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_hist->parsed()) return cmd_histogram(img, out, palette);
        if (c_dist->parsed()) return cmd_distance(hist_a, hist_b);
        if (c_cal->parsed()) return cmd_calibrate(img, ref, alpha, out);
        if (c_grey->parsed()) return cmd_greyscale(img, out);
        if (c_canny->parsed()) return cmd_canny(img, canny_params, out);
        if (c_layout->parsed()) return cmd_layout(layout_preset);
        if (c_train->parsed()) return cmd_train(config);
        if (c_gen->parsed())
            return cmd_generate(workflow, style_path, color_path, content_path, prompt_key,
                                seed, config, checkpoint, out);
        if (c_eval->parsed()) return cmd_eval(eval_dir, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "cdst: %s\n", e.what());
        return 1;
    }
    return 0;
}
