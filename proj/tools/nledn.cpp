// nledn: synthesize rain data, train, infer, evaluate, describe models,
// and run finite-difference gradient checks from one binary.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nledn/checkpoint.hpp"
#include "nledn/config_file.hpp"
#include "nledn/data.hpp"
#include "nledn/gradcheck.hpp"
#include "nledn/metrics.hpp"
#include "nledn/model.hpp"
#include "nledn/runtime.hpp"
#include "nledn/training.hpp"

namespace fs = std::filesystem;
using namespace nledn;

namespace {

// flag-level problems detected after CLI11 parsing; mapped to exit code 1
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SynthArgs {
    std::string clean_dir;
    std::string out_dir;
    int count = 8;
    std::uint64_t seed = 0;
    RainParams rain;
};

int cmd_synth(const SynthArgs& args) {
    const auto cleans = list_pngs(args.clean_dir);
    if (cleans.empty()) throw Error("synth: no PNG files in " + args.clean_dir);

    fs::create_directories(fs::path(args.out_dir) / "rainy");
    fs::create_directories(fs::path(args.out_dir) / "clean");

    std::ofstream manifest(fs::path(args.out_dir) / "manifest.tsv");
    if (!manifest) throw Error("synth: cannot write manifest under " + args.out_dir);
    manifest << "id\tseed\tstreak_count\tangle\n";

    for (int i = 0; i < args.count; ++i) {
        const std::string& src = cleans[static_cast<std::size_t>(i) % cleans.size()];
        Tensor clean = load_image(src);

        RainParams params = args.rain;
        params.seed = hash_seed(args.seed, static_cast<std::uint64_t>(i));
        const SynthResult result = synth_rain(clean, params);

        char id[16];
        std::snprintf(id, sizeof(id), "%04d", i);
        save_image(result.pair.rainy, (fs::path(args.out_dir) / "rainy" / (std::string(id) + ".png")).string());
        save_image(result.pair.clean, (fs::path(args.out_dir) / "clean" / (std::string(id) + ".png")).string());
        manifest << id << "\t" << params.seed << "\t" << params.streak_count << "\t"
                 << result.angle_deg << "\n";
    }
    std::cout << "wrote " << args.count << " pairs to " << args.out_dir << "\n";
    return 0;
}

struct TrainArgs {
    std::string data_root;
    std::string out_dir;
    std::string config_path;
    std::string variant;
    bool resume = false;
    // flag overrides applied after the config file (flags win)
    std::vector<std::string> overrides;
    long max_steps = -1;
    long checkpoint_every = -1;
    std::int64_t seed = -1;
};

void merge_train_config(const TrainArgs& args, ModelConfig& model, TrainConfig& train) {
    if (!args.config_path.empty()) {
        apply_config(read_config_file(args.config_path), model, train);
    }
    std::map<std::string, std::string> kv;
    for (const auto& o : args.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
        kv[o.substr(0, eq)] = o.substr(eq + 1);
    }
    apply_config(kv, model, train);
    if (args.max_steps >= 0) train.max_steps = args.max_steps;
    if (args.checkpoint_every >= 0) train.checkpoint_every = args.checkpoint_every;
    if (args.seed >= 0) {
        train.seed = static_cast<std::uint64_t>(args.seed);
        model.seed = train.seed;
    }
    if (!args.variant.empty()) {
        Variant v;
        if (!parse_variant(args.variant, v)) {
            throw UsageError("unknown variant '" + args.variant + "' (expected Ra..Rf)");
        }
        model = apply_variant(model, v);
    }
}

int cmd_train(const TrainArgs& args) {
    ModelConfig model_cfg;
    TrainConfig train_cfg;

    const fs::path saved_cfg = fs::path(args.out_dir) / "config.txt";
    if (args.resume) {
        if (!fs::exists(saved_cfg)) {
            throw Error("--resume: no config.txt in " + args.out_dir);
        }
        apply_config(read_config_file(saved_cfg.string()), model_cfg, train_cfg);
        if (args.max_steps >= 0) train_cfg.max_steps = args.max_steps;
        if (args.checkpoint_every >= 0) train_cfg.checkpoint_every = args.checkpoint_every;
    } else {
        merge_train_config(args, model_cfg, train_cfg);
    }
    model_cfg.validate();
    train_cfg.validate();

    Dataset ds = Dataset::open(args.data_root);
    std::vector<ImagePair> pairs;
    pairs.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) pairs.push_back(ds.load(i));

    NlednModel model = args.resume
                           ? load_checkpoint((fs::path(args.out_dir) / "model.ckpt").string())
                           : NlednModel(model_cfg);
    if (args.resume && !(model.config.seed == model_cfg.seed &&
                         count_parameters(model.config) == count_parameters(model_cfg))) {
        throw Error("--resume: checkpoint config does not match config.txt");
    }

    fs::create_directories(args.out_dir);
    {
        std::ofstream f(saved_cfg);
        f << config_to_text(model_cfg, train_cfg);
    }

    std::cout << "training " << (args.variant.empty() ? "model" : args.variant) << ": "
              << model.parameter_count() << " parameters, " << pairs.size() << " pairs, "
              << train_cfg.max_steps << " steps\n";

    auto result = train_loop(model, pairs, train_cfg, args.out_dir, args.resume,
                             [](const StepInfo& s) {
                                 if (s.step % 100 == 0) {
                                     std::cout << "step " << s.step << "  loss " << s.loss
                                               << "  lr " << s.lr << "\n";
                                 }
                             });
    std::cout << "done: " << result.steps << " steps, final loss " << result.final_loss
              << ", checkpoint " << result.checkpoint_path << "\n";
    return 0;
}

struct InferArgs {
    std::string ckpt;
    std::string input;
    std::string out_dir;
    bool dump_rainmap = false;
};

int cmd_infer(const InferArgs& args) {
    const NlednModel model = load_checkpoint(args.ckpt);

    std::vector<std::string> inputs;
    if (fs::is_directory(args.input)) {
        inputs = list_pngs(args.input);
        if (inputs.empty()) throw Error("infer: no PNG files in " + args.input);
    } else if (fs::exists(args.input)) {
        inputs.push_back(args.input);
    } else {
        throw Error("infer: no such input " + args.input);
    }
    fs::create_directories(args.out_dir);

    for (const auto& path : inputs) {
        const Tensor raw = load_image(path);
        const Padding pad = pad_to_multiple_of_8(raw.dim(1), raw.dim(2));
        const Tensor padded = pad.any() ? reflect_pad(raw, pad) : raw;

        Tensor rain;
        Tensor restored = infer_image(model, padded, &rain);
        if (pad.any()) {
            restored = crop(restored, pad);
            rain = crop(rain, pad);
        }

        const std::string stem = fs::path(path).stem().string();
        save_image(restored, (fs::path(args.out_dir) / (stem + ".png")).string());
        if (args.dump_rainmap) {
            // map (-1,1) -> [0,1] for viewing
            Tensor vis(rain.shape);
            for (std::int64_t i = 0; i < rain.numel(); ++i) vis[i] = (rain[i] + 1.0f) / 2.0f;
            save_image(vis, (fs::path(args.out_dir) / (stem + ".rain.png")).string());
        }
        std::cout << stem << ": restored " << restored.dim(2) << "x" << restored.dim(1) << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string ckpt;
    std::string rainy_dir;
    std::string pred_dir;
    std::string gt_dir;
    std::string out_path;
};

int cmd_eval(const EvalArgs& args) {
    const bool from_ckpt = !args.ckpt.empty();
    if (from_ckpt == !args.pred_dir.empty()) {
        throw UsageError("eval: provide either --ckpt with --in, or --pred-dir");
    }
    if (from_ckpt && args.rainy_dir.empty()) {
        throw UsageError("eval: --ckpt requires --in pointing at the rainy images");
    }

    const std::string src_dir = from_ckpt ? args.rainy_dir : args.pred_dir;
    const auto srcs = list_pngs(src_dir);
    if (srcs.empty()) throw Error("eval: no PNG files in " + src_dir);

    std::vector<std::string> unpaired;
    struct Item {
        std::string id, src, gt;
    };
    std::vector<Item> items;
    for (const auto& s : srcs) {
        const std::string id = fs::path(s).stem().string();
        const fs::path gt = fs::path(args.gt_dir) / (id + ".png");
        if (fs::exists(gt)) {
            items.push_back({id, s, gt.string()});
        } else {
            unpaired.push_back(id);
        }
    }
    if (!unpaired.empty()) {
        std::string msg = "eval: no ground truth for:";
        for (const auto& id : unpaired) msg += " " + id;
        throw Error(msg);
    }

    std::unique_ptr<NlednModel> model;
    if (from_ckpt) model = std::make_unique<NlednModel>(load_checkpoint(args.ckpt));

    EvalReport report;
    report.entries.resize(items.size());
    parallel_for(static_cast<int>(items.size()), [&](int i) {
        const Item& item = items[static_cast<std::size_t>(i)];
        Tensor pred;
        if (from_ckpt) {
            const Tensor rainy = load_image(item.src);
            const Padding pad = pad_to_multiple_of_8(rainy.dim(1), rainy.dim(2));
            const Tensor padded = pad.any() ? reflect_pad(rainy, pad) : rainy;
            pred = infer_image(*model, padded);
            if (pad.any()) pred = crop(pred, pad);
        } else {
            pred = load_image(item.src);
        }
        const Tensor gt = load_image(item.gt);
        const Tensor py = rgb_to_y(pred);
        const Tensor gy = rgb_to_y(gt);
        report.entries[static_cast<std::size_t>(i)] = {item.id, psnr(py, gy), ssim(py, gy)};
    });
    report.finalize();
    if (report.skipped_infinite > 0) {
        std::cerr << "warning: " << report.skipped_infinite
                  << " identical pair(s) reported as inf and excluded from mean PSNR\n";
    }

    const std::string tsv = report.to_tsv();
    if (args.out_path.empty()) {
        std::cout << tsv;
    } else {
        std::ofstream f(args.out_path);
        if (!f) throw Error("eval: cannot write " + args.out_path);
        f << tsv;
        std::cout << "wrote " << args.out_path << "\n";
    }
    return 0;
}

struct DescribeArgs {
    std::string config_path;
    std::string ckpt;
    std::string variant;
};

int cmd_describe(const DescribeArgs& args) {
    ModelConfig cfg;
    TrainConfig train_cfg;
    if (!args.ckpt.empty()) {
        cfg = load_checkpoint(args.ckpt).config;
    } else if (!args.config_path.empty()) {
        apply_config(read_config_file(args.config_path), cfg, train_cfg);
    }
    if (!args.variant.empty()) {
        Variant v;
        if (!parse_variant(args.variant, v)) {
            throw UsageError("unknown variant '" + args.variant + "' (expected Ra..Rf)");
        }
        cfg = apply_variant(cfg, v);
    }
    cfg.validate();

    NlednModel model(cfg);
    std::cout << "configuration:\n" << config_to_text(cfg, train_cfg) << "\n";
    std::cout << "parameters:\n";
    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        std::cout << "  " << model.name(i) << "  " << shape_str(model.tensor(i)->shape) << "  "
                  << model.tensor(i)->numel() << "\n";
    }
    std::cout << "total parameters:       " << model.parameter_count() << "\n";
    std::cout << "closed-form count:      " << count_parameters(cfg) << "\n";
    return 0;
}

struct GradcheckArgs {
    std::string scale = "micro";
    std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    bool all_pass = true;

    auto print = [&](const gradcheck::KernelReport& r) {
        all_pass = all_pass && r.pass();
        std::printf("%-26s rel_err %.3e  tol %.0e  entries %-6lld %s\n", r.name.c_str(),
                    r.max_rel_err, r.tolerance, static_cast<long long>(r.entries),
                    r.pass() ? "ok" : "FAIL");
    };

    for (const auto& r : gradcheck::run_kernel_suite(args.seed)) print(r);

    const int size = args.scale == "small" ? 24 : 16;
    print(gradcheck::run_end_to_end(args.seed, size, 32));

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("gradcheck %s in %.1fs\n", all_pass ? "passed" : "FAILED", elapsed);
    return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NLEDN rain-streak removal toolkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic rainy/clean dataset");
    synth->add_option("--clean-dir", synth_args.clean_dir, "Directory of clean PNGs")->required();
    synth->add_option("--out-dir", synth_args.out_dir, "Output dataset root")->required();
    synth->add_option("--count", synth_args.count, "Number of pairs to generate");
    synth->add_option("--seed", synth_args.seed, "Master seed");
    synth->add_option("--streaks", synth_args.rain.streak_count, "Streaks per image");
    synth->add_option("--angle-min", synth_args.rain.angle_min_deg, "Min streak angle (deg)");
    synth->add_option("--angle-max", synth_args.rain.angle_max_deg, "Max streak angle (deg)");
    synth->add_option("--len-min", synth_args.rain.length_min, "Min streak length (px)");
    synth->add_option("--len-max", synth_args.rain.length_max, "Max streak length (px)");
    synth->add_option("--width-min", synth_args.rain.sigma_min, "Min streak sigma (px)");
    synth->add_option("--width-max", synth_args.rain.sigma_max, "Max streak sigma (px)");
    synth->add_option("--intensity-min", synth_args.rain.intensity_min, "Min added brightness");
    synth->add_option("--intensity-max", synth_args.rain.intensity_max, "Max added brightness");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--data", train_args.data_root, "Dataset root (rainy/ + clean/)")
        ->required();
    train->add_option("--out", train_args.out_dir, "Output directory")->required();
    train->add_option("--config", train_args.config_path, "key = value config file");
    train->add_option("--variant", train_args.variant, "Ablation variant Ra..Rf");
    train->add_flag("--resume", train_args.resume, "Continue from --out's checkpoint");
    train->add_option("--set", train_args.overrides, "Override config entries (key=value)");
    train->add_option("--max-steps", train_args.max_steps, "Override max_steps");
    train->add_option("--checkpoint-every", train_args.checkpoint_every,
                      "Override checkpoint cadence");
    train->add_option("--seed", train_args.seed, "Override seed");

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "De-rain images with a checkpoint");
    infer->add_option("--ckpt", infer_args.ckpt, "Checkpoint file")->required();
    infer->add_option("--in", infer_args.input, "Input PNG or directory")->required();
    infer->add_option("--out", infer_args.out_dir, "Output directory")->required();
    infer->add_flag("--dump-rainmap", infer_args.dump_rainmap,
                    "Also write (R+1)/2 visualizations");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM report (luminance channel)");
    eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint (computes predictions)");
    eval->add_option("--in", eval_args.rainy_dir, "Rainy input dir (with --ckpt)");
    eval->add_option("--pred-dir", eval_args.pred_dir, "Precomputed prediction dir");
    eval->add_option("--gt-dir", eval_args.gt_dir, "Ground-truth dir")->required();
    eval->add_option("--out", eval_args.out_path, "Write TSV here instead of stdout");

    DescribeArgs describe_args;
    auto* describe = app.add_subcommand("describe", "Print architecture and parameter counts");
    describe->add_option("--config", describe_args.config_path, "key = value config file");
    describe->add_option("--ckpt", describe_args.ckpt, "Checkpoint file");
    describe->add_option("--variant", describe_args.variant, "Ablation variant Ra..Rf");

    GradcheckArgs gradcheck_args;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gc->add_option("--scale", gradcheck_args.scale, "micro | small")
        ->check(CLI::IsMember({"micro", "small"}));
    gc->add_option("--seed", gradcheck_args.seed, "Seed for random inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (const char* env = std::getenv("NLEDN_THREADS")) {
        try {
            set_runtime_threads(std::stoi(env));
        } catch (...) {
            std::cerr << "warning: ignoring invalid NLEDN_THREADS='" << env << "'\n";
        }
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args);
        if (infer->parsed()) return cmd_infer(infer_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (describe->parsed()) return cmd_describe(describe_args);
        if (gc->parsed()) return cmd_gradcheck(gradcheck_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
