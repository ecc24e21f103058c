// Command-line front end: train, eval, predict, synth, gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "rmsd/gradcheck_suite.hpp"
#include "rmsd/train.hpp"

using namespace rmsd;
namespace fs = std::filesystem;

namespace {

int cmd_train(const fs::path& config, const fs::path& data, const std::optional<fs::path>& val, const fs::path& out,
              const std::optional<std::uint64_t>& seed) {
    TrainConfig cfg = config.empty() ? TrainConfig{} : load_train_config(config);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    const Manifest train_set = read_manifest(data, "train");
    std::optional<Manifest> val_set;
    if (val) val_set = read_manifest(*val, "val");

    fs::create_directories(out);
    std::ofstream(out / "config.json") << nlohmann::json(cfg).dump(2) << '\n';
    std::cerr << "training on " << train_set.size() << " images" << (cfg.augment ? " (x4 augmented)" : "") << ", "
              << Network(cfg.network).parameter_count() << " parameters\n";

    const TrainResult r = train(cfg, train_set, val_set ? &*val_set : nullptr, out, [](const EpochRecord& e) {
        std::fprintf(stderr, "epoch %4d  loss %.5f  dc %.4f  lr %.2e  %.1fs", e.epoch, e.loss, e.train_dc, e.lr,
                     e.seconds);
        if (e.val_dc) std::fprintf(stderr, "  val_dc %.4f", *e.val_dc);
        std::fputc('\n', stderr);
    });
    if (r.halted) {
        std::cerr << "halted: " << r.halt_reason << '\n';
        if (!r.latest.empty()) std::cerr << "last good checkpoint: " << r.latest << '\n';
        return 3;
    }
    std::cerr << "wrote " << r.latest << '\n';
    return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, double threshold, const std::optional<fs::path>& report) {
    const Manifest m = read_manifest(data, "test");
    const EvalReport r = evaluate(checkpoint, m, threshold);
    const nlohmann::json j = r;
    if (report) {
        std::ofstream out(*report);
        if (!out) throw std::runtime_error("cannot write report " + report->string());
        out << j.dump(2) << '\n';
    }
    std::cout << nlohmann::json{{"micro", j["micro"]}, {"macro", j["macro"]}}.dump(2) << '\n';
    return 0;
}

int cmd_synth(int n, int size, std::uint64_t seed, bool hair, const fs::path& out) {
    SynthOptions opts;
    opts.hair = hair;
    const fs::path manifest = write_synth(out, synth_dataset(n, size, seed, opts));
    std::cout << manifest.string() << '\n';
    return 0;
}

int cmd_gradcheck(const std::string& scale, std::uint64_t seed) {
    SuiteOptions opts;
    opts.scale = scale == "smoke" ? SuiteScale::Smoke : SuiteScale::Toy;
    opts.seed = seed;
    bool ok = true;
    run_gradcheck_suite(opts, [&](const SuiteCase& c) {
        const auto& r = c.report;
        ok = ok && r.passed;
        std::printf("%-4s %-28s %5zu/%-5zu max_rel %.2e\n", r.passed ? "ok" : "FAIL", c.name.c_str(),
                    r.checked - r.failed, r.checked, r.max_rel_error);
        std::fflush(stdout);
    });
    std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual multi-scale segmentation network: training and inference"};
    app.require_subcommand(1);

    fs::path config, data, out, checkpoint, image, report_path, val_path;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    int n = 8, size = 64;
    bool no_hair = false;
    std::string scale = "toy";

    auto* train_cmd = app.add_subcommand("train", "train a model from a manifest");
    train_cmd->add_option("--config", config, "flat JSON training + network config")->check(CLI::ExistingFile);
    train_cmd->add_option("--data", data, "training manifest (id,image_path,mask_path)")->required()->check(CLI::ExistingFile);
    auto* val_opt = train_cmd->add_option("--val", val_path, "validation manifest")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out, "output directory")->required();
    auto* seed_opt = train_cmd->add_option("--seed", seed, "overrides the config seed");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", data)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--threshold", threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    auto* report_opt = eval_cmd->add_option("--report", report_path, "JSON report with per-image metrics");

    auto* predict_cmd = app.add_subcommand("predict", "write a binary mask for one image");
    predict_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--out", out)->required();
    predict_cmd->add_option("--threshold", threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic lesion dataset");
    synth_cmd->add_option("--n", n)->capture_default_str()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--size", size)->capture_default_str()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", seed)->capture_default_str();
    synth_cmd->add_flag("--no-hair", no_hair, "omit hair strokes");
    synth_cmd->add_option("--out", out)->required();

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    grad_cmd->add_option("--scale", scale)->capture_default_str()->check(CLI::IsMember({"toy", "smoke"}));
    grad_cmd->add_option("--seed", seed)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd)
            return cmd_train(config, data, *val_opt ? std::optional(val_path) : std::nullopt, out,
                             *seed_opt ? std::optional(seed) : std::nullopt);
        if (*eval_cmd) return cmd_eval(checkpoint, data, threshold, *report_opt ? std::optional(report_path) : std::nullopt);
        if (*predict_cmd) {
            predict_file(checkpoint, image, out, threshold);
            return 0;
        }
        if (*synth_cmd) return cmd_synth(n, size, seed, !no_hair, out);
        if (*grad_cmd) return cmd_gradcheck(scale, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
