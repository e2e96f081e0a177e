// Command-line front end: single-image restoration and grid experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "dipblur/harness.hpp"
#include "dipblur/png_io.hpp"
#include "dipblur/runner.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Single-image deblurring with an untrained convolutional prior"};
    app.require_subcommand(1);

    // ---- restore ----
    auto* restore = app.add_subcommand("restore", "Deblur one observed image");
    std::string input, kernel_spec = "uniform", loss_name = "ls", ground_truth, out_dir = ".";
    std::string trace_csv, load_ckpt, save_ckpt;
    double sigma255 = 0.0, tv_weight = 0.0, eps1 = 0.01, eps2 = 1e-3, lr = 0.01;
    int iterations = 10000, stride = 10, net_depth = 5, net_features = 128, net_skip = 4;
    std::uint64_t seed = 1;
    bool no_ssim = false;
    restore->add_option("--input", input, "observed (degraded) image, PNG")->required();
    restore->add_option("--kernel", kernel_spec,
                        "blur kernel: uniform|gaussian[:std]|radial|delta|file:<path>");
    restore->add_option("--sigma255", sigma255, "noise std in 8-bit units");
    restore->add_option("--loss", loss_name, "fidelity term: ls|bp");
    restore->add_option("--tv-weight", tv_weight, "anisotropic TV weight");
    restore->add_option("--eps1", eps1, "BP damping: eps1*sigma255^2 term");
    restore->add_option("--eps2", eps2, "BP damping: constant term");
    restore->add_option("--iterations", iterations, "optimization budget");
    restore->add_option("--lr", lr, "Adam learning rate");
    restore->add_option("--seed", seed, "seed for net init and noise input");
    restore->add_option("--ground-truth", ground_truth, "reference PNG; enables PSNR/SSIM trace");
    restore->add_option("--out-dir", out_dir, "directory for the restored PNG");
    restore->add_option("--trace-csv", trace_csv, "per-iteration CSV path");
    restore->add_option("--stride", stride, "metric evaluation stride");
    restore->add_option("--net-depth", net_depth, "down/up stages");
    restore->add_option("--net-features", net_features, "feature width per stage");
    restore->add_option("--net-skip", net_skip, "skip-connection width per stage");
    restore->add_flag("--no-ssim", no_ssim, "skip SSIM in the trace");
    restore->add_option("--save-checkpoint", save_ckpt, "write final parameters here");
    restore->add_option("--load-checkpoint", load_ckpt, "start from saved parameters");

    // ---- experiment ----
    auto* experiment = app.add_subcommand("experiment", "Run a kernels x sigmas x methods grid");
    std::string config_path;
    experiment->add_option("--config", config_path, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*restore) {
            dipblur::Image y = dipblur::read_png(input);
            dipblur::BlurKernel kernel = dipblur::make_kernel(kernel_spec);

            dipblur::LossSpec loss;
            loss.fidelity = dipblur::parse_fidelity(loss_name);
            loss.sigma255 = sigma255;
            loss.eps1 = eps1;
            loss.eps2 = eps2;
            loss.tv_weight = tv_weight;

            dipblur::NetConfig net;
            net.depth = net_depth;
            net.features.assign(net_depth, net_features);
            net.skip_features.assign(net_depth, net_skip);

            dipblur::RunConfig run;
            run.iterations = iterations;
            run.lr = lr;
            run.metric_stride = stride;
            run.seed = seed;
            run.record_ssim = !no_ssim;
            run.checkpoint_in = load_ckpt;
            run.checkpoint_out = save_ckpt;

            std::optional<dipblur::Image> gt;
            if (!ground_truth.empty()) {
                gt = dipblur::read_png(ground_truth);
                run.stopping = dipblur::Stopping::OraclePeak;
            }

            auto result = dipblur::run_restoration<float>(y, kernel, loss, net, run, gt);

            fs::create_directories(out_dir);
            std::string stem = fs::path(input).stem().string();
            std::string out_path = (fs::path(out_dir) / (stem + "_restored.png")).string();
            dipblur::write_png(out_path, result.restored);
            if (!trace_csv.empty()) dipblur::write_trace_csv(result.trace, trace_csv);

            std::printf("restored %s (%d iterations, %zu parameters)\n", out_path.c_str(),
                        iterations, result.param_count);
            if (gt)
                std::printf("peak psnr %.2f dB at iteration %d\n", result.trace.best_psnr,
                            result.trace.best_iteration);
        } else if (*experiment) {
            dipblur::ExperimentConfig cfg = dipblur::load_experiment_config(config_path);
            dipblur::ResultTable table = dipblur::run_experiment(cfg);
            std::size_t failed = 0;
            for (const auto& r : table.rows) failed += r.failed ? 1 : 0;
            std::printf("experiment done: %zu runs, %zu failed, summary at %s\n",
                        table.rows.size(), failed,
                        (fs::path(cfg.output_dir) / "summary.csv").string().c_str());
            if (failed) return 2;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
