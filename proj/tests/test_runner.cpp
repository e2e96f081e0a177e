#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "dipblur/runner.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;

using namespace dipblur;

namespace {

NetConfig small_net(int depth = 2, int features = 8, int skip = 4) {
    NetConfig cfg;
    cfg.input_channels = 8;
    cfg.depth = depth;
    cfg.features.assign(depth, features);
    cfg.skip_features.assign(depth, skip);
    return cfg;
}

RunConfig quick_run(int iters, std::uint64_t seed = 5, Stopping mode = Stopping::OraclePeak) {
    RunConfig run;
    run.iterations = iters;
    run.metric_stride = 5;
    run.seed = seed;
    run.stopping = mode;
    run.record_ssim = false;
    return run;
}

}  // namespace

TEST_CASE("early_stop_select picks the argmax or the final iterate") {
    RunTrace trace;
    trace.rows = {{10, 1.0, 20.0, 0.0}, {20, 0.8, 28.0, 0.0}, {30, 0.6, 26.0, 0.0}};
    CHECK(early_stop_select(trace, Stopping::OraclePeak) == 20);
    CHECK(early_stop_select(trace, Stopping::FixedBudget) == 30);

    RunTrace rising;
    rising.rows = {{1, 1.0, 10.0, 0.0}, {2, 0.9, 11.0, 0.0}, {3, 0.8, 12.0, 0.0}};
    CHECK(early_stop_select(rising, Stopping::OraclePeak) == 3);

    RunTrace tied;
    tied.rows = {{1, 1.0, 15.0, 0.0}, {2, 0.9, 17.0, 0.0}, {3, 0.8, 17.0, 0.0}};
    CHECK(early_stop_select(tied, Stopping::OraclePeak) == 2);  // earliest tie wins

    RunTrace empty;
    CHECK_THROWS(early_stop_select(empty, Stopping::OraclePeak));
}

TEST_CASE("oracle_peak without ground truth is rejected") {
    Image y = oracle::synthetic_photo(16, 16, 1, 1);
    CHECK_THROWS(run_restoration<float>(y, make_delta_kernel(), LossSpec{}, small_net(),
                                        quick_run(3)));
}

TEST_CASE("identical seeds give identical traces and outputs") {
    Image gt = oracle::synthetic_photo(24, 24, 1, 2);
    BlurKernel k = make_kernel("uniform");
    Image y = degrade(gt, {k, std::sqrt(0.3), 7});
    LossSpec loss;
    loss.fidelity = Fidelity::BP;
    loss.sigma255 = std::sqrt(0.3);

    auto r1 = run_restoration<float>(y, k, loss, small_net(), quick_run(20), gt);
    auto r2 = run_restoration<float>(y, k, loss, small_net(), quick_run(20), gt);
    REQUIRE(r1.trace.rows.size() == r2.trace.rows.size());
    for (std::size_t i = 0; i < r1.trace.rows.size(); ++i) {
        CHECK(r1.trace.rows[i].iteration == r2.trace.rows[i].iteration);
        CHECK(r1.trace.rows[i].loss == r2.trace.rows[i].loss);
        CHECK(r1.trace.rows[i].psnr == r2.trace.rows[i].psnr);
    }
    CHECK(r1.restored.data == r2.restored.data);
    CHECK(r1.trace.best_iteration == r2.trace.best_iteration);
}

TEST_CASE("a different seed changes the trajectory") {
    Image gt = oracle::synthetic_photo(24, 24, 1, 3);
    BlurKernel k = make_delta_kernel();
    auto r1 = run_restoration<float>(gt, k, LossSpec{}, small_net(), quick_run(10, 5), gt);
    auto r2 = run_restoration<float>(gt, k, LossSpec{}, small_net(), quick_run(10, 6), gt);
    CHECK(r1.trace.rows.back().loss != r2.trace.rows.back().loss);
}

TEST_CASE("the first trace row is the loss of the untouched initialization") {
    Image gt = oracle::synthetic_photo(16, 16, 1, 4);
    BlurKernel k = make_delta_kernel();
    LossSpec loss;
    RunConfig run = quick_run(5);
    auto res = run_restoration<float>(gt, k, loss, small_net(), run, gt);
    REQUIRE(!res.trace.rows.empty());
    CHECK(res.trace.rows.front().iteration == 1);

    // recompute with a fresh net and the same seeds, before any update
    NetConfig cfg = small_net();
    cfg.output_channels = 1;
    UNet<float> net(cfg, run.seed);
    SeedInput<float> z =
        make_seed_input<float>(cfg.input_channels, 16, 16, derive_seed(run.seed, 1));
    Image x0 = net_output_image(net, z);
    CHECK(res.trace.rows.front().loss ==
          doctest::Approx(ls_loss(x0, gt, k)).epsilon(1e-5));
}

TEST_CASE("rows are recorded on the stride plus the final iteration") {
    Image gt = oracle::synthetic_photo(16, 16, 1, 5);
    auto res = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, small_net(),
                                      quick_run(12), gt);
    std::vector<int> iters;
    for (const auto& r : res.trace.rows) iters.push_back(r.iteration);
    CHECK(iters == std::vector<int>{1, 6, 11, 12});
    for (std::size_t i = 1; i < iters.size(); ++i) CHECK(iters[i] > iters[i - 1]);
}

TEST_CASE("non-finite losses abort with the iteration number") {
    Image y = oracle::synthetic_photo(16, 16, 1, 6);
    y.data[5] = std::numeric_limits<double>::quiet_NaN();
    try {
        run_restoration<float>(y, make_delta_kernel(), LossSpec{}, small_net(),
                               quick_run(3, 5, Stopping::FixedBudget));
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
    }
}

TEST_CASE("restored output is clipped to [0,1] and matches the selected iterate") {
    Image gt = oracle::synthetic_photo(16, 16, 1, 7);
    auto res = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, small_net(),
                                      quick_run(8), gt);
    for (double v : res.restored.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(res.trace.best_iteration > 0);
    CHECK(res.trace.best_psnr > 0.0);
}

TEST_CASE("both fidelities run for every builtin kernel and noise level") {
    Image gt = oracle::synthetic_photo(32, 32, 3, 8);
    RunConfig run = quick_run(4, 11, Stopping::FixedBudget);
    for (const char* spec : {"uniform", "gaussian", "radial"}) {
        BlurKernel k = make_kernel(spec);
        for (double s2 : {0.3, 2.0, 4.0}) {
            double sigma = std::sqrt(s2);
            Image y = degrade(gt, {k, sigma, 21});
            for (Fidelity fid : {Fidelity::LS, Fidelity::BP}) {
                LossSpec loss;
                loss.fidelity = fid;
                loss.sigma255 = sigma;
                CHECK_NOTHROW(run_restoration<float>(y, k, loss, small_net(), run));
            }
        }
    }
}

TEST_CASE("trace csv is written with the pinned columns") {
    RunTrace trace;
    trace.rows = {{1, 0.5, 20.0, 0.9},
                  {2, 0.25, std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::quiet_NaN()}};
    fs::path dir = fs::temp_directory_path() / "dipblur_trace";
    fs::create_directories(dir);
    std::string path = (dir / "t.csv").string();
    write_trace_csv(trace, path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "iteration,loss,psnr,ssim");
    std::getline(f, line);
    CHECK(line == "1,5.000000000e-01,20.000000,0.900000");
    std::getline(f, line);
    CHECK(line == "2,2.500000000e-01,inf,");
}

// the untrained prior can fit an unblurred target: a smoke floor, not a
// paper number
TEST_CASE("ls restoration of a clean 32x32 target reaches 25 dB in 500 iterations") {
    Image gt = oracle::synthetic_photo(32, 32, 1, 9);
    NetConfig cfg = small_net(3, 16, 4);
    RunConfig run;
    run.iterations = 500;
    run.metric_stride = 10;
    run.seed = 3;
    run.stopping = Stopping::FixedBudget;
    run.record_ssim = false;
    auto res = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, cfg, run, gt);
    CHECK(res.trace.rows.back().psnr >= 25.0);
}

TEST_CASE("observations below the minimum size are rejected") {
    Image y = oracle::synthetic_photo(12, 24, 1, 20);
    CHECK_THROWS(run_restoration<float>(y, make_delta_kernel(), LossSpec{}, small_net(),
                                        quick_run(2, 1, Stopping::FixedBudget)));
}

TEST_CASE("input perturbation stays deterministic and changes the path") {
    Image gt = oracle::synthetic_photo(16, 16, 1, 21);
    NetConfig cfg = small_net();
    cfg.perturb_noise_std = 0.03;
    RunConfig run = quick_run(8, 9, Stopping::FixedBudget);
    auto a = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, cfg, run);
    auto b = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, cfg, run);
    CHECK(a.restored.data == b.restored.data);
    auto c = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, small_net(), run);
    CHECK(a.trace.rows.back().loss != c.trace.rows.back().loss);
}

TEST_CASE("runs can save and resume parameter checkpoints") {
    fs::path dir = fs::temp_directory_path() / "dipblur_resume";
    fs::create_directories(dir);
    std::string ckpt = (dir / "run.ckpt").string();
    Image gt = oracle::synthetic_photo(16, 16, 1, 22);
    RunConfig first = quick_run(6, 13, Stopping::FixedBudget);
    first.checkpoint_out = ckpt;
    auto a = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, small_net(), first);
    REQUIRE(fs::exists(ckpt));

    RunConfig resumed = quick_run(3, 13, Stopping::FixedBudget);
    resumed.checkpoint_in = ckpt;
    auto b = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, small_net(), resumed);
    RunConfig fresh = quick_run(3, 13, Stopping::FixedBudget);
    auto c = run_restoration<float>(gt, make_delta_kernel(), LossSpec{}, small_net(), fresh);
    // the resumed run starts from the trained parameters, the fresh one does not
    CHECK(b.trace.rows.front().loss < c.trace.rows.front().loss);
    CHECK(b.trace.rows.front().loss == doctest::Approx(a.trace.rows.back().loss).epsilon(0.5));
}
