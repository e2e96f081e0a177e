#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dipblur/harness.hpp"
#include "testutil.hpp"

using namespace dipblur;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "dipblur_harness" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// strip the wall-clock column, the one legitimately nondeterministic field
std::string without_seconds(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) {
        auto pos = line.rfind(',');
        out += line.substr(0, pos) + "\n";
    }
    return out;
}

}  // namespace

TEST_CASE("png round trip stays within the 8-bit quantization bound") {
    fs::path dir = fresh_dir("png");
    Image rgb = oracle::synthetic_photo(33, 47, 3, 1);
    write_png((dir / "rgb.png").string(), rgb);
    Image back = read_png((dir / "rgb.png").string());
    REQUIRE(back.same_shape(rgb));
    for (std::size_t i = 0; i < rgb.data.size(); ++i)
        CHECK(std::abs(rgb.data[i] - back.data[i]) <= 1.0 / 510.0 + 1e-12);

    Image gray = oracle::random_image(21, 18, 1, 2);
    write_png((dir / "gray.png").string(), gray);
    Image gback = read_png((dir / "gray.png").string());
    REQUIRE(gback.channels == 1);
    for (std::size_t i = 0; i < gray.data.size(); ++i)
        CHECK(std::abs(gray.data[i] - gback.data[i]) <= 1.0 / 510.0 + 1e-12);

    // values outside [0,1] clip only at export
    Image hot(16, 16, 1);
    for (double& v : hot.data) v = 1.7;
    write_png((dir / "hot.png").string(), hot);
    Image hback = read_png((dir / "hot.png").string());
    for (double v : hback.data) CHECK(v == 1.0);
}

TEST_CASE("png reader rejects garbage and truncation") {
    fs::path dir = fresh_dir("pngbad");
    {
        std::ofstream f(dir / "junk.png", std::ios::binary);
        f << "definitely not a png";
    }
    CHECK_THROWS(read_png((dir / "junk.png").string()));

    Image img = oracle::random_image(16, 16, 1, 3);
    write_png((dir / "ok.png").string(), img);
    auto bytes = slurp(dir / "ok.png");
    {
        std::ofstream f(dir / "trunc.png", std::ios::binary);
        f.write(bytes.data(), std::streamsize(bytes.size() / 2));
    }
    CHECK_THROWS(read_png((dir / "trunc.png").string()));
    CHECK_THROWS(read_png((dir / "missing.png").string()));
}

TEST_CASE("config parser handles sections, comments and lists") {
    std::istringstream in(
        "# experiment\n"
        "[dataset]\n"
        "dir = ./set14   # trailing comment\n"
        "max_size = 256\n"
        "\n"
        "[grid]\n"
        "kernels = uniform radial\n"
        "sigmas255 = 0.5477 1.4142\n");
    ConfigFile f = parse_config(in);
    CHECK(f.get("dataset", "dir") == "./set14");
    CHECK(f.get_num("dataset", "max_size", 0) == 256);
    CHECK(f.get_list("grid", "kernels") == std::vector<std::string>{"uniform", "radial"});
    CHECK(f.get("missing", "key", "fallback") == "fallback");

    std::istringstream bad("key_without_section = 1\n");
    CHECK_THROWS(parse_config(bad));
    std::istringstream bad2("[sec\n");
    CHECK_THROWS(parse_config(bad2));
}

TEST_CASE("experiment config rejects unknown keys") {
    fs::path dir = fresh_dir("cfg");
    {
        std::ofstream f(dir / "bad.cfg");
        f << "[dataset]\ndir = x\ntypo_key = 1\n";
    }
    CHECK_THROWS(load_experiment_config((dir / "bad.cfg").string()));
    {
        std::ofstream f(dir / "badsec.cfg");
        f << "[nonsense]\nx = 1\n";
    }
    CHECK_THROWS(load_experiment_config((dir / "badsec.cfg").string()));
}

TEST_CASE("method presets carry the stock weights") {
    for (const char* kernel : {"uniform", "gaussian", "radial"}) {
        LossSpec bp = make_loss_preset("BP", kernel, 1.0);
        CHECK(bp.fidelity == Fidelity::BP);
        CHECK(bp.tv_weight == 0.0);
        CHECK(bp.eps1 == 0.01);
        CHECK(bp.eps2 == 1e-3);
        LossSpec bptv = make_loss_preset("BP-TV", kernel, 1.0);
        CHECK(bptv.tv_weight == 1e-3);
        LossSpec ls = make_loss_preset("LS", kernel, 1.0);
        CHECK(ls.fidelity == Fidelity::LS);
        CHECK(ls.tv_weight == 0.0);
    }
    CHECK(make_loss_preset("LS-TV", "uniform", 1.0).tv_weight == 1e-6);
    CHECK(make_loss_preset("LS-TV", "gaussian", 1.0).tv_weight == 1e-5);
    CHECK(make_loss_preset("LS-TV", "radial", 1.0).tv_weight == 1e-5);
    CHECK_THROWS(make_loss_preset("L2", "uniform", 1.0));
}

TEST_CASE("emit_summary writes detail rows plus per-group means") {
    ResultTable t;
    t.rows.push_back({"img_a", "uniform", "LS", 0.5477, 26.314, 0.834, 120, 1.5, false, ""});
    t.rows.push_back({"img_b", "uniform", "LS", 0.5477, 27.0, 0.85, 140, 2.5, false, ""});
    fs::path dir = fresh_dir("summary");
    std::string path = (dir / "summary.csv").string();
    emit_summary(t, path);
    std::string csv = slurp(path);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "image,kernel,sigma,method,psnr_peak,ssim_peak,iter_peak,seconds");
    std::getline(in, line);
    CHECK(line == "img_a,uniform,0.5477,LS,26.31,0.83,120,1.50");
    std::getline(in, line);
    CHECK(line == "img_b,uniform,0.5477,LS,27.00,0.85,140,2.50");
    std::getline(in, line);
    CHECK(line == "MEAN,uniform,0.5477,LS,26.66,0.84,130,2.00");
    CHECK_FALSE(std::getline(in, line));

    ResultTable empty;
    CHECK_THROWS(emit_summary(empty, (dir / "none.csv").string()));
}

TEST_CASE("run_experiment covers the grid and writes every artifact") {
    fs::path data = fresh_dir("data");
    write_png((data / "tiny.png").string(), oracle::synthetic_photo(24, 24, 3, 7));
    fs::path out = fresh_dir("out");

    ExperimentConfig cfg;
    cfg.dataset_dir = data.string();
    cfg.kernels = {"uniform"};
    cfg.sigmas255 = {std::sqrt(0.3)};
    cfg.methods = {"LS", "BP"};
    cfg.run.iterations = 6;
    cfg.run.metric_stride = 2;
    cfg.run.seed = 3;
    cfg.run.stopping = Stopping::OraclePeak;
    cfg.run.record_ssim = false;
    cfg.net.input_channels = 8;
    cfg.net.depth = 2;
    cfg.net.features = {8, 8};
    cfg.net.skip_features = {4, 4};
    cfg.output_dir = out.string();

    ResultTable table = run_experiment(cfg);
    REQUIRE(table.rows.size() == 2);  // 1 image x 1 kernel x 1 sigma x 2 methods
    for (const auto& r : table.rows) {
        CHECK_FALSE(r.failed);
        CHECK(r.psnr_peak > 0.0);
        CHECK(r.iter_peak >= 1);
    }
    CHECK(fs::exists(out / "summary.csv"));
    CHECK(fs::exists(out / "manifest.txt"));
    CHECK(fs::exists(out / "plot_uniform_sigma0.547723.png"));
    int pngs = 0, csvs = 0;
    for (const auto& e : fs::directory_iterator(out)) {
        std::string name = e.path().filename().string();
        if (name.rfind("tiny_", 0) == 0 && name.ends_with(".png")) ++pngs;
        if (name.rfind("tiny_", 0) == 0 && name.ends_with("_trace.csv")) ++csvs;
    }
    CHECK(pngs == 2);
    CHECK(csvs == 2);

    // the emitted plot is a readable PNG
    Image plot = read_png((out / "plot_uniform_sigma0.547723.png").string());
    CHECK(plot.width > 100);

    // rerun reproduces everything except wall-clock seconds
    std::string first = slurp(out / "summary.csv");
    fs::path out2 = fresh_dir("out2");
    cfg.output_dir = out2.string();
    run_experiment(cfg);
    CHECK(without_seconds(first) == without_seconds(slurp(out2 / "summary.csv")));
    CHECK(slurp(out / "tiny_uniform_sigma0.547723_LS_trace.csv") ==
          slurp(out2 / "tiny_uniform_sigma0.547723_LS_trace.csv"));
}

TEST_CASE("degradation seeds depend only on the cell names") {
    fs::path data = fresh_dir("data_seed");
    write_png((data / "a.png").string(), oracle::synthetic_photo(24, 24, 1, 8));
    ExperimentConfig cfg;
    cfg.dataset_dir = data.string();
    cfg.kernels = {"uniform"};
    cfg.sigmas255 = {1.0};
    cfg.methods = {"LS"};
    cfg.run.iterations = 2;
    cfg.run.metric_stride = 1;
    cfg.run.record_ssim = false;
    cfg.run.stopping = Stopping::OraclePeak;
    cfg.net.input_channels = 8;
    cfg.net.depth = 2;
    cfg.net.features = {8, 8};
    cfg.net.skip_features = {0, 0};
    fs::path o1 = fresh_dir("seed_out1"), o2 = fresh_dir("seed_out2");
    cfg.output_dir = o1.string();
    ResultTable t1 = run_experiment(cfg);
    cfg.output_dir = o2.string();
    ResultTable t2 = run_experiment(cfg);
    // same degraded input and same net seed => identical traces
    CHECK(slurp(o1 / "a_uniform_sigma1_LS_trace.csv") == slurp(o2 / "a_uniform_sigma1_LS_trace.csv"));
}

TEST_CASE("failed cells are marked and the rest proceed") {
    fs::path data = fresh_dir("data_fail");
    write_png((data / "small.png").string(), oracle::random_image(16, 16, 1, 9));
    ExperimentConfig cfg;
    cfg.dataset_dir = data.string();
    // the first kernel spec cannot be constructed, the second cell proceeds
    cfg.kernels = {"file:/nonexistent/kernel.txt", "delta"};
    cfg.sigmas255 = {0.0};
    cfg.methods = {"LS"};
    cfg.run.iterations = 2;
    cfg.run.metric_stride = 1;
    cfg.run.record_ssim = false;
    cfg.net.input_channels = 4;
    cfg.net.depth = 1;
    cfg.net.features = {8};
    cfg.net.skip_features = {0};
    cfg.output_dir = fresh_dir("fail_out").string();
    ResultTable t = run_experiment(cfg);
    REQUIRE(t.rows.size() == 2);
    int failed = 0, ok = 0;
    for (const auto& r : t.rows) (r.failed ? failed : ok)++;
    CHECK(failed == 1);
    CHECK(ok == 1);
    std::string manifest = slurp(fs::path(cfg.output_dir) / "manifest.txt");
    CHECK(manifest.find("failed") != std::string::npos);
}

TEST_CASE("unreadable images are skipped with a manifest entry") {
    fs::path data = fresh_dir("data_skip");
    write_png((data / "good.png").string(), oracle::synthetic_photo(24, 24, 1, 10));
    {
        std::ofstream f(data / "broken.png", std::ios::binary);
        f << "not a png";
    }
    ExperimentConfig cfg;
    cfg.dataset_dir = data.string();
    cfg.kernels = {"delta"};
    cfg.sigmas255 = {0.0};
    cfg.methods = {"LS"};
    cfg.run.iterations = 2;
    cfg.run.metric_stride = 1;
    cfg.run.record_ssim = false;
    cfg.net.input_channels = 4;
    cfg.net.depth = 1;
    cfg.net.features = {8};
    cfg.net.skip_features = {0};
    cfg.output_dir = fresh_dir("skip_out").string();
    ResultTable t = run_experiment(cfg);
    CHECK(t.rows.size() == 1);  // only the good image
    std::string manifest = slurp(fs::path(cfg.output_dir) / "manifest.txt");
    CHECK(manifest.find("skip broken.png") != std::string::npos);
}

TEST_CASE("center crop is recorded in the manifest") {
    fs::path data = fresh_dir("data_crop");
    write_png((data / "big.png").string(), oracle::synthetic_photo(48, 40, 1, 11));
    ExperimentConfig cfg;
    cfg.dataset_dir = data.string();
    cfg.max_size = 32;
    cfg.kernels = {"delta"};
    cfg.sigmas255 = {0.0};
    cfg.methods = {"LS"};
    cfg.run.iterations = 2;
    cfg.run.metric_stride = 1;
    cfg.run.record_ssim = false;
    cfg.net.input_channels = 4;
    cfg.net.depth = 1;
    cfg.net.features = {8};
    cfg.net.skip_features = {0};
    cfg.output_dir = fresh_dir("crop_out").string();
    run_experiment(cfg);
    std::string manifest = slurp(fs::path(cfg.output_dir) / "manifest.txt");
    CHECK(manifest.find("center-crop to 32x32") != std::string::npos);
}

TEST_CASE("parallel execution produces the same table as sequential") {
    fs::path data = fresh_dir("data_par");
    write_png((data / "p.png").string(), oracle::synthetic_photo(24, 24, 1, 12));
    ExperimentConfig cfg;
    cfg.dataset_dir = data.string();
    cfg.kernels = {"delta", "uniform"};
    cfg.sigmas255 = {0.5, 1.0};
    cfg.methods = {"LS", "BP"};
    cfg.run.iterations = 3;
    cfg.run.metric_stride = 1;
    cfg.run.record_ssim = false;
    cfg.run.stopping = Stopping::OraclePeak;
    cfg.net.input_channels = 4;
    cfg.net.depth = 1;
    cfg.net.features = {8};
    cfg.net.skip_features = {2};
    cfg.output_dir = fresh_dir("par_out1").string();
    cfg.parallel = 1;
    ResultTable seq = run_experiment(cfg);
    cfg.output_dir = fresh_dir("par_out2").string();
    cfg.parallel = 3;
    ResultTable par = run_experiment(cfg);
    REQUIRE(seq.rows.size() == par.rows.size());
    for (std::size_t i = 0; i < seq.rows.size(); ++i) {
        CHECK(seq.rows[i].image == par.rows[i].image);
        CHECK(seq.rows[i].psnr_peak == par.rows[i].psnr_peak);
        CHECK(seq.rows[i].iter_peak == par.rows[i].iter_peak);
    }
}

TEST_CASE("plot rendering writes a decodable image with curves") {
    fs::path dir = fresh_dir("plot");
    PlotCurve a{"BP", 0.15, 0.35, 0.85, {{0, 20.0}, {100, 28.0}, {200, 29.5}, {300, 29.0}}};
    PlotCurve b{"LS", 0.85, 0.25, 0.2, {{0, 19.0}, {100, 22.0}, {200, 24.0}, {300, 25.0}}};
    std::string path = (dir / "p.png").string();
    render_line_plot(path, "UNIFORM SIGMA 0.55", "ITERATION", "PSNR [DB]", {a, b});
    Image img = read_png(path);
    CHECK(img.height == 480);
    CHECK(img.width == 720);
    // some pixels should carry the curve colors
    bool saw_blue = false, saw_red = false;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (img.at(2, y, x) > 0.7 && img.at(0, y, x) < 0.3) saw_blue = true;
            if (img.at(0, y, x) > 0.7 && img.at(2, y, x) < 0.3) saw_red = true;
        }
    CHECK(saw_blue);
    CHECK(saw_red);
}
