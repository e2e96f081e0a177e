#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dipblur/plot.hpp"
#include "dipblur/png_io.hpp"
#include "dipblur/runner.hpp"

namespace dipblur {

// ---- config file: sections of key = value lines, lists whitespace-split ----

struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key) > 0;
    }
    std::string get(const std::string& sec, const std::string& key,
                    const std::string& fallback = "") const {
        auto s = sections.find(sec);
        if (s == sections.end()) return fallback;
        auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }
    double get_num(const std::string& sec, const std::string& key, double fallback) const {
        std::string v = get(sec, key);
        return v.empty() ? fallback : std::stod(v);
    }
    bool get_bool(const std::string& sec, const std::string& key, bool fallback) const {
        std::string v = get(sec, key);
        if (v.empty()) return fallback;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw std::invalid_argument("config: bad boolean for " + sec + "." + key);
    }
    std::vector<std::string> get_list(const std::string& sec, const std::string& key) const {
        std::istringstream iss(get(sec, key));
        std::vector<std::string> out;
        std::string tok;
        while (iss >> tok) out.push_back(tok);
        return out;
    }
};

inline ConfigFile parse_config(std::istream& in) {
    ConfigFile cfg;
    std::string line, section;
    int lineno = 0;
    auto trim = [](std::string s) {
        auto issp = [](unsigned char c) { return std::isspace(c); };
        while (!s.empty() && issp(s.front())) s.erase(s.begin());
        while (!s.empty() && issp(s.back())) s.pop_back();
        return s;
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config: bad section header at line " +
                                            std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            cfg.sections[section];
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos || section.empty())
            throw std::invalid_argument("config: expected key = value at line " +
                                        std::to_string(lineno));
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config: empty key at line " +
                                                     std::to_string(lineno));
        cfg.sections[section][key] = val;
    }
    return cfg;
}

inline ConfigFile parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    return parse_config(f);
}

// ---- experiment description ----

// Paper-protocol presets. BP damping is always eps1=0.01, eps2=1e-3; the TV
// weight depends on the fidelity and, for LS, on the kernel.
inline LossSpec make_loss_preset(const std::string& method, const std::string& kernel_name,
                                 double sigma255) {
    LossSpec spec;
    spec.sigma255 = sigma255;
    if (method == "LS") {
        spec.fidelity = Fidelity::LS;
    } else if (method == "LS-TV") {
        spec.fidelity = Fidelity::LS;
        spec.tv_weight = (kernel_name == "uniform") ? 1e-6 : 1e-5;
    } else if (method == "BP") {
        spec.fidelity = Fidelity::BP;
    } else if (method == "BP-TV") {
        spec.fidelity = Fidelity::BP;
        spec.tv_weight = 1e-3;
    } else {
        throw std::invalid_argument("unknown method preset: " + method);
    }
    return spec;
}

struct ExperimentConfig {
    std::string dataset_dir;
    std::vector<std::string> images;  // optional explicit list, relative to dataset_dir
    int max_size = 0;                 // center-crop cap, 0 = none
    std::vector<std::string> kernels = {"uniform", "radial", "gaussian"};
    std::vector<double> sigmas255;
    std::vector<std::string> methods = {"LS", "LS-TV", "BP", "BP-TV"};
    RunConfig run;
    NetConfig net;
    std::string output_dir = "results";
    int parallel = 1;

    void validate() const {
        if (dataset_dir.empty()) throw std::invalid_argument("experiment: dataset dir missing");
        if (kernels.empty()) throw std::invalid_argument("experiment: no kernels");
        if (sigmas255.empty()) throw std::invalid_argument("experiment: no sigma values");
        if (methods.empty()) throw std::invalid_argument("experiment: no methods");
        if (parallel < 1) throw std::invalid_argument("experiment: parallel must be >= 1");
        run.validate();
        net.validate();
    }
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
    ConfigFile f = parse_config_file(path);
    for (const auto& [sec, kv] : f.sections) {
        static const std::map<std::string, std::vector<std::string>> known = {
            {"dataset", {"dir", "images", "max_size"}},
            {"grid", {"kernels", "sigmas255", "methods"}},
            {"run", {"iterations", "lr", "stride", "seed", "stopping", "record_ssim"}},
            {"net",
             {"input_channels", "depth", "features", "skip", "upsample", "perturb_noise_std"}},
            {"output", {"dir", "parallel"}}};
        auto it = known.find(sec);
        if (it == known.end()) throw std::invalid_argument("config: unknown section [" + sec + "]");
        for (const auto& [k, v] : kv)
            if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
                throw std::invalid_argument("config: unknown key " + sec + "." + k);
    }

    ExperimentConfig cfg;
    cfg.dataset_dir = f.get("dataset", "dir");
    cfg.images = f.get_list("dataset", "images");
    cfg.max_size = int(f.get_num("dataset", "max_size", 0));
    if (f.has("grid", "kernels")) cfg.kernels = f.get_list("grid", "kernels");
    for (const std::string& s : f.get_list("grid", "sigmas255")) cfg.sigmas255.push_back(std::stod(s));
    if (f.has("grid", "methods")) cfg.methods = f.get_list("grid", "methods");
    cfg.run.iterations = int(f.get_num("run", "iterations", cfg.run.iterations));
    cfg.run.lr = f.get_num("run", "lr", cfg.run.lr);
    cfg.run.metric_stride = int(f.get_num("run", "stride", cfg.run.metric_stride));
    cfg.run.seed = std::uint64_t(f.get_num("run", "seed", double(cfg.run.seed)));
    cfg.run.stopping = parse_stopping(f.get("run", "stopping", "oracle_peak"));
    cfg.run.record_ssim = f.get_bool("run", "record_ssim", cfg.run.record_ssim);
    cfg.net.input_channels = int(f.get_num("net", "input_channels", cfg.net.input_channels));
    cfg.net.depth = int(f.get_num("net", "depth", cfg.net.depth));
    if (f.has("net", "features"))
        cfg.net.features.assign(cfg.net.depth, int(f.get_num("net", "features", 128)));
    if (f.has("net", "skip"))
        cfg.net.skip_features.assign(cfg.net.depth, int(f.get_num("net", "skip", 4)));
    cfg.net.upsample = f.get("net", "upsample", cfg.net.upsample);
    cfg.net.perturb_noise_std = f.get_num("net", "perturb_noise_std", 0.0);
    cfg.output_dir = f.get("output", "dir", cfg.output_dir);
    cfg.parallel = int(f.get_num("output", "parallel", 1));
    return cfg;
}

// ---- results ----

struct ResultRow {
    std::string image, kernel, method;
    double sigma255 = 0.0;
    double psnr_peak = 0.0, ssim_peak = 0.0;
    int iter_peak = 0;
    double seconds = 0.0;
    bool failed = false;
    std::string error;
};

struct ResultTable {
    std::vector<ResultRow> rows;
};

namespace detail {

inline std::string sigma_label(double s) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", s);
    return buf;
}

inline std::string sanitize_token(std::string s) {
    for (char& c : s)
        if (!std::isalnum((unsigned char)c) && c != '-' && c != '.') c = '_';
    return s;
}

inline std::string cell_stem(const std::string& image, const std::string& kernel, double sigma,
                             const std::string& method) {
    return sanitize_token(image) + "_" + sanitize_token(kernel) + "_sigma" +
           sanitize_token(sigma_label(sigma)) + "_" + sanitize_token(method);
}

}  // namespace detail

// 2-decimal metric formatting; aggregate rows carry image=MEAN. Failed cells
// keep their row with empty metric fields so nothing is silently dropped.
inline void emit_summary(const ResultTable& table, const std::string& path) {
    if (table.rows.empty()) throw std::invalid_argument("emit_summary: empty table");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("emit_summary: cannot write " + path);
    f << "image,kernel,sigma,method,psnr_peak,ssim_peak,iter_peak,seconds\n";
    char buf[256];
    auto write_row = [&](const ResultRow& r, const std::string& image_field) {
        if (r.failed) {
            f << image_field << "," << r.kernel << "," << detail::sigma_label(r.sigma255) << ","
              << r.method << ",,,,\n";
            return;
        }
        std::string ssim_field;
        if (!std::isnan(r.ssim_peak)) {
            std::snprintf(buf, sizeof buf, "%.2f", r.ssim_peak);
            ssim_field = buf;
        }
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%.2f,%s,%d,%.2f\n", image_field.c_str(),
                      r.kernel.c_str(), detail::sigma_label(r.sigma255).c_str(), r.method.c_str(),
                      r.psnr_peak, ssim_field.c_str(), r.iter_peak, r.seconds);
        f << buf;
    };
    for (const auto& r : table.rows) write_row(r, r.image);

    // aggregate means per (kernel, sigma, method), in first-seen order
    std::vector<ResultRow> agg;
    for (const auto& r : table.rows) {
        if (r.failed) continue;
        auto it = std::find_if(agg.begin(), agg.end(), [&](const ResultRow& a) {
            return a.kernel == r.kernel && a.sigma255 == r.sigma255 && a.method == r.method;
        });
        if (it == agg.end()) {
            agg.push_back(r);
            agg.back().image = "1";  // count accumulator
            continue;
        }
        it->psnr_peak += r.psnr_peak;
        it->ssim_peak += r.ssim_peak;
        it->iter_peak += r.iter_peak;
        it->seconds += r.seconds;
        it->image = std::to_string(std::stoi(it->image) + 1);
    }
    for (auto& a : agg) {
        int n = std::stoi(a.image);
        a.psnr_peak /= n;
        a.ssim_peak /= n;
        a.iter_peak = int(std::lround(double(a.iter_peak) / n));
        a.seconds /= n;
        write_row(a, "MEAN");
    }
    if (!f) throw std::runtime_error("emit_summary: short write to " + path);
}

// Runs the full (image x kernel x sigma x method) grid. Every cell gets a
// degradation seed hashed from its names, so reruns and different methods see
// the identical degraded observation. Cells are independent jobs.
inline ResultTable run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    std::ofstream manifest(fs::path(cfg.output_dir) / "manifest.txt");
    manifest << "dataset " << cfg.dataset_dir << "\n";

    // dataset listing
    std::vector<std::string> files = cfg.images;
    if (files.empty()) {
        for (const auto& e : fs::directory_iterator(cfg.dataset_dir)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
            if (ext == ".png") files.push_back(e.path().filename().string());
        }
        std::sort(files.begin(), files.end());
    }
    if (files.empty()) throw std::runtime_error("experiment: no images found in " + cfg.dataset_dir);

    struct LoadedImage {
        std::string name;
        Image pixels;
    };
    std::vector<LoadedImage> dataset;
    for (const auto& fname : files) {
        try {
            Image img = read_png((fs::path(cfg.dataset_dir) / fname).string());
            if (cfg.max_size > 0) {
                Image cropped = center_crop(img, cfg.max_size, cfg.max_size);
                if (!cropped.same_shape(img))
                    manifest << "preprocess " << fname << " center-crop to " << cropped.height
                             << "x" << cropped.width << "\n";
                img = std::move(cropped);
            }
            dataset.push_back({fs::path(fname).stem().string(), std::move(img)});
        } catch (const std::exception& e) {
            manifest << "skip " << fname << " (" << e.what() << ")\n";
        }
    }
    if (dataset.empty()) throw std::runtime_error("experiment: no readable images");

    struct Cell {
        const LoadedImage* image;
        std::string kernel_spec;
        double sigma = 0.0;
    };
    std::vector<Cell> cells;
    for (const auto& img : dataset)
        for (const auto& k : cfg.kernels)
            for (double s : cfg.sigmas255) cells.push_back({&img, k, s});

    ResultTable table;
    table.rows.resize(cells.size() * cfg.methods.size());
    // per (kernel, sigma, method, image): the PSNR curve, for the plots;
    // keyed by image name so parallel completion order cannot reorder the
    // averaging
    std::mutex curves_mutex;
    std::map<std::string,
             std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>>>
        curves;

    std::atomic<std::size_t> next{0};
    std::mutex manifest_mutex;
    auto worker = [&] {
        for (;;) {
            std::size_t ci = next.fetch_add(1);
            if (ci >= cells.size()) return;
            const Cell& cell = cells[ci];
            BlurKernel kernel;
            Image degraded;
            std::uint64_t cell_seed = 0;
            std::string kernel_label;
            bool cell_ok = true;
            std::string cell_error;
            try {
                kernel = make_kernel(cell.kernel_spec);
                kernel_label = detail::sanitize_token(
                    kernel.name == cell.kernel_spec ? kernel.name
                                                    : fs::path(kernel.name).stem().string());
                cell_seed = fnv1a64(cell.image->name + "|" + kernel_label + "|" +
                                    detail::sigma_label(cell.sigma));
                degraded = degrade(cell.image->pixels, {kernel, cell.sigma, cell_seed});
            } catch (const std::exception& e) {
                cell_ok = false;
                cell_error = e.what();
            }
            for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
                const std::string& method = cfg.methods[mi];
                ResultRow& row = table.rows[ci * cfg.methods.size() + mi];
                row.image = cell.image->name;
                row.kernel = kernel_label.empty() ? cell.kernel_spec : kernel_label;
                row.sigma255 = cell.sigma;
                row.method = method;
                if (!cell_ok) {
                    row.failed = true;
                    row.error = cell_error;
                    std::lock_guard<std::mutex> lock(manifest_mutex);
                    manifest << "failed " << row.image << " " << row.kernel << " "
                             << detail::sigma_label(row.sigma255) << " " << method << " ("
                             << cell_error << ")\n";
                    continue;
                }
                try {
                    LossSpec loss = make_loss_preset(method, row.kernel, cell.sigma);
                    RunConfig run = cfg.run;
                    run.seed = cell_seed;
                    auto result = run_restoration<float>(degraded, kernel, loss, cfg.net, run,
                                                         cell.image->pixels);
                    row.psnr_peak = result.trace.best_psnr;
                    row.iter_peak = result.trace.best_iteration;
                    row.seconds = result.trace.wall_seconds;
                    // SSIM at the peak iterate; undefined below the window size
                    row.ssim_peak = (result.restored.height >= 11 && result.restored.width >= 11)
                                        ? ssim(result.restored, cell.image->pixels)
                                        : std::numeric_limits<double>::quiet_NaN();
                    std::string stem =
                        detail::cell_stem(row.image, row.kernel, row.sigma255, method);
                    write_png((fs::path(cfg.output_dir) / (stem + ".png")).string(),
                              result.restored);
                    write_trace_csv(result.trace,
                                    (fs::path(cfg.output_dir) / (stem + "_trace.csv")).string());
                    std::vector<std::pair<double, double>> curve;
                    for (const auto& tr : result.trace.rows)
                        if (!std::isnan(tr.psnr)) curve.emplace_back(tr.iteration, tr.psnr);
                    std::lock_guard<std::mutex> lock(curves_mutex);
                    curves[detail::sanitize_token(row.kernel) + "_sigma" +
                           detail::sanitize_token(detail::sigma_label(row.sigma255))][method]
                          [row.image] = std::move(curve);
                } catch (const std::exception& e) {
                    row.failed = true;
                    row.error = e.what();
                    std::lock_guard<std::mutex> lock(manifest_mutex);
                    manifest << "failed " << row.image << " " << row.kernel << " "
                             << detail::sigma_label(row.sigma255) << " " << method << " ("
                             << e.what() << ")\n";
                }
            }
        }
    };

    if (cfg.parallel <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < cfg.parallel; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // per-(kernel, sigma) plots: methods overlaid, PSNR averaged over images
    static const std::map<std::string, std::array<double, 3>> palette = {
        {"LS", {0.85, 0.25, 0.2}},
        {"LS-TV", {0.95, 0.65, 0.1}},
        {"BP", {0.15, 0.35, 0.85}},
        {"BP-TV", {0.1, 0.65, 0.35}}};
    for (const auto& [plot_key, by_method] : curves) {
        std::vector<PlotCurve> plot_curves;
        for (const std::string& method : cfg.methods) {
            auto it = by_method.find(method);
            if (it == by_method.end() || it->second.empty()) continue;
            PlotCurve pc;
            pc.label = method;
            auto pit = palette.find(method);
            if (pit != palette.end()) {
                pc.r = pit->second[0];
                pc.g = pit->second[1];
                pc.b = pit->second[2];
            }
            const auto& runs = it->second;
            std::size_t npts = runs.begin()->second.size();
            for (const auto& [name, r] : runs) npts = std::min(npts, r.size());
            for (std::size_t i = 0; i < npts; ++i) {
                double x = runs.begin()->second[i].first, ysum = 0.0;
                for (const auto& [name, r] : runs) ysum += r[i].second;
                pc.points.emplace_back(x, ysum / double(runs.size()));
            }
            plot_curves.push_back(std::move(pc));
        }
        if (plot_curves.empty()) continue;
        render_line_plot((fs::path(cfg.output_dir) / ("plot_" + plot_key + ".png")).string(),
                         plot_key, "ITERATION", "PSNR [DB]", plot_curves);
    }

    emit_summary(table, (fs::path(cfg.output_dir) / "summary.csv").string());
    return table;
}

}  // namespace dipblur
