#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "dipblur/image.hpp"
#include "testutil.hpp"

using namespace dipblur;

TEST_CASE("uniform kernel is a 9x9 box with taps 1/81") {
    BlurKernel k = make_uniform_kernel();
    CHECK(k.kh == 9);
    CHECK(k.kw == 9);
    for (double t : k.taps) CHECK(t == doctest::Approx(1.0 / 81.0).epsilon(1e-14));
}

TEST_CASE("radial kernel taps follow 1/(1+r^2), normalized") {
    BlurKernel k = make_radial_kernel();
    CHECK(k.kh == 15);
    CHECK(k.kw == 15);
    // grid sum computed by direct summation, independent of the constructor
    double grid_sum = 0.0;
    for (int y = -7; y <= 7; ++y)
        for (int x = -7; x <= 7; ++x) grid_sum += 1.0 / (1.0 + y * y + x * x);
    // pre-normalization center tap is exactly 1, so normalized it is 1/grid_sum
    CHECK(k.at(7, 7) == doctest::Approx(1.0 / grid_sum).epsilon(1e-13));
    CHECK(k.at(0, 0) == doctest::Approx(1.0 / (1.0 + 98.0) / grid_sum).epsilon(1e-13));
}

TEST_CASE("gaussian kernel is 15x15, std 1.6, centered and symmetric") {
    BlurKernel k = make_gaussian_kernel();
    CHECK(k.kh == 15);
    CHECK(k.kw == 15);
    double s = 0.0;
    for (double t : k.taps) s += t;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(k.at(7, 7) > k.at(7, 8));
    CHECK(k.at(3, 5) == doctest::Approx(k.at(11, 9)).epsilon(1e-13));
    CHECK(k.at(7, 6) == doctest::Approx(std::exp(-1.0 / (2 * 1.6 * 1.6)) * k.at(7, 7)).epsilon(1e-13));
}

TEST_CASE("kernel constructors reject bad input") {
    CHECK_THROWS(make_kernel("swirl"));
    CHECK_THROWS(make_gaussian_kernel(0.0));
    CHECK_THROWS(make_gaussian_kernel(-1.0));
}

TEST_CASE("all builtin kernels are nonnegative and sum to 1") {
    for (const char* spec : {"uniform", "gaussian", "radial", "delta"}) {
        BlurKernel k = make_kernel(spec);
        double s = 0.0;
        for (double t : k.taps) {
            CHECK(t >= 0.0);
            s += t;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("blur keeps constant images constant") {
    Image x(16, 16, 1);
    for (double& v : x.data) v = 0.37;
    for (const char* spec : {"uniform", "gaussian", "radial"}) {
        Image y = blur(x, make_kernel(spec));
        for (double v : y.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
    }
}

TEST_CASE("blur with the delta kernel is the identity") {
    Image x = oracle::random_image(12, 17, 3, 11);
    Image y = blur(x, make_delta_kernel());
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("blur matches the nested-loop circular convolution oracle") {
    BlurKernel avg;
    avg.kh = avg.kw = 3;
    avg.taps.assign(9, 1.0 / 9.0);
    avg.name = "avg3";
    Image x = oracle::random_image(4, 4, 1, 21);
    Image got = blur(x, avg);
    Image want = oracle::spatial_circular_conv(x, avg);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));

    // and on an asymmetric kernel to pin the orientation convention
    BlurKernel k;
    k.kh = 3;
    k.kw = 1;
    k.taps = {0.6, 0.3, 0.1};
    k.name = "asym";
    Image got2 = blur(x, k);
    Image want2 = oracle::spatial_circular_conv(x, k);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(got2.data[i] == doctest::Approx(want2.data[i]).epsilon(1e-12));
}

TEST_CASE("blur is linear in the image") {
    BlurKernel k = make_kernel("gaussian");
    Image x1 = oracle::random_image(20, 24, 1, 31);
    Image x2 = oracle::random_image(20, 24, 1, 32);
    double a = 0.73, b = -1.21;
    Image combo(20, 24, 1);
    for (std::size_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = a * x1.data[i] + b * x2.data[i];
    Image lhs = blur(combo, k);
    Image b1 = blur(x1, k), b2 = blur(x2, k);
    for (std::size_t i = 0; i < lhs.data.size(); ++i) {
        double want = a * b1.data[i] + b * b2.data[i];
        CHECK(oracle::rel_err(lhs.data[i], want) < 1e-10);
    }
}

TEST_CASE("blur commutes with circular translation") {
    BlurKernel k = make_kernel("uniform");
    Image x = oracle::random_image(16, 16, 1, 41);
    const int dy = 5, dx = 11;
    auto shift = [&](const Image& img) {
        Image out(img.height, img.width, img.channels);
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int xx = 0; xx < img.width; ++xx)
                    out.at(c, (y + dy) % img.height, (xx + dx) % img.width) = img.at(c, y, xx);
        return out;
    };
    Image a = blur(shift(x), k);
    Image b = shift(blur(x, k));
    for (std::size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
}

TEST_CASE("blur rejects kernels larger than the image") {
    Image x(8, 8, 1);
    CHECK_THROWS(blur(x, make_kernel("radial")));  // 15x15 on 8x8
}

TEST_CASE("degrade with zero noise equals blur exactly") {
    Image x = oracle::random_image(16, 16, 3, 51);
    DegradationSpec spec{make_kernel("uniform"), 0.0, 99};
    Image y = degrade(x, spec);
    Image b = blur(x, spec.kernel);
    CHECK(y.data == b.data);
}

TEST_CASE("degrade is bitwise deterministic under a fixed seed") {
    Image x = oracle::random_image(16, 16, 1, 61);
    DegradationSpec spec{make_kernel("gaussian"), std::sqrt(2.0), 1234};
    Image y1 = degrade(x, spec);
    Image y2 = degrade(x, spec);
    CHECK(y1.data == y2.data);
}

TEST_CASE("degrade noise has the requested standard deviation") {
    Image x = oracle::synthetic_photo(512, 512, 3, 71);
    double sigma = std::sqrt(2.0);
    DegradationSpec spec{make_kernel("uniform"), sigma, 7};
    Image y = degrade(x, spec);
    Image b = blur(x, spec.kernel);
    double mean = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) mean += y.data[i] - b.data[i];
    mean /= double(y.data.size());
    double var = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        double d = y.data[i] - b.data[i] - mean;
        var += d * d;
    }
    var /= double(y.data.size() - 1);
    double want = sigma / 255.0;
    CHECK(std::abs(std::sqrt(var) - want) / want < 0.02);
}

TEST_CASE("degrade does not clip") {
    Image x(32, 32, 1);
    for (double& v : x.data) v = 1.0;
    DegradationSpec spec{make_delta_kernel(), 8.0, 3};
    Image y = degrade(x, spec);
    double mx = 0.0;
    for (double v : y.data) mx = std::max(mx, v);
    CHECK(mx > 1.0);
}

TEST_CASE("8-bit quantization round trip moves values at most 1/510") {
    Rng rng(81);
    for (int i = 0; i < 1000; ++i) {
        double v = rng.next_double();
        double back = from_u8(to_u8(v));
        CHECK(std::abs(v - back) <= 1.0 / 510.0 + 1e-15);
    }
    CHECK(to_u8(-0.5) == 0);
    CHECK(to_u8(1.5) == 255);
}

TEST_CASE("kernel text files round trip and are validated") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "dipblur_kernel_io";
    fs::create_directories(dir);
    BlurKernel k = make_kernel("gaussian");
    std::string path = (dir / "g.txt").string();
    write_kernel_txt(k, path);
    BlurKernel back = make_kernel("file:" + path);
    REQUIRE(back.kh == k.kh);
    REQUIRE(back.kw == k.kw);
    for (std::size_t i = 0; i < k.taps.size(); ++i)
        CHECK(back.taps[i] == doctest::Approx(k.taps[i]).epsilon(1e-14));

    std::string bad = (dir / "bad.txt").string();
    {
        std::ofstream f(bad);
        f << "0.5 -0.25\n0.5 0.25\n";
    }
    CHECK_THROWS(read_kernel_txt(bad));  // negative tap
    std::string even = (dir / "even.txt").string();
    {
        std::ofstream f(even);
        f << "0.5 0.5\n0.5 0.5\n";  // even dimensions
    }
    CHECK_THROWS(read_kernel_txt(even));
    CHECK_THROWS(read_kernel_txt((dir / "missing.txt").string()));
}
