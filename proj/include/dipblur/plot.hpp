#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "dipblur/image.hpp"
#include "dipblur/png_io.hpp"

namespace dipblur {

struct PlotCurve {
    std::string label;
    double r = 0.0, g = 0.0, b = 0.0;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail {

// 5x7 column-encoded glyphs, ASCII 0x20..0x5A; lowercase is upmapped
inline const unsigned char* glyph5x7(char ch) {
    static const unsigned char font[][5] = {
        {0x00, 0x00, 0x00, 0x00, 0x00}, {0x00, 0x00, 0x5F, 0x00, 0x00},
        {0x00, 0x07, 0x00, 0x07, 0x00}, {0x14, 0x7F, 0x14, 0x7F, 0x14},
        {0x24, 0x2A, 0x7F, 0x2A, 0x12}, {0x23, 0x13, 0x08, 0x64, 0x62},
        {0x36, 0x49, 0x56, 0x20, 0x50}, {0x00, 0x05, 0x03, 0x00, 0x00},
        {0x00, 0x1C, 0x22, 0x41, 0x00}, {0x00, 0x41, 0x22, 0x1C, 0x00},
        {0x14, 0x08, 0x3E, 0x08, 0x14}, {0x08, 0x08, 0x3E, 0x08, 0x08},
        {0x00, 0x50, 0x30, 0x00, 0x00}, {0x08, 0x08, 0x08, 0x08, 0x08},
        {0x00, 0x60, 0x60, 0x00, 0x00}, {0x20, 0x10, 0x08, 0x04, 0x02},
        {0x3E, 0x51, 0x49, 0x45, 0x3E}, {0x00, 0x42, 0x7F, 0x40, 0x00},
        {0x42, 0x61, 0x51, 0x49, 0x46}, {0x21, 0x41, 0x49, 0x4D, 0x33},
        {0x18, 0x14, 0x12, 0x7F, 0x10}, {0x27, 0x45, 0x45, 0x45, 0x39},
        {0x3C, 0x4A, 0x49, 0x49, 0x31}, {0x41, 0x21, 0x11, 0x09, 0x07},
        {0x36, 0x49, 0x49, 0x49, 0x36}, {0x46, 0x49, 0x49, 0x29, 0x1E},
        {0x00, 0x36, 0x36, 0x00, 0x00}, {0x00, 0x56, 0x36, 0x00, 0x00},
        {0x00, 0x08, 0x14, 0x22, 0x41}, {0x14, 0x14, 0x14, 0x14, 0x14},
        {0x41, 0x22, 0x14, 0x08, 0x00}, {0x02, 0x01, 0x59, 0x09, 0x06},
        {0x3E, 0x41, 0x5D, 0x59, 0x4E}, {0x7C, 0x12, 0x11, 0x12, 0x7C},
        {0x7F, 0x49, 0x49, 0x49, 0x36}, {0x3E, 0x41, 0x41, 0x41, 0x22},
        {0x7F, 0x41, 0x41, 0x41, 0x3E}, {0x7F, 0x49, 0x49, 0x49, 0x41},
        {0x7F, 0x09, 0x09, 0x09, 0x01}, {0x3E, 0x41, 0x41, 0x51, 0x73},
        {0x7F, 0x08, 0x08, 0x08, 0x7F}, {0x00, 0x41, 0x7F, 0x41, 0x00},
        {0x20, 0x40, 0x41, 0x3F, 0x01}, {0x7F, 0x08, 0x14, 0x22, 0x41},
        {0x7F, 0x40, 0x40, 0x40, 0x40}, {0x7F, 0x02, 0x1C, 0x02, 0x7F},
        {0x7F, 0x04, 0x08, 0x10, 0x7F}, {0x3E, 0x41, 0x41, 0x41, 0x3E},
        {0x7F, 0x09, 0x09, 0x09, 0x06}, {0x3E, 0x41, 0x51, 0x21, 0x5E},
        {0x7F, 0x09, 0x19, 0x29, 0x46}, {0x26, 0x49, 0x49, 0x49, 0x32},
        {0x03, 0x01, 0x7F, 0x01, 0x03}, {0x3F, 0x40, 0x40, 0x40, 0x3F},
        {0x1F, 0x20, 0x40, 0x20, 0x1F}, {0x3F, 0x40, 0x38, 0x40, 0x3F},
        {0x63, 0x14, 0x08, 0x14, 0x63}, {0x03, 0x04, 0x78, 0x04, 0x03},
        {0x61, 0x59, 0x49, 0x4D, 0x43}};
    unsigned char c = (unsigned char)std::toupper((unsigned char)ch);
    if (c < 0x20 || c > 0x5A) c = ' ';
    return font[c - 0x20];
}

inline void set_pixel(Image& img, int x, int y, double r, double g, double b) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(0, y, x) = r;
    img.at(1, y, x) = g;
    img.at(2, y, x) = b;
}

inline void draw_text(Image& img, int x, int y, const std::string& text, double r = 0, double g = 0,
                      double b = 0) {
    for (char ch : text) {
        const unsigned char* cols = glyph5x7(ch);
        for (int cx = 0; cx < 5; ++cx)
            for (int cy = 0; cy < 7; ++cy)
                if (cols[cx] & (1 << cy)) set_pixel(img, x + cx, y + cy, r, g, b);
        x += 6;
    }
}

inline void draw_line(Image& img, double x0, double y0, double x1, double y1, double r, double g,
                      double b) {
    double dx = x1 - x0, dy = y1 - y0;
    int steps = int(std::ceil(std::max(std::abs(dx), std::abs(dy)))) + 1;
    for (int i = 0; i <= steps; ++i) {
        double t = double(i) / steps;
        set_pixel(img, int(std::lround(x0 + t * dx)), int(std::lround(y0 + t * dy)), r, g, b);
    }
}

inline std::string format_tick(double v) {
    char buf[48];
    if (std::abs(v) >= 1000.0 || v == std::floor(v))
        std::snprintf(buf, sizeof buf, "%.0f", v);
    else
        std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace detail

// Static line plot; axes, ticks, legend and title with the builtin font.
inline void render_line_plot(const std::string& path, const std::string& title,
                             const std::string& xlabel, const std::string& ylabel,
                             const std::vector<PlotCurve>& curves, int width = 720,
                             int height = 480) {
    Image img(height, width, 3);
    img.data.assign(img.data.size(), 1.0);  // white

    const int ml = 70, mr = 20, mt = 40, mb = 50;
    const int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;

    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    bool have = false;
    for (const auto& c : curves)
        for (auto [x, y] : c.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (!have) {
                xmin = xmax = x;
                ymin = ymax = y;
                have = true;
            } else {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    if (!have) {
        xmin = ymin = 0.0;
        xmax = ymax = 1.0;
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto tx = [&](double x) { return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0); };
    auto ty = [&](double y) { return py1 - (y - ymin) / (ymax - ymin) * (py1 - py0); };

    // grid and ticks
    const int nticks = 5;
    for (int i = 0; i <= nticks; ++i) {
        double fx = xmin + (xmax - xmin) * i / nticks;
        double fy = ymin + (ymax - ymin) * i / nticks;
        detail::draw_line(img, tx(fx), py0, tx(fx), py1, 0.9, 0.9, 0.9);
        detail::draw_line(img, px0, ty(fy), px1, ty(fy), 0.9, 0.9, 0.9);
        std::string xs = detail::format_tick(fx);
        detail::draw_text(img, int(tx(fx)) - int(xs.size()) * 3, py1 + 8, xs);
        std::string ys = detail::format_tick(fy);
        detail::draw_text(img, px0 - 8 - int(ys.size()) * 6, int(ty(fy)) - 3, ys);
    }
    detail::draw_line(img, px0, py1, px1, py1, 0, 0, 0);
    detail::draw_line(img, px0, py0, px0, py1, 0, 0, 0);

    for (const auto& c : curves) {
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            auto [xa, ya] = c.points[i - 1];
            auto [xb, yb] = c.points[i];
            if (!std::isfinite(ya) || !std::isfinite(yb)) continue;
            detail::draw_line(img, tx(xa), ty(ya), tx(xb), ty(yb), c.r, c.g, c.b);
        }
    }

    detail::draw_text(img, px0, 12, title);
    detail::draw_text(img, (px0 + px1) / 2 - int(xlabel.size()) * 3, height - 16, xlabel);
    detail::draw_text(img, 6, py0 - 14, ylabel);

    int lx = px0 + 10, ly = py0 + 8;
    for (const auto& c : curves) {
        detail::draw_line(img, lx, ly + 3, lx + 18, ly + 3, c.r, c.g, c.b);
        detail::draw_line(img, lx, ly + 4, lx + 18, ly + 4, c.r, c.g, c.b);
        detail::draw_text(img, lx + 24, ly, c.label);
        ly += 12;
    }

    write_png(path, img);
}

}  // namespace dipblur
