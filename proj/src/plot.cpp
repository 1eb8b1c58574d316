#include "dada/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

namespace dada::plot {

namespace {

using Glyph = std::array<std::uint8_t, 7>;  // 5 bits per row, MSB left

const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> glyphs{
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}}, {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {' ', {0, 0, 0, 0, 0, 0, 0}},
    };
    return glyphs;
}

struct Canvas {
    int w, h;
    std::vector<std::uint8_t> px;

    Canvas(int width, int height) : w(width), h(height), px(static_cast<std::size_t>(width * height * 3), 255) {}

    void set(int x, int y, std::array<std::uint8_t, 3> c) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        auto* p = &px[static_cast<std::size_t>((y * w + x) * 3)];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    void fill(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
            for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
    }
    void text(int x, int y, const std::string& s, int scale, std::array<std::uint8_t, 3> c) {
        for (char ch : s) {
            const auto it = font().find(ch);
            if (it != font().end())
                for (int r = 0; r < 7; ++r)
                    for (int b = 0; b < 5; ++b)
                        if (it->second[static_cast<std::size_t>(r)] & (0x10 >> b))
                            fill(x + b * scale, y + r * scale, x + b * scale + scale - 1, y + r * scale + scale - 1, c);
            x += 6 * scale;
        }
    }
};

int text_width(const std::string& s, int scale) { return static_cast<int>(s.size()) * 6 * scale - scale; }

}  // namespace

io::Image8 bar_chart(const std::vector<Bar>& bars, double y_max) {
    constexpr int bar_w = 48, gap = 24, margin = 40, plot_h = 300, top = 30, bottom = 40;
    const int n = static_cast<int>(bars.size());
    const int width = margin * 2 + std::max(1, n) * (bar_w + gap);
    const int height = top + plot_h + bottom;
    Canvas cv(width, height);
    if (!(y_max > 0)) y_max = 1;
    const std::array<std::uint8_t, 3> axis{40, 40, 40}, bar{70, 110, 170}, whisker{200, 60, 40}, grid{225, 225, 225};
    auto ypix = [&](double v) {
        const double t = std::clamp(v / y_max, 0.0, 1.0);
        return top + plot_h - static_cast<int>(std::lround(t * plot_h));
    };
    for (int k = 1; k <= 4; ++k) cv.fill(margin, ypix(y_max * k / 4), width - margin, ypix(y_max * k / 4), grid);
    cv.fill(margin - 1, top, margin - 1, top + plot_h, axis);
    cv.fill(margin - 1, top + plot_h, width - margin, top + plot_h, axis);
    for (int i = 0; i < n; ++i) {
        const auto& b = bars[static_cast<std::size_t>(i)];
        const int x0 = margin + gap / 2 + i * (bar_w + gap);
        cv.fill(x0, ypix(b.value), x0 + bar_w - 1, top + plot_h - 1, bar);
        const int cx = x0 + bar_w / 2;
        cv.fill(cx, ypix(b.hi), cx, ypix(b.lo), whisker);
        cv.fill(cx - 6, ypix(b.hi), cx + 6, ypix(b.hi), whisker);
        cv.fill(cx - 6, ypix(b.lo), cx + 6, ypix(b.lo), whisker);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f", b.value * 100.0);
        cv.text(cx - text_width(buf, 1) / 2, std::max(2, ypix(b.hi) - 10), buf, 1, axis);
        cv.text(cx - text_width(b.label, 2) / 2, top + plot_h + 10, b.label, 2, axis);
    }
    io::Image8 img;
    img.width = static_cast<std::uint32_t>(width);
    img.height = static_cast<std::uint32_t>(height);
    img.channels = 3;
    img.pixels = std::move(cv.px);
    return img;
}

}  // namespace dada::plot
