#include "ellada/plot.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ellada::plot {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range nice_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string fmt_tick(double v) {
  char buf[32];
  double a = std::abs(v);
  if (v == 0.0) return "0";
  if (a >= 1e4 || a < 1e-3) {
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%g", v);
  }
  return buf;
}

struct Extent {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -std::numeric_limits<double>::infinity();
  double ylo = std::numeric_limits<double>::infinity(), yhi = -std::numeric_limits<double>::infinity();
};

Extent data_extent(const Figure& f) {
  Extent e;
  for (const auto& s : f.lines) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double yv = f.log_y ? (s.y[i] > 0 ? std::log10(s.y[i]) : std::nan("")) : s.y[i];
      if (!std::isfinite(s.x[i]) || !std::isfinite(yv)) continue;
      e.xlo = std::min(e.xlo, s.x[i]);
      e.xhi = std::max(e.xhi, s.x[i]);
      e.ylo = std::min(e.ylo, yv);
      e.yhi = std::max(e.yhi, yv);
    }
  }
  for (std::size_t i = 0; i < f.bars.size(); ++i) {
    double yv = f.log_y ? (f.bars[i].second > 0 ? std::log10(f.bars[i].second) : 0.0)
                        : f.bars[i].second;
    e.ylo = std::min(e.ylo, std::min(0.0, yv));
    e.yhi = std::max(e.yhi, yv);
  }
  if (!std::isfinite(e.xlo)) {
    e.xlo = 0;
    e.xhi = 1;
  }
  if (!std::isfinite(e.ylo)) {
    e.ylo = 0;
    e.yhi = 1;
  }
  return e;
}

// --------------------------------------------------------------------------
// raster backend for PNG
// --------------------------------------------------------------------------

struct Raster {
  int w, h;
  std::vector<std::uint8_t> px;  // RGB

  Raster(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3, 255) {}

  void set(int x, int y, std::uint32_t rgb) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    px[i] = (rgb >> 16) & 0xff;
    px[i + 1] = (rgb >> 8) & 0xff;
    px[i + 2] = rgb & 0xff;
  }

  void line(double x0, double y0, double x1, double y1, std::uint32_t rgb) {
    double dx = x1 - x0, dy = y1 - y0;
    int n = static_cast<int>(std::max(std::abs(dx), std::abs(dy))) + 1;
    for (int i = 0; i <= n; ++i) {
      double t = static_cast<double>(i) / n;
      int x = static_cast<int>(std::lround(x0 + t * dx));
      int y = static_cast<int>(std::lround(y0 + t * dy));
      set(x, y, rgb);
      set(x + 1, y, rgb);  // 2px stroke
    }
  }

  void fill_rect(int x0, int y0, int x1, int y1, std::uint32_t rgb) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, rgb);
    }
  }

  // 5x7 glyphs for tick labels (digits and the few symbols they need)
  void text(int x, int y, const std::string& s, std::uint32_t rgb) {
    static const std::uint8_t font[][7] = {
        {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e},  // 0
        {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 1
        {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f},  // 2
        {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e},  // 3
        {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02},  // 4
        {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e},  // 5
        {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e},  // 6
        {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
        {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // 8
        {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c},  // 9
        {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00},  // -
        {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c},  // .
        {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e},  // e
        {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00},  // +
    };
    auto glyph = [](char ch) -> int {
      if (ch >= '0' && ch <= '9') return ch - '0';
      switch (ch) {
        case '-': return 10;
        case '.': return 11;
        case 'e': case 'E': return 12;
        case '+': return 13;
        default: return -1;
      }
    };
    int cx = x;
    for (char ch : s) {
      int g = glyph(ch);
      if (g >= 0) {
        for (int r = 0; r < 7; ++r) {
          for (int c = 0; c < 5; ++c) {
            if (font[g][r] & (1 << (4 - c))) set(cx + c, y + r, rgb);
          }
        }
      }
      cx += 6;
    }
  }
};

std::uint32_t parse_color(const std::string& css) {
  if (css.size() == 7 && css[0] == '#') {
    return static_cast<std::uint32_t>(std::strtoul(css.c_str() + 1, nullptr, 16));
  }
  return 0x000000;
}

void png_chunk(std::ofstream& os, const char* tag, const std::vector<std::uint8_t>& data) {
  auto be32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 8), static_cast<char>(v)};
    os.write(b, 4);
  };
  be32(static_cast<std::uint32_t>(data.size()));
  os.write(tag, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), data.size());
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(tag), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  be32(static_cast<std::uint32_t>(crc));
}

void write_png_file(const Raster& r, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<std::uint8_t> ihdr(13);
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    ihdr[at] = v >> 24;
    ihdr[at + 1] = v >> 16;
    ihdr[at + 2] = v >> 8;
    ihdr[at + 3] = v;
  };
  put32(0, static_cast<std::uint32_t>(r.w));
  put32(4, static_cast<std::uint32_t>(r.h));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // RGB
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  png_chunk(os, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve((static_cast<std::size_t>(r.w) * 3 + 1) * r.h);
  for (int y = 0; y < r.h; ++y) {
    raw.push_back(0);  // filter: none
    const std::uint8_t* row = r.px.data() + static_cast<std::size_t>(y) * r.w * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(r.w) * 3);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> zdata(zlen);
  if (compress2(zdata.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("png deflate failed");
  }
  zdata.resize(zlen);
  png_chunk(os, "IDAT", zdata);
  png_chunk(os, "IEND", {});
}

}  // namespace

void Figure::write_svg(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const int ml = 70, mr = 20, mt = 40, mb = 50;
  const double pw = width - ml - mr, ph = height - mt - mb;
  Extent e = data_extent(*this);

  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
     << "' viewBox='0 0 " << width << " " << height << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << width / 2 << "' y='22' text-anchor='middle' font-size='15' "
     << "font-family='sans-serif'>" << title << "</text>\n";

  if (!bars.empty()) {
    Range ry = nice_range(std::min(0.0, e.ylo), e.yhi);
    auto ypix = [&](double v) { return mt + ph * (1.0 - (v - ry.lo) / (ry.hi - ry.lo)); };
    double bw = pw / (2.0 * bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
      double v = log_y ? (bars[i].second > 0 ? std::log10(bars[i].second) : 0.0) : bars[i].second;
      double cx = ml + pw * (i + 0.5) / bars.size();
      os << "<rect x='" << cx - bw / 2 << "' y='" << std::min(ypix(v), ypix(0.0)) << "' width='"
         << bw << "' height='" << std::abs(ypix(v) - ypix(0.0)) << "' fill='"
         << kPalette[i % 8] << "'/>\n";
      os << "<text x='" << cx << "' y='" << height - mb + 18
         << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << bars[i].first
         << "</text>\n";
      os << "<text x='" << cx << "' y='" << ypix(v) - 6
         << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
         << fmt_tick(bars[i].second) << "</text>\n";
    }
    os << "<line x1='" << ml << "' y1='" << ypix(0.0) << "' x2='" << ml + pw << "' y2='"
       << ypix(0.0) << "' stroke='black'/>\n";
    os << "</svg>\n";
    return;
  }

  Range rx = nice_range(e.xlo, e.xhi), ry = nice_range(e.ylo, e.yhi);
  auto xpix = [&](double v) { return ml + pw * (v - rx.lo) / (rx.hi - rx.lo); };
  auto ypix = [&](double v) { return mt + ph * (1.0 - (v - ry.lo) / (ry.hi - ry.lo)); };

  os << "<rect x='" << ml << "' y='" << mt << "' width='" << pw << "' height='" << ph
     << "' fill='none' stroke='black'/>\n";
  for (int i = 0; i <= 5; ++i) {
    double xv = rx.lo + (rx.hi - rx.lo) * i / 5.0;
    double yv = ry.lo + (ry.hi - ry.lo) * i / 5.0;
    os << "<text x='" << xpix(xv) << "' y='" << height - mb + 18
       << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << fmt_tick(xv)
       << "</text>\n";
    std::string ylab = fmt_tick(log_y ? std::pow(10.0, yv) : yv);
    os << "<text x='" << ml - 8 << "' y='" << ypix(yv) + 4
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << ylab << "</text>\n";
    os << "<line x1='" << ml << "' y1='" << ypix(yv) << "' x2='" << ml + pw << "' y2='"
       << ypix(yv) << "' stroke='#dddddd'/>\n";
  }
  os << "<text x='" << ml + pw / 2 << "' y='" << height - 10
     << "' text-anchor='middle' font-size='13' font-family='sans-serif'>" << x_label
     << "</text>\n";
  os << "<text x='16' y='" << mt + ph / 2
     << "' text-anchor='middle' font-size='13' font-family='sans-serif' transform='rotate(-90 16 "
     << mt + ph / 2 << ")'>" << y_label << "</text>\n";

  int ci = 0;
  for (const auto& s : lines) {
    std::string color = s.color.empty() ? kPalette[ci % 8] : s.color;
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.6' points='";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double yv = log_y ? (s.y[i] > 0 ? std::log10(s.y[i]) : std::nan("")) : s.y[i];
      if (!std::isfinite(yv) || !std::isfinite(s.x[i])) continue;
      os << xpix(s.x[i]) << "," << ypix(yv) << " ";
    }
    os << "'/>\n";
    os << "<text x='" << ml + pw - 8 << "' y='" << mt + 16 + 15 * ci
       << "' text-anchor='end' font-size='12' font-family='sans-serif' fill='" << color << "'>"
       << s.label << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

void Figure::write_png(const std::string& path) const {
  const int ml = 70, mr = 20, mt = 30, mb = 40;
  Raster r(width, height);
  const double pw = width - ml - mr, ph = height - mt - mb;
  Extent e = data_extent(*this);

  if (!bars.empty()) {
    Range ry = nice_range(std::min(0.0, e.ylo), e.yhi);
    auto ypix = [&](double v) { return mt + ph * (1.0 - (v - ry.lo) / (ry.hi - ry.lo)); };
    double bw = pw / (2.0 * bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
      double v = log_y ? (bars[i].second > 0 ? std::log10(bars[i].second) : 0.0) : bars[i].second;
      double cx = ml + pw * (i + 0.5) / bars.size();
      r.fill_rect(static_cast<int>(cx - bw / 2), static_cast<int>(ypix(v)),
                  static_cast<int>(cx + bw / 2), static_cast<int>(ypix(0.0)),
                  parse_color(kPalette[i % 8]));
      r.text(static_cast<int>(cx - 15), static_cast<int>(ypix(v)) - 10, fmt_tick(bars[i].second),
             0);
    }
    write_png_file(r, path);
    return;
  }

  Range rx = nice_range(e.xlo, e.xhi), ry = nice_range(e.ylo, e.yhi);
  auto xpix = [&](double v) { return ml + pw * (v - rx.lo) / (rx.hi - rx.lo); };
  auto ypix = [&](double v) { return mt + ph * (1.0 - (v - ry.lo) / (ry.hi - ry.lo)); };

  r.line(ml, mt, ml, mt + ph, 0);
  r.line(ml, mt + ph, ml + pw, mt + ph, 0);
  for (int i = 0; i <= 5; ++i) {
    double xv = rx.lo + (rx.hi - rx.lo) * i / 5.0;
    double yv = ry.lo + (ry.hi - ry.lo) * i / 5.0;
    r.text(static_cast<int>(xpix(xv)) - 12, mt + static_cast<int>(ph) + 8, fmt_tick(xv), 0);
    r.text(4, static_cast<int>(ypix(yv)) - 3, fmt_tick(log_y ? std::pow(10.0, yv) : yv), 0);
  }
  int ci = 0;
  for (const auto& s : lines) {
    std::uint32_t color = parse_color(s.color.empty() ? kPalette[ci % 8] : s.color);
    bool has_prev = false;
    double px = 0, py = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double yv = log_y ? (s.y[i] > 0 ? std::log10(s.y[i]) : std::nan("")) : s.y[i];
      if (!std::isfinite(yv) || !std::isfinite(s.x[i])) {
        has_prev = false;
        continue;
      }
      double cx = xpix(s.x[i]), cy = ypix(yv);
      if (has_prev) r.line(px, py, cx, cy, color);
      px = cx;
      py = cy;
      has_prev = true;
    }
    ++ci;
  }
  write_png_file(r, path);
}

}  // namespace ellada::plot
