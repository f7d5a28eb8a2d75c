#include "slidelm/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace slidelm::wsi {

Hsv rgb_to_hsv(uint8_t r8, uint8_t g8, uint8_t b8) {
  const int r = r8, g = g8, b = b8;
  const int v = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  const int delta = v - mn;

  int s = 0;
  if (v != 0) s = static_cast<int>(std::lround(255.0 * delta / v));

  double h = 0.0;
  if (delta != 0) {
    if (v == r)
      h = 60.0 * (g - b) / delta;
    else if (v == g)
      h = 120.0 + 60.0 * (b - r) / delta;
    else
      h = 240.0 + 60.0 * (r - g) / delta;
    if (h < 0) h += 360.0;
  }
  // h < 360 here, so the half-degree value lands in [0,180]
  const int h_half = static_cast<int>(std::lround(h / 2.0));
  return {h_half, s, v};
}

SlideImage downsample_16x(const SlideImage& img) {
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument("downsample: empty image");
  SlideImage out;
  out.width = (img.width + kDownsample - 1) / kDownsample;
  out.height = (img.height + kDownsample - 1) / kDownsample;
  out.microns_per_pixel = img.microns_per_pixel * kDownsample;
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * 3);

  for (int oy = 0; oy < out.height; ++oy) {
    const double sy = (oy + 0.5) * kDownsample - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int ox = 0; ox < out.width; ++ox) {
      const double sx = (ox + 0.5) * kDownsample - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      uint8_t* dst = out.at(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const double p00 = img.at(x0, y0)[c], p10 = img.at(x1, y0)[c];
        const double p01 = img.at(x0, y1)[c], p11 = img.at(x1, y1)[c];
        const double top = p00 + (p10 - p00) * fx;
        const double bot = p01 + (p11 - p01) * fx;
        const double val = top + (bot - top) * fy;
        dst[c] = static_cast<uint8_t>(std::clamp(std::lround(val), 0L, 255L));
      }
    }
  }
  return out;
}

ForegroundMask foreground_mask(const SlideImage& lowres) {
  ForegroundMask mask;
  mask.width = lowres.width;
  mask.height = lowres.height;
  mask.fg.resize(static_cast<size_t>(mask.width) * mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const uint8_t* p = lowres.at(x, y);
      const Hsv hsv = rgb_to_hsv(p[0], p[1], p[2]);
      const bool fg = hsv.h >= kHueLo && hsv.h <= kHueHi && hsv.s >= kSatLo &&
                      hsv.s <= kSatHi && hsv.v >= kValLo && hsv.v <= kValHi;
      mask.fg[static_cast<size_t>(y) * mask.width + x] = fg ? 1 : 0;
    }
  }
  return mask;
}

std::vector<TileRecord> tile_and_filter(const SlideImage& img, const ForegroundMask& mask,
                                        const std::string& slide_id,
                                        double min_tissue_fraction) {
  std::vector<TileRecord> tiles;
  const int nx = img.width / kTileSize;
  const int ny = img.height / kTileSize;
  // 224 is a multiple of 16, so a full tile covers exactly 14x14 mask cells.
  static_assert(kTileSize % kDownsample == 0);
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      int fg_cells = 0;
      for (int cy = gy * kCellsPerTile; cy < (gy + 1) * kCellsPerTile; ++cy)
        for (int cx = gx * kCellsPerTile; cx < (gx + 1) * kCellsPerTile; ++cx)
          fg_cells += mask.at(cx, cy) ? 1 : 0;
      const double fraction =
          static_cast<double>(fg_cells) / (kCellsPerTile * kCellsPerTile);
      if (fraction >= min_tissue_fraction) {
        tiles.push_back(TileRecord{slide_id, gx, gy, gx * kTileSize, gy * kTileSize,
                                   fraction});
      }
    }
  }
  return tiles;
}

SlideImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a binary PPM: " + path);
  auto next_int = [&in, &path]() {
    // skips whitespace and '#' comments
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error("read_ppm: malformed header: " + path);
    return v;
  };
  SlideImage img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_ppm: only 8-bit rasters supported");
  in.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<size_t>(in.gcount()) != img.pixels.size())
    throw std::runtime_error("read_ppm: truncated pixel data: " + path);
  return img;
}

void write_ppm(const std::string& path, const SlideImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["slide_id"] = e.slide_id;
    j["grid_x"] = e.grid_x;
    j["grid_y"] = e.grid_y;
    j["tissue_fraction"] = e.tissue_fraction;
    if (!e.specimen_id.empty() && e.specimen_id != e.slide_id)
      j["specimen_id"] = e.specimen_id;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.slide_id = j.at("slide_id").get<std::string>();
    e.grid_x = j.at("grid_x").get<int>();
    e.grid_y = j.at("grid_y").get<int>();
    e.tissue_fraction = j.at("tissue_fraction").get<double>();
    e.specimen_id = j.contains("specimen_id") ? j["specimen_id"].get<std::string>()
                                              : e.slide_id;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace slidelm::wsi
