#pragma once

// Slide rasters, the 16x bilinear downsample, HSV foreground detection and
// the 224x224 grid tiler. All pure functions over immutable buffers.

#include <cstdint>
#include <string>
#include <vector>

namespace slidelm::wsi {

inline constexpr int kTileSize = 224;
inline constexpr int kDownsample = 16;
inline constexpr int kCellsPerTile = kTileSize / kDownsample;  // 14

// HSV foreground window: h in [90,180] (half-degree scale), s in [8,255],
// v in [103,255]; all bounds inclusive.
inline constexpr int kHueLo = 90, kHueHi = 180;
inline constexpr int kSatLo = 8, kSatHi = 255;
inline constexpr int kValLo = 103, kValHi = 255;

struct SlideImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // RGB8, row-major
  double microns_per_pixel = 0.5;

  uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<size_t>(y) * width + x); }
  const uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
};

struct TileRecord {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  int origin_x_px = 0;  // 224 * grid_x
  int origin_y_px = 0;
  double tissue_fraction = 0.0;
};

struct ForegroundMask {
  int width = 0;   // ceil(image width / 16)
  int height = 0;  // ceil(image height / 16)
  std::vector<uint8_t> fg;
  bool at(int x, int y) const { return fg[static_cast<size_t>(y) * width + x] != 0; }
};

struct Hsv {
  int h;  // [0,180]
  int s;  // [0,255]
  int v;  // [0,255]
};

// Hexcone conversion with hue on the half-degree 0-180 scale, rounded to
// nearest integer.
Hsv rgb_to_hsv(uint8_t r, uint8_t g, uint8_t b);

// ceil(dim/16) output, bilinear at cell centers, edge-clamped.
SlideImage downsample_16x(const SlideImage& img);

ForegroundMask foreground_mask(const SlideImage& lowres);

// Non-overlapping full 224x224 tiles anchored at (0,0); partial edge tiles
// are discarded; a tile is kept iff its mask tissue fraction is >= 0.25.
std::vector<TileRecord> tile_and_filter(const SlideImage& img, const ForegroundMask& mask,
                                        const std::string& slide_id,
                                        double min_tissue_fraction = 0.25);

// Binary PPM (P6) raster IO.
SlideImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const SlideImage& img);

// Tile manifest: line-delimited JSON records
// {slide_id, grid_x, grid_y, tissue_fraction[, specimen_id]}.
struct ManifestEntry {
  std::string specimen_id;  // defaults to slide_id when absent in the file
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  double tissue_fraction = 0.0;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace slidelm::wsi
