#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xagg/heatmap.hpp"
#include "xagg/segment.hpp"
#include "xagg/tensor.hpp"

namespace xagg::io {

/// In-memory image classification dataset; values in [0,1].
struct Dataset {
  std::string id;
  Shape3 shape{1, 28, 28};
  int n = 0;
  std::vector<double> images;       // n * shape.count(), row-major
  std::vector<std::uint8_t> labels;
  double mean = 0;  // per-channel dataset mean (single channel here)

  ImageTensor image(int i) const;
  int label(int i) const { return labels[static_cast<std::size_t>(i)]; }

  /// First n images as a new dataset (for toy runs).
  Dataset head(int count) const;
};

/// Parses the big-endian IDX pair (magic 0x803 images / 0x801 labels);
/// unsigned bytes are scaled to [0,1]. Throws ParseError on bad magic,
/// truncation, or image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Dataset root: $XAGG_DATA_DIR if set, else "./data".
std::string dataset_root();

/// Loads <root>/<name>/{train,t10k}-... IDX files; empty when missing.
std::optional<Dataset> load_standard(const std::string& name, bool train,
                                     const std::string& root = dataset_root());

/// Offline corpus with known ground-truth relevance: each class is a bright
/// block at a fixed position over background noise.
struct SyntheticSpec {
  int classes = 4;
  int height = 28, width = 28;
  int block = 6;          // block side length
  double noise = 0.15;    // uniform background noise amplitude
  std::uint64_t seed = 1;
  /// Optional explicit per-class block layout (y, x, h, w); auto-placed on a
  /// disjoint grid when empty.
  std::vector<std::array<int, 4>> layout;

  std::vector<std::array<int, 4>> resolved_layout() const;
};

struct SyntheticData {
  Dataset data;
  std::vector<Heatmap> truth;  // per image: 1 inside the class block, else 0
};

SyntheticData make_synthetic(const SyntheticSpec& spec, int n);

// --- binary codecs (bit-exact round trips) ---

void write_heatmap(const std::string& path, const Heatmap& e);
Heatmap read_heatmap(const std::string& path);

void write_segment_map(const std::string& path, const seg::SegmentMap& m);
seg::SegmentMap read_segment_map(const std::string& path);

// --- rendering ---

/// 8-bit grayscale render; clip_p99 maps [min, 99th percentile] instead of
/// the full range.
void render_pgm(const std::string& path, const Heatmap& e, bool clip_p99 = false);
void render_png(const std::string& path, const Heatmap& e, bool clip_p99 = false);

// --- CSV ---

/// Writes header + rows with LF endings; cells are written verbatim.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Fixed-format float cell (deterministic across runs).
std::string csv_double(double v);

std::uint32_t file_crc32(const std::string& path);

}  // namespace xagg::io
