#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pnc/model.hpp"

namespace pnc {

struct Dataset {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // [num_samples, height, width], row-major
  std::vector<int> labels;
  bool has_labels = false;
  std::string source;

  int num_samples() const {
    return height * width == 0
               ? 0
               : static_cast<int>(pixels.size()) / (height * width);
  }
  int dims() const { return height * width; }
  std::span<const uint8_t> image(int i) const {
    return std::span<const uint8_t>(pixels).subspan(
        static_cast<size_t>(i) * dims(), dims());
  }
};

// Parses big-endian IDX files (magic 0x00000803 images / 0x00000801 labels).
// Paths ending in .gz, or gzip-compressed content in general, are read
// transparently. labels_path may be empty.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path = "");

// Writes uncompressed IDX files with the same layout load_idx accepts.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path = "");

// Deterministic seeded permutation split; train gets floor(n * (1 - f)).
std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction,
                                  uint64_t seed);

// Exact sampling from a small model by enumerating the joint and drawing
// from the resulting categorical distribution.
Dataset synthesize(const Model& ground_truth, int num_samples, uint64_t seed,
                   int class_index = 0);

}  // namespace pnc
