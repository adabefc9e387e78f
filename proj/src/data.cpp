#include "pnc/data.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "pnc/oracle.hpp"

namespace pnc {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

std::vector<uint8_t> read_file_maybe_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::data, "cannot open " + path);
  std::vector<uint8_t> bytes;
  uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0)
    bytes.insert(bytes.end(), buf, buf + n);
  bool ok = n == 0;
  gzclose(f);
  require(ok, ErrorKind::data, "read error in " + path);
  return bytes;
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off,
                   const std::string& path) {
  require(off + 4 <= b.size(), ErrorKind::data,
          path + ": truncated at byte offset " + std::to_string(off));
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) |
         (uint32_t(b[off + 2]) << 8) | uint32_t(b[off + 3]);
}

void write_be32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v >> 24));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v));
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorKind::data, "cannot write " + path);
  size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  bool ok = n == bytes.size() && std::fclose(f) == 0;
  require(ok, ErrorKind::data, "write error in " + path);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  auto bytes = read_file_maybe_gz(images_path);
  uint32_t magic = read_be32(bytes, 0, images_path);
  require(magic == kImageMagic, ErrorKind::data,
          images_path + ": bad image magic at byte offset 0 (got " +
              std::to_string(magic) + ")");
  uint32_t n = read_be32(bytes, 4, images_path);
  uint32_t h = read_be32(bytes, 8, images_path);
  uint32_t w = read_be32(bytes, 12, images_path);
  size_t payload = size_t(n) * h * w;
  require(bytes.size() == 16 + payload, ErrorKind::data,
          images_path + ": payload size mismatch, expected " +
              std::to_string(16 + payload) + " bytes, got " +
              std::to_string(bytes.size()));
  Dataset ds;
  ds.height = static_cast<int>(h);
  ds.width = static_cast<int>(w);
  ds.pixels.assign(bytes.begin() + 16, bytes.end());
  ds.source = images_path;

  if (!labels_path.empty()) {
    auto lb = read_file_maybe_gz(labels_path);
    uint32_t lmagic = read_be32(lb, 0, labels_path);
    require(lmagic == kLabelMagic, ErrorKind::data,
            labels_path + ": bad label magic at byte offset 0 (got " +
                std::to_string(lmagic) + ")");
    uint32_t ln = read_be32(lb, 4, labels_path);
    require(lb.size() == 8 + ln, ErrorKind::data,
            labels_path + ": payload size mismatch");
    require(ln == n, ErrorKind::data,
            "label count " + std::to_string(ln) +
                " does not match image count " + std::to_string(n));
    ds.labels.assign(lb.begin() + 8, lb.end());
    ds.has_labels = true;
  }
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  std::vector<uint8_t> bytes;
  write_be32(bytes, kImageMagic);
  write_be32(bytes, static_cast<uint32_t>(ds.num_samples()));
  write_be32(bytes, static_cast<uint32_t>(ds.height));
  write_be32(bytes, static_cast<uint32_t>(ds.width));
  bytes.insert(bytes.end(), ds.pixels.begin(), ds.pixels.end());
  write_file(images_path, bytes);

  if (!labels_path.empty()) {
    require(ds.has_labels, ErrorKind::data, "dataset has no labels to save");
    std::vector<uint8_t> lb;
    write_be32(lb, kLabelMagic);
    write_be32(lb, static_cast<uint32_t>(ds.labels.size()));
    for (int y : ds.labels) lb.push_back(static_cast<uint8_t>(y));
    write_file(labels_path, lb);
  }
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction,
                                  uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::config,
          "val_fraction must be in (0, 1)");
  const int n = ds.num_samples();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(static_cast<uint64_t>(i) + 1)]);
  const int train_n = static_cast<int>(
      std::floor(n * (1.0 - val_fraction)));

  auto take = [&](int begin, int count) {
    Dataset out;
    out.height = ds.height;
    out.width = ds.width;
    out.has_labels = ds.has_labels;
    out.source = ds.source;
    for (int i = begin; i < begin + count; ++i) {
      auto img = ds.image(perm[i]);
      out.pixels.insert(out.pixels.end(), img.begin(), img.end());
      if (ds.has_labels) out.labels.push_back(ds.labels[perm[i]]);
    }
    return out;
  };
  return {take(0, train_n), take(train_n, n - train_n)};
}

Dataset synthesize(const Model& ground_truth, int num_samples, uint64_t seed,
                   int class_index) {
  const auto& spec = ground_truth.spec();
  require(spec.variable_count() <= 16, ErrorKind::validation,
          "synthesize: model too large for exact sampling");
  require(spec.num_categories <= 256, ErrorKind::validation,
          "synthesize: categories must fit a byte");
  JointTable table = enumerate_joint(ground_truth, class_index);

  // cumulative masses in linear space; total is 1 for valid models
  std::vector<double> cdf(table.log_mass.size());
  double acc = 0.0;
  for (size_t i = 0; i < table.log_mass.size(); ++i) {
    acc += std::exp(table.log_mass[i]);
    cdf[i] = acc;
  }

  Dataset ds;
  ds.height = spec.two_d ? spec.height : 1;
  ds.width = spec.two_d ? spec.width : spec.num_vars;
  ds.source = "synthetic";
  Rng rng(seed);
  for (int s = 0; s < num_samples; ++s) {
    double u = rng.uniform() * acc;
    size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cdf[mid] < u)
        lo = mid + 1;
      else
        hi = mid;
    }
    for (int v : table.assignment_of(lo))
      ds.pixels.push_back(static_cast<uint8_t>(v));
  }
  return ds;
}

}  // namespace pnc
