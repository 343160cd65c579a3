#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "vnn/rng.hpp"
#include "vnn/tensor.hpp"

namespace vnn {

struct LabeledDataset {
  Tensor inputs;            // [N x ...]
  std::vector<int> labels;  // length N, values in [0, class_count)
  int class_count = 0;

  std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
};

// ---- IDX container --------------------------------------------------------

inline constexpr std::uint32_t kIdxMagicImages = 0x00000803;  // 3-D unsigned byte
inline constexpr std::uint32_t kIdxMagicLabels = 0x00000801;  // 1-D unsigned byte

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const char* field) {
  if (off + 4 > b.size())
    throw ParseError(std::string("idx: truncated before ") + field + " at offset " +
                     std::to_string(off));
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline void write_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

// Parses an IDX unsigned-byte container. Image payloads (magic 0x803) are
// mapped to [0,1] by dividing by 255; label payloads (magic 0x801) keep raw
// integer values.
inline Tensor load_idx(const std::vector<unsigned char>& bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, "magic");
  std::size_t dims;
  if (magic == kIdxMagicImages) {
    dims = 3;
  } else if (magic == kIdxMagicLabels) {
    dims = 1;
  } else {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw ParseError(std::string("idx: unsupported magic ") + buf);
  }
  Shape shape(dims);
  std::size_t total = 1;
  for (std::size_t d = 0; d < dims; ++d) {
    const std::uint32_t v = detail::read_be32(bytes, 4 + 4 * d, "dimension size");
    if (v == 0) throw ParseError("idx: dimension " + std::to_string(d) + " is zero");
    shape[d] = v;
    if (total > (std::size_t(1) << 40) / v)
      throw ParseError("idx: dimension sizes overflow a sane payload size");
    total *= v;
  }
  const std::size_t header = 4 + 4 * dims;
  if (bytes.size() != header + total)
    throw ParseError("idx: payload size " + std::to_string(bytes.size() - header) +
                     " does not match declared " + std::to_string(total) + " bytes");
  Tensor t(shape);
  const double scale = magic == kIdxMagicImages ? 1.0 / 255.0 : 1.0;
  for (std::size_t i = 0; i < total; ++i)
    t.data[i] = static_cast<double>(bytes[header + i]) * scale;
  return t;
}

// Inverse of load_idx; byte-exact for tensors produced by it.
inline std::vector<unsigned char> save_idx(const Tensor& t) {
  std::uint32_t magic;
  double scale;
  if (t.rank() == 3) {
    magic = kIdxMagicImages;
    scale = 255.0;
  } else if (t.rank() == 1) {
    magic = kIdxMagicLabels;
    scale = 1.0;
  } else {
    throw UsageError("save_idx: only 3-D image or 1-D label tensors are supported");
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(4 + 4 * t.rank() + t.size());
  detail::write_be32(bytes, magic);
  for (std::size_t d : t.shape) detail::write_be32(bytes, static_cast<std::uint32_t>(d));
  for (double v : t.data) {
    const long b = std::lround(v * scale);
    if (b < 0 || b > 255) throw UsageError("save_idx: value out of byte range");
    bytes.push_back(static_cast<unsigned char>(b));
  }
  return bytes;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

// Loads an MNIST-style pair of IDX files into a dataset with [N x 1 x 28 x 28]
// image tensors.
inline LabeledDataset load_mnist_pair(const std::filesystem::path& images_path,
                                      const std::filesystem::path& labels_path) {
  Tensor images = load_idx(read_file_bytes(images_path));
  Tensor labels = load_idx(read_file_bytes(labels_path));
  if (images.rank() != 3 || labels.rank() != 1)
    throw ParseError("mnist: expected a 3-D image file and a 1-D label file");
  if (images.dim(0) != labels.dim(0))
    throw ParseError("mnist: image count " + std::to_string(images.dim(0)) +
                     " != label count " + std::to_string(labels.dim(0)));
  LabeledDataset ds;
  ds.inputs = images.reshaped({images.dim(0), 1, images.dim(1), images.dim(2)});
  ds.labels.reserve(labels.size());
  int max_label = 0;
  for (double v : labels.data) {
    const int l = static_cast<int>(v);
    max_label = std::max(max_label, l);
    ds.labels.push_back(l);
  }
  ds.class_count = max_label + 1;
  return ds;
}

// ---- batching and subsetting ----------------------------------------------

// One epoch over a permutation of {0..N-1}, partitioned into batches (last
// may be short). Without an rng the original order is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch_size, RngStream* shuffle_rng = nullptr)
      : order_(n), batch_size_(batch_size) {
    if (batch_size < 1) throw UsageError("batch_iterator: batch_size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_rng)
      for (std::size_t i = n; i > 1; --i)
        std::swap(order_[i - 1], order_[shuffle_rng->integer(i)]);
  }

  bool next(std::vector<std::size_t>& batch) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t hi = std::min(cursor_ + batch_size_, order_.size());
    batch.assign(order_.begin() + cursor_, order_.begin() + hi);
    cursor_ = hi;
    return true;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

// Stratified sample of n points without replacement; class proportions are
// preserved within one sample per class (largest-remainder allocation).
inline LabeledDataset subset(const LabeledDataset& ds, std::size_t n, RngStream& rng) {
  const std::size_t N = ds.size();
  if (n < 1 || n > N) throw UsageError("subset: need 1 <= n <= dataset size");
  if (n == N) return ds;

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < N; ++i) by_class[ds.labels[i]].push_back(i);

  // proportional allocation, then largest remainders
  std::vector<std::pair<double, int>> remainders;
  std::map<int, std::size_t> take;
  std::size_t assigned = 0;
  for (const auto& [cls, idx] : by_class) {
    const double exact = static_cast<double>(n) * idx.size() / static_cast<double>(N);
    const std::size_t base = std::min(idx.size(), static_cast<std::size_t>(exact));
    take[cls] = base;
    assigned += base;
    remainders.push_back({exact - static_cast<double>(base), cls});
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [rem, cls] : remainders) {
    if (assigned >= n) break;
    if (take[cls] < by_class[cls].size()) {
      ++take[cls];
      ++assigned;
    }
  }
  // top up from any class with spare capacity (degenerate distributions)
  for (auto& [cls, idx] : by_class) {
    while (assigned < n && take[cls] < idx.size()) {
      ++take[cls];
      ++assigned;
    }
  }

  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (auto& [cls, idx] : by_class) {
    // partial Fisher-Yates gives take[cls] distinct picks
    std::vector<std::size_t> pool = idx;
    for (std::size_t i = 0; i < take[cls]; ++i) {
      const std::size_t j = i + rng.integer(pool.size() - i);
      std::swap(pool[i], pool[j]);
      chosen.push_back(pool[i]);
    }
  }
  std::sort(chosen.begin(), chosen.end());

  LabeledDataset out;
  out.class_count = ds.class_count;
  Shape s = ds.inputs.shape;
  s[0] = n;
  out.inputs = Tensor(s);
  const std::size_t row = ds.inputs.size() / N;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(ds.inputs.data.begin() + chosen[i] * row,
              ds.inputs.data.begin() + (chosen[i] + 1) * row, out.inputs.data.begin() + i * row);
    out.labels.push_back(ds.labels[chosen[i]]);
  }
  return out;
}

}  // namespace vnn
