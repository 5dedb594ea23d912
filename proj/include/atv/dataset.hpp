#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atv/rng.hpp"
#include "atv/tensor.hpp"

namespace atv {

// One image/label pair. Image channels are [0,1] floats, labels are class
// ids in [0,K) with 255 marking ignore pixels (introduced by padding).
struct Sample {
  Tensor<float> image;    // (3,H,W)
  Tensor<int32_t> labels; // (H,W)
};

// local: every pixel classifiable from its own color/texture.
// context: scenes additionally carry neutral-gray patches whose label is
// the enclosing region's class, so only surrounding context resolves them.
// mixed: each scene draws one of the two uniformly.
enum class SceneRegime { local, context, mixed };

SceneRegime regime_from_string(const std::string& s);
std::string regime_to_string(SceneRegime r);

struct ManifestEntry {
  std::string image;   // path relative to the dataset directory
  std::string label;
  std::string regime;  // per-sample tag: "local" or "context"
};

struct DatasetManifest {
  int version = 1;
  int k = 5;
  uint64_t seed = 0;
  std::string regime;  // the regime the set was generated with
  std::vector<ManifestEntry> entries;
  std::string dir;     // directory the manifest was loaded from / written to
  int size() const { return static_cast<int>(entries.size()); }
};

struct AugmentConfig {
  std::vector<double> scale_choices{0.75, 1.0, 1.25};
  int crop_h = 64, crop_w = 64;  // divisible by 8
  double hflip_prob = 0.5;
};

// The neutral gray used for context-ambiguous patches; exact byte value
// 128 in the stored PPM, so masks are recoverable from decoded images.
inline constexpr float kAmbiguousGray = 128.0f / 255.0f;

// Writes n image/label pairs plus manifest.json into out_dir. Fully
// deterministic in (size, k, regime, seed, index); n only selects how many
// indices are emitted.
DatasetManifest generate_triscenes(int n, int size, int k, SceneRegime regime, uint64_t seed,
                                   const std::string& out_dir);

DatasetManifest load_dataset(const std::string& dir);
Sample load_sample(const DatasetManifest& m, int index);

// scale -> crop -> flip, labels transformed with nearest neighbor and
// padded with 255 where the crop leaves the scaled image.
Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);

// Stacks equally-sized samples into (N,3,H,W) and (N,H,W).
std::pair<Tensor<float>, Tensor<int32_t>> make_batch(const std::vector<Sample>& samples);

// 1 where all three channels equal the exact ambiguous gray.
Tensor<int32_t> ambiguous_mask(const Sample& s);

}  // namespace atv
