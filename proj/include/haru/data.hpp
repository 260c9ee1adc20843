#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "haru/grid.hpp"
#include "haru/keyvalue.hpp"

namespace haru {

struct Sample {
  Image image;
  InstanceMap instances;
  std::string id;
};

struct LabelPair {
  BinaryMap mask;
  BinaryMap edge;
};

// Foreground pixels with an in-image 8-neighbour carrying a different label (background included).
BinaryMap boundary_pixels(const InstanceMap& instances);
// `iterations` rounds of 3x3 dilation.
BinaryMap dilate(const BinaryMap& b, int iterations);

// mask = instances > 0; edge = boundary dilated edge_width times (the band may spill onto background).
LabelPair derive_targets(const InstanceMap& instances, int edge_width = 1);

// Relabels to 1..K in order of first appearance in a row-major scan.
InstanceMap relabel_sequential(const InstanceMap& m);

// ---- augmentation ----
struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;     // counter-clockwise, 0..3
  double angle_deg = 0.0;    // extra free rotation, counter-clockwise
};

struct AugmentOptions {
  bool free_angle = false;
  double max_angle_deg = 30.0;
};

AugmentParams draw_augment(Rng& rng, const AugmentOptions& options = {});
// Same geometric transform on image and labels. Free angles resample labels by nearest
// neighbour (outside -> background) and images bilinearly with reflection padding.
Sample apply_augment(const Sample& s, const AugmentParams& p);
Sample augment(const Sample& s, Rng& rng, const AugmentOptions& options = {});

// Overlapping size×size crops; the last row/column of tiles is anchored to the border.
std::vector<Sample> tile(const Sample& s, std::size_t size, std::size_t stride);
Sample crop(const Sample& s, std::size_t row, std::size_t col, std::size_t height, std::size_t width);

// ---- synthetic nuclei ----
struct SynthOptions {
  std::size_t n_images = 4;
  std::size_t size = 64;
  double density = 0.3;   // target fraction of the image covered by nuclei
  double overlap = 0.2;   // 0: nuclei never touch; larger values allow closer packing
  std::uint64_t seed = 0;
  bool prune_overlaps = true;  // drop nuclei that cannot be placed within the spacing rule
  double min_radius = 4.0;
  double max_radius = 8.0;
  double noise_sigma = 0.02;

  KeyValues to_key_values() const;
};

struct SynthDataset {
  std::vector<Sample> samples;
  std::vector<std::size_t> requested;  // nuclei asked for per image
};

SynthDataset synth_generate(const SynthOptions& options);
// Nuclei requested for one image under the given options.
std::size_t synth_requested_count(const SynthOptions& options);

// Independent RNG seed for one sample, derived from (seed, id).
std::uint64_t sample_seed(std::uint64_t seed, const std::string& id);

// ---- on-disk layout: images/<id>.png (8-bit RGB) + labels/<id>.png (16-bit instance ids) ----
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

}  // namespace haru
