#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "haru/grid.hpp"

namespace haru {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Any PNG colour type / depth, returned as 3-channel values in [0,1] (gray is replicated, alpha dropped).
Image read_png_rgb(const std::filesystem::path& path);
void write_png_rgb8(const std::filesystem::path& path, const Image& img);

// Single-channel 8- or 16-bit PNG as raw integer samples.
Grid<std::uint16_t> read_png_gray(const std::filesystem::path& path);
void write_png_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& g);

InstanceMap read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const InstanceMap& labels);

// Probability p stored as round(p * 65535).
ProbabilityMap read_probability_png(const std::filesystem::path& path);
void write_probability_png(const std::filesystem::path& path, const ProbabilityMap& prob);

}  // namespace haru
