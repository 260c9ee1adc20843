#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "haru/attention.hpp"
#include "haru/blocks.hpp"
#include "haru/keyvalue.hpp"

namespace haru {

enum class FusionMode { ContextFusion, Concat };

struct NetworkConfig {
  static constexpr std::size_t kStages = 6;

  std::size_t in_channels = 3;
  std::array<std::size_t, kStages> out_channels{16, 32, 64, 128, 128, 128};
  std::array<std::size_t, kStages> mid_channels{8, 16, 32, 64, 64, 64};
  std::array<int, kStages> heights{7, 6, 5, 4, 4, 4};
  std::array<bool, kStages> dilated{false, false, false, false, true, true};
  std::size_t attention_reduction = 4;
  std::size_t spatial_kernel = 7;
  FusionMode fusion = FusionMode::ContextFusion;
  std::uint64_t seed = 0;

  void validate() const;
  // Smallest accepted input side; inputs must also be a multiple of 32.
  std::size_t min_input_extent() const;

  // Stable "network.<key> = value" lines; the digest hashes exactly this text.
  KeyValues to_key_values() const;
  static NetworkConfig from_key_values(const KeyValues& kv);
  std::uint64_t digest() const;
};

struct NetworkOutput {
  Tensor s_mask;  // [N,1,H,W] probabilities
  Tensor s_edge;
  std::vector<Tensor> mask_sides;  // 6 maps at input resolution, stage 1 (finest) first
  std::vector<Tensor> edge_sides;
};

enum class SkipGate { Cbam, ChannelOnly };

// One decoder path (mask or edge) with its own skip gates, side heads and fusion.
struct DecoderBranch {
  std::array<Cbam, 4> skip_cbam;     // decoder levels 1..4
  ChannelAttention deepest_skip;     // decoder level 5
  std::array<RsuBlock, 5> decoders;  // index 0 = finest
  std::array<Conv2d, 6> side_convs;  // sides 1..5 from decoders, side 6 from the deepest encoder stage
  CfBlock cf;
  ConcatFusion concat;

  void collect(StateLists& out, const std::string& prefix, FusionMode fusion) const;
};

class Network {
 public:
  static constexpr std::size_t kSideOutputs = 6;
  static constexpr std::size_t kInputMultiple = 32;

  explicit Network(const NetworkConfig& config);

  NetworkOutput forward(const Tensor& x);

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  const NetworkConfig& config() const { return config_; }

  // Parameters then buffers, each in a fixed traversal order.
  StateLists state() const;
  ParamList parameters() const { return state().parameters; }
  StateLists encoder_state() const;
  StateLists branch_state(bool edge) const;

  SkipGate skip_gate(std::size_t decoder_level) const { return decoder_level == 5 ? SkipGate::ChannelOnly : SkipGate::Cbam; }
  void zero_grad();

  std::array<RsuBlock, 6> encoders;
  DecoderBranch mask_branch;
  DecoderBranch edge_branch;

 private:
  std::vector<Tensor> run_branch(DecoderBranch& branch, const std::vector<Tensor>& enc, std::size_t h, std::size_t w,
                                 Tensor& fused);

  NetworkConfig config_;
  bool training_ = true;
};

// ---- checkpoint files ----
//
// Little-endian layout:
//   char[8]  magic "HARUCKPT"
//   u32      format version
//   u64      config digest
//   u32      metadata length, then that many bytes of key = value text
//   u32      entry count
//   entries: u32 name length, name bytes, u32 rank, u64 extent per axis, f64 value per element
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint64_t digest = 0;
  KeyValues metadata;
  ParamList entries;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Network state entries plus the config as metadata; `extra` is merged into the metadata.
Checkpoint make_checkpoint(const Network& net, const KeyValues& extra = {}, const ParamList& extra_entries = {});
// Copies matching entries into net after verifying the digest; returns the leftover entries.
ParamList restore_network(const Checkpoint& ckpt, Network& net);
Network load_network(const std::filesystem::path& path);

}  // namespace haru
