#include "haru/network.hpp"

#include "haru/png_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace haru {

namespace {

template <typename T, std::size_t N>
std::string join(const std::array<T, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(static_cast<std::uint64_t>(a[i]));
  return s;
}

template <typename T, std::size_t N>
std::array<T, N> to_array(const std::vector<std::uint64_t>& v, const std::string& key) {
  if (v.size() != N) throw ConfigError("key '" + key + "' needs " + std::to_string(N) + " entries");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<T>(v[i]);
  return out;
}

template <typename T, std::size_t N>
std::vector<std::uint64_t> to_vector(const std::array<T, N>& a) {
  return std::vector<std::uint64_t>(a.begin(), a.end());
}

}  // namespace

void NetworkConfig::validate() const {
  if (in_channels == 0) throw ConfigError("network: in_channels must be >= 1");
  for (std::size_t s = 0; s < kStages; ++s) {
    if (out_channels[s] == 0 || mid_channels[s] == 0) {
      throw ConfigError("network: stage " + std::to_string(s + 1) + " has a zero channel count");
    }
    if (heights[s] < 2) throw ConfigError("network: stage " + std::to_string(s + 1) + " RSU height must be >= 2");
  }
  if (spatial_kernel % 2 == 0) throw ConfigError("network: spatial_kernel must be odd");
  if (attention_reduction == 0) throw ConfigError("network: attention_reduction must be >= 1");
}

std::size_t NetworkConfig::min_input_extent() const {
  std::size_t need = Network::kInputMultiple;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t stage_min = dilated[s] ? 1 : (std::size_t{1} << (heights[s] - 2));
    need = std::max(need, stage_min << s);
  }
  return (need + Network::kInputMultiple - 1) / Network::kInputMultiple * Network::kInputMultiple;
}

KeyValues NetworkConfig::to_key_values() const {
  KeyValues kv;
  kv["network.in_channels"] = std::to_string(in_channels);
  kv["network.out_channels"] = join(out_channels);
  kv["network.mid_channels"] = join(mid_channels);
  kv["network.heights"] = join(heights);
  kv["network.dilated"] = join(dilated);
  kv["network.attention_reduction"] = std::to_string(attention_reduction);
  kv["network.spatial_kernel"] = std::to_string(spatial_kernel);
  kv["network.fusion"] = fusion == FusionMode::ContextFusion ? "cf" : "concat";
  kv["network.seed"] = std::to_string(seed);
  return kv;
}

NetworkConfig NetworkConfig::from_key_values(const KeyValues& kv) {
  NetworkConfig c;
  c.in_channels = kv_uint(kv, "network.in_channels", c.in_channels);
  c.out_channels = to_array<std::size_t, kStages>(
      kv_uint_list(kv, "network.out_channels", to_vector(c.out_channels)), "network.out_channels");
  c.mid_channels = to_array<std::size_t, kStages>(
      kv_uint_list(kv, "network.mid_channels", to_vector(c.mid_channels)), "network.mid_channels");
  c.heights = to_array<int, kStages>(kv_uint_list(kv, "network.heights", to_vector(c.heights)), "network.heights");
  c.dilated = to_array<bool, kStages>(kv_uint_list(kv, "network.dilated", to_vector(c.dilated)), "network.dilated");
  c.attention_reduction = kv_uint(kv, "network.attention_reduction", c.attention_reduction);
  c.spatial_kernel = kv_uint(kv, "network.spatial_kernel", c.spatial_kernel);
  const std::string fusion = kv_string(kv, "network.fusion", "cf");
  if (fusion == "cf") {
    c.fusion = FusionMode::ContextFusion;
  } else if (fusion == "concat") {
    c.fusion = FusionMode::Concat;
  } else {
    throw ConfigError("network.fusion must be 'cf' or 'concat', got '" + fusion + "'");
  }
  c.seed = kv_uint(kv, "network.seed", c.seed);
  c.validate();
  return c;
}

std::uint64_t NetworkConfig::digest() const { return fnv1a64(format_key_values(to_key_values())); }

void DecoderBranch::collect(StateLists& out, const std::string& prefix, FusionMode fusion) const {
  for (std::size_t i = 0; i < skip_cbam.size(); ++i) skip_cbam[i].collect(out, prefix + ".skip" + std::to_string(i + 1));
  deepest_skip.collect(out, prefix + ".skip5");
  for (std::size_t i = 0; i < decoders.size(); ++i) decoders[i].collect(out, prefix + ".dec" + std::to_string(i + 1));
  for (std::size_t i = 0; i < side_convs.size(); ++i) side_convs[i].collect(out, prefix + ".side" + std::to_string(i + 1));
  if (fusion == FusionMode::ContextFusion) {
    cf.collect(out, prefix + ".cf");
  } else {
    concat.collect(out, prefix + ".concat");
  }
}

Network::Network(const NetworkConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const auto& oc = config_.out_channels;
  const auto& mc = config_.mid_channels;
  for (std::size_t s = 0; s < NetworkConfig::kStages; ++s) {
    const std::size_t in = s == 0 ? config_.in_channels : oc[s - 1];
    encoders[s] = RsuBlock(RsuSpec{config_.heights[s], in, mc[s], oc[s], config_.dilated[s]}, rng);
  }
  for (DecoderBranch* b : {&mask_branch, &edge_branch}) {
    for (std::size_t i = 0; i < 4; ++i) {
      b->skip_cbam[i] = Cbam(oc[i], config_.attention_reduction, config_.spatial_kernel, rng);
    }
    b->deepest_skip = ChannelAttention(oc[4], config_.attention_reduction, rng);
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t deeper = i == 4 ? oc[5] : oc[i + 1];
      b->decoders[i] = RsuBlock(RsuSpec{config_.heights[i], oc[i] + deeper, mc[i], oc[i], config_.dilated[i]}, rng);
    }
    for (std::size_t i = 0; i < kSideOutputs; ++i) b->side_convs[i] = Conv2d(oc[i], 1, 3, 1, 1, true, rng);
    if (config_.fusion == FusionMode::ContextFusion) {
      b->cf = CfBlock(rng);
    } else {
      b->concat = ConcatFusion(rng);
    }
  }
}

std::vector<Tensor> Network::run_branch(DecoderBranch& branch, const std::vector<Tensor>& enc, std::size_t h,
                                        std::size_t w, Tensor& fused) {
  std::array<Tensor, 5> dec;
  Tensor deeper = enc[5];
  for (std::size_t i = 5; i-- > 0;) {
    Tensor skip = i == 4 ? branch.deepest_skip.forward(enc[i]) : branch.skip_cbam[i].forward(enc[i]);
    if (deeper.dim(2) != skip.dim(2) || deeper.dim(3) != skip.dim(3)) {
      deeper = upsample_bilinear(deeper, skip.dim(2), skip.dim(3));
    }
    dec[i] = branch.decoders[i].forward(concat_channels({skip, deeper}), training_);
    deeper = dec[i];
  }
  std::vector<Tensor> sides;
  for (std::size_t i = 0; i < kSideOutputs; ++i) {
    const Tensor& src = i < 5 ? dec[i] : enc[5];
    Tensor p = sigmoid(branch.side_convs[i].forward(src));
    if (p.dim(2) != h || p.dim(3) != w) p = upsample_bilinear(p, h, w);
    sides.push_back(p);
  }
  Tensor logits = config_.fusion == FusionMode::ContextFusion ? branch.cf.forward(sides, h, w)
                                                                : branch.concat.forward(sides, h, w);
  fused = sigmoid(logits);
  return sides;
}

NetworkOutput Network::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw DimensionError("network: expected input [N," + std::to_string(config_.in_channels) + ",H,W], got " +
                         shape_string(x.shape()));
  }
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t min_extent = config_.min_input_extent();
  if (h % kInputMultiple != 0 || w % kInputMultiple != 0 || h < min_extent || w < min_extent) {
    throw DimensionError("network: input H and W must be multiples of " + std::to_string(kInputMultiple) +
                         " and at least " + std::to_string(min_extent) + ", got " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  std::vector<Tensor> enc(NetworkConfig::kStages);
  Tensor cur = x;
  for (std::size_t s = 0; s < NetworkConfig::kStages; ++s) {
    if (s > 0) cur = max_pool2d(cur, 2, 2);
    enc[s] = encoders[s].forward(cur, training_);
    cur = enc[s];
  }
  NetworkOutput out;
  out.mask_sides = run_branch(mask_branch, enc, h, w, out.s_mask);
  out.edge_sides = run_branch(edge_branch, enc, h, w, out.s_edge);
  return out;
}

StateLists Network::encoder_state() const {
  StateLists out;
  for (std::size_t s = 0; s < encoders.size(); ++s) encoders[s].collect(out, "encoder" + std::to_string(s + 1));
  return out;
}

StateLists Network::branch_state(bool edge) const {
  StateLists out;
  (edge ? edge_branch : mask_branch).collect(out, edge ? "edge" : "mask", config_.fusion);
  return out;
}

StateLists Network::state() const {
  StateLists out = encoder_state();
  for (bool edge : {false, true}) {
    StateLists b = branch_state(edge);
    out.parameters.insert(out.parameters.end(), b.parameters.begin(), b.parameters.end());
    out.buffers.insert(out.buffers.end(), b.buffers.begin(), b.buffers.end());
  }
  return out;
}

void Network::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'A', 'R', 'U', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

std::string get_bytes(std::istream& is, std::size_t n, const std::string& what) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint truncated in " + what);
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, Checkpoint::kVersion);
  put<std::uint64_t>(os, ckpt.digest);
  const std::string meta = format_key_values(ckpt.metadata);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const std::string magic = get_bytes(is, sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw IoError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != Checkpoint::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.digest = get<std::uint64_t>(is, "digest");
  ckpt.metadata = parse_key_values(get_bytes(is, get<std::uint32_t>(is, "metadata length"), "metadata"));
  const auto count = get<std::uint32_t>(is, "entry count");
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = get_bytes(is, get<std::uint32_t>(is, "name length"), "name");
    const auto rank = get<std::uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, "extent");
    Tensor t(shape);
    const auto bytes = static_cast<std::streamsize>(t.numel() * sizeof(double));
    if (!is.read(reinterpret_cast<char*>(t.values().data()), bytes)) throw IoError("checkpoint truncated in " + name);
    ckpt.entries.push_back({std::move(name), t});
  }
  return ckpt;
}

Checkpoint make_checkpoint(const Network& net, const KeyValues& extra, const ParamList& extra_entries) {
  Checkpoint ckpt;
  ckpt.digest = net.config().digest();
  ckpt.metadata = net.config().to_key_values();
  for (const auto& [k, v] : extra) ckpt.metadata[k] = v;
  StateLists s = net.state();
  ckpt.entries = s.parameters;
  ckpt.entries.insert(ckpt.entries.end(), s.buffers.begin(), s.buffers.end());
  ckpt.entries.insert(ckpt.entries.end(), extra_entries.begin(), extra_entries.end());
  return ckpt;
}

ParamList restore_network(const Checkpoint& ckpt, Network& net) {
  if (ckpt.digest != net.config().digest()) {
    throw ConfigError("checkpoint config digest does not match the network configuration");
  }
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : ckpt.entries) by_name[e.name] = &e.tensor;
  StateLists s = net.state();
  ParamList all = s.parameters;
  all.insert(all.end(), s.buffers.begin(), s.buffers.end());
  for (auto& [name, t] : all) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing entry " + name);
    if (it->second->shape() != t.shape()) {
      throw ConfigError("checkpoint entry " + name + " has shape " + shape_string(it->second->shape()) + ", expected " +
                        shape_string(t.shape()));
    }
    Tensor dst = t;
    std::copy(it->second->values().begin(), it->second->values().end(), dst.values().begin());
    by_name.erase(it);
  }
  ParamList rest;
  for (const auto& e : ckpt.entries) {
    if (by_name.count(e.name)) rest.push_back(e);
  }
  return rest;
}

Network load_network(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  Network net(NetworkConfig::from_key_values(ckpt.metadata));
  restore_network(ckpt, net);
  return net;
}

}  // namespace haru
