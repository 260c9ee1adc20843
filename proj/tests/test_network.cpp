#include "haru/network.hpp"
#include "haru/png_io.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>

#include "haru/loss.hpp"
#include "test_util.hpp"

using namespace haru;
using haru::testing::leaf;
using haru::testing::same_values;

namespace {

// Frozen output of tests/param_count.py for the default configuration.
constexpr std::size_t kDefaultParameterCount = 5890850;

NetworkConfig micro_config() {
  NetworkConfig c;
  c.out_channels = {4, 4, 4, 4, 4, 4};
  c.mid_channels = {2, 2, 2, 2, 2, 2};
  c.heights = {3, 3, 2, 2, 2, 2};
  c.attention_reduction = 2;
  c.spatial_kernel = 3;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

bool in_open_unit(const Tensor& t) {
  for (double v : t.values()) {
    if (!(v > 0.0 && v < 1.0)) return false;
  }
  return true;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "haru_test_network";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("default network output contract") {
  Network net{NetworkConfig{}};
  Tensor x = leaf({1, 3, 64, 64}, 1, 0.0, 1.0);
  const NetworkOutput out = net.forward(x);
  CHECK(out.s_mask.shape() == Shape{1, 1, 64, 64});
  CHECK(out.s_edge.shape() == Shape{1, 1, 64, 64});
  REQUIRE(out.mask_sides.size() == 6);
  REQUIRE(out.edge_sides.size() == 6);
  CHECK(in_open_unit(out.s_mask));
  CHECK(in_open_unit(out.s_edge));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(out.mask_sides[i].shape() == Shape{1, 1, 64, 64});
    CHECK(out.edge_sides[i].shape() == Shape{1, 1, 64, 64});
    CHECK(in_open_unit(out.mask_sides[i]));
    CHECK(in_open_unit(out.edge_sides[i]));
  }
  double m = 0;
  for (double v : out.s_mask.values()) m += v;
  m /= static_cast<double>(out.s_mask.numel());
  MESSAGE("initial mean s_mask = " << m);
  CHECK(m > 0.3);
  CHECK(m < 0.7);
}

TEST_CASE("parameter count matches the per-layer arithmetic") {
  Network net{NetworkConfig{}};
  CHECK(count_values(net.parameters()) == kDefaultParameterCount);
}

TEST_CASE("construction is deterministic in the seed") {
  NetworkConfig c = micro_config();
  Network a(c), b(c);
  c.seed = 1;
  Network other(c);
  const ParamList pa = a.parameters(), pb = b.parameters(), po = other.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(same_values(pa[i].tensor, pb[i].tensor));
    if (!same_values(pa[i].tensor, po[i].tensor)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("deepest skip uses channel attention only") {
  Network net{NetworkConfig{}};
  for (std::size_t level = 1; level <= 4; ++level) CHECK(net.skip_gate(level) == SkipGate::Cbam);
  CHECK(net.skip_gate(5) == SkipGate::ChannelOnly);
  for (const DecoderBranch* b : {&net.mask_branch, &net.edge_branch}) {
    CHECK(b->deepest_skip.channels() == 128);
    StateLists s;
    b->collect(s, "b", FusionMode::ContextFusion);
    std::size_t skip5 = 0, skip5_spatial = 0, skip4_spatial = 0;
    for (const auto& p : s.parameters) {
      if (p.name.starts_with("b.skip5.")) ++skip5;
      if (p.name.starts_with("b.skip5.") && p.name.find("spatial") != std::string::npos) ++skip5_spatial;
      if (p.name.starts_with("b.skip4.spatial")) ++skip4_spatial;
    }
    CHECK(skip5 == 4);  // the two linear layers of the channel MLP
    CHECK(skip5_spatial == 0);
    CHECK(skip4_spatial == 2);
  }
}

TEST_CASE("zeroing the edge branch leaves mask outputs bit-identical") {
  Network net{NetworkConfig{}};
  Tensor x = leaf({2, 3, 64, 64}, 3, 0.0, 1.0);
  for (bool training : {true, false}) {
    net.set_training(training);
    const NetworkOutput before = net.forward(x);
    const StateLists edge = net.branch_state(true);
    std::vector<std::vector<double>> saved;
    for (const auto& p : edge.parameters) saved.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    fill_all(edge.parameters, 0.0);  // restored below
    const NetworkOutput after = net.forward(x);
    CHECK(same_values(before.s_mask, after.s_mask));
    for (std::size_t i = 0; i < 6; ++i) CHECK(same_values(before.mask_sides[i], after.mask_sides[i]));
    CHECK_FALSE(same_values(before.s_edge, after.s_edge));
    for (std::size_t i = 0; i < edge.parameters.size(); ++i) {
      Tensor t = edge.parameters[i].tensor;
      std::copy(saved[i].begin(), saved[i].end(), t.values().begin());
    }
  }
}

TEST_CASE("input size contract") {
  Network net{NetworkConfig{}};
  CHECK(net.config().min_input_extent() == 32);
  CHECK(net.forward(Tensor({1, 3, 32, 96}, 0.5)).s_mask.shape() == Shape{1, 1, 32, 96});
  try {
    net.forward(Tensor({1, 3, 48, 64}, 0.5));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("multiples of 32") != std::string::npos);
  }
  CHECK_THROWS_AS(net.forward(Tensor({1, 1, 64, 64})), DimensionError);
}

// Below 320x320 the dilated taps of the deepest RSU-4F blocks only ever read padding, so a
// smaller input leaves whole slices of those kernels with an exactly zero gradient.
TEST_CASE("gradient reaches every parameter") {
  Network net{NetworkConfig{}};
  Rng rng(4);
  Tensor x = random_tensor({1, 3, 320, 320}, rng, 0.0, 1.0);
  Tensor mask({1, 1, 320, 320}), edge({1, 1, 320, 320});
  std::bernoulli_distribution coin(0.4);
  for (double& v : mask.values()) v = coin(rng);
  for (double& v : edge.values()) v = coin(rng) ? 1.0 : 0.0;
  const LossBreakdown loss = total_loss(net.forward(x), mask, edge, LossWeights{});
  backward(loss.total);
  std::size_t total = 0, nonzero = 0;
  for (const auto& p : net.parameters()) {
    for (double g : p.tensor.grad()) {
      ++total;
      if (g != 0.0) ++nonzero;
    }
  }
  MESSAGE("nonzero gradient fraction " << static_cast<double>(nonzero) / static_cast<double>(total));
  CHECK(static_cast<double>(nonzero) >= 0.99 * static_cast<double>(total));
}

TEST_CASE("config key-values") {
  NetworkConfig c = micro_config();
  c.fusion = FusionMode::Concat;
  c.seed = 42;
  const NetworkConfig back = NetworkConfig::from_key_values(c.to_key_values());
  CHECK(back.to_key_values() == c.to_key_values());
  CHECK(back.digest() == c.digest());
  CHECK(NetworkConfig{}.digest() != c.digest());

  KeyValues bad = c.to_key_values();
  bad["network.heights"] = "3,3,1,2,2,2";
  CHECK_THROWS_AS(NetworkConfig::from_key_values(bad), ConfigError);
  bad = c.to_key_values();
  bad["network.out_channels"] = "4,4,4";
  CHECK_THROWS_AS(NetworkConfig::from_key_values(bad), ConfigError);
  bad = c.to_key_values();
  bad["network.fusion"] = "sum";
  CHECK_THROWS_AS(NetworkConfig::from_key_values(bad), ConfigError);
}

TEST_CASE("concat fusion ablation builds and runs") {
  NetworkConfig c = micro_config();
  c.fusion = FusionMode::Concat;
  Network net(c);
  CHECK(net.forward(Tensor({1, 3, 32, 32}, 0.5)).s_edge.shape() == Shape{1, 1, 32, 32});
}

TEST_CASE("checkpoint round trip") {
  Network net(micro_config());
  Tensor x = leaf({1, 3, 32, 32}, 5, 0.0, 1.0);
  net.forward(x);  // moves the batch-norm running statistics off their initial values
  const auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  write_checkpoint(p1, make_checkpoint(net, {{"extra.note", "hello"}}));
  const Checkpoint ck = read_checkpoint(p1);
  CHECK(ck.metadata.at("extra.note") == "hello");
  write_checkpoint(p2, ck);
  CHECK(slurp(p1) == slurp(p2));

  Network loaded = load_network(p1);
  net.set_training(false);
  loaded.set_training(false);
  CHECK(same_values(net.forward(x).s_mask, loaded.forward(x).s_mask));

  SUBCASE("digest mismatch") {
    NetworkConfig other = micro_config();
    other.seed = 9;
    Network wrong(other);
    CHECK_THROWS_AS(restore_network(ck, wrong), ConfigError);
  }
  SUBCASE("corrupt files") {
    std::string bytes = slurp(p1);
    const auto bad = temp_path("bad.ckpt");
    std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(read_checkpoint(bad), IoError);
    bytes[0] = 'X';
    std::ofstream(bad, std::ios::binary | std::ios::trunc) << bytes;
    CHECK_THROWS_AS(read_checkpoint(bad), IoError);
  }
}
