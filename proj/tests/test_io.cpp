#include <filesystem>
#include <fstream>
#include <set>

#include "haru/inference.hpp"
#include "haru/keyvalue.hpp"
#include "haru/png_io.hpp"
#include "haru/viz.hpp"
#include "test_util.hpp"

using namespace haru;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("haru_test_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

NetworkConfig micro_config() {
  NetworkConfig c;
  c.out_channels = {4, 4, 4, 4, 4, 4};
  c.mid_channels = {2, 2, 2, 2, 2, 2};
  c.heights = {3, 3, 2, 2, 2, 2};
  c.attention_reduction = 2;
  c.spatial_kernel = 3;
  return c;
}

}  // namespace

TEST_CASE("png round trips") {
  const fs::path dir = scratch("png");
  Rng rng(1);

  SUBCASE("8-bit rgb") {
    Image img(5, 7);
    std::uniform_int_distribution<int> byte(0, 255);
    for (double& v : img.pixels) v = byte(rng) / 255.0;
    write_png_rgb8(dir / "a.png", img);
    const Image back = read_png_rgb(dir / "a.png");
    REQUIRE(back.height == 5);
    REQUIRE(back.width == 7);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
  }
  SUBCASE("gray input is replicated") {
    Grid<std::uint16_t> g(3, 4, 0);
    g(1, 2) = 65535;
    write_png_gray16(dir / "g.png", g);
    const Image back = read_png_rgb(dir / "g.png");
    CHECK(back.channels == 3);
    for (std::size_t ch = 0; ch < 3; ++ch) CHECK(back.at(1, 2, ch) == 1.0);
    CHECK(back.at(0, 0, 1) == 0.0);
  }
  SUBCASE("16-bit labels") {
    InstanceMap m(9, 6, 0);
    std::uniform_int_distribution<int> id(0, 65535);
    for (auto& v : m.data) v = id(rng);
    write_label_png(dir / "l.png", m);
    CHECK(read_label_png(dir / "l.png") == m);
    m(0, 0) = 70000;
    CHECK_THROWS_AS(write_label_png(dir / "big.png", m), IoError);
  }
  SUBCASE("probabilities keep 16 bits") {
    ProbabilityMap p(4, 4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : p.data) v = u(rng);
    write_probability_png(dir / "p.png", p);
    const ProbabilityMap back = read_probability_png(dir / "p.png");
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(back.data[i] - p.data[i]) <= 0.5 / 65535 + 1e-15);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(read_png_rgb(dir / "nope.png"), IoError);
    std::ofstream(dir / "junk.png") << "not a png";
    CHECK_THROWS_AS(read_png_rgb(dir / "junk.png"), IoError);
    write_png_rgb8(dir / "rgb.png", Image(2, 2));
    CHECK_THROWS_AS(read_label_png(dir / "rgb.png"), IoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("key-value text") {
  const KeyValues kv = parse_key_values("# comment\n\na = 1\n  b.c=  two words  \nd = 0.1\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b.c") == "two words");
  CHECK(kv_double(kv, "d", 0.0) == 0.1);
  CHECK(kv_uint(kv, "a", 7) == 1);
  CHECK(kv_uint(kv, "missing", 7) == 7);
  CHECK_THROWS_AS(parse_key_values("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(kv_double(kv, "b.c", 0.0), ConfigError);
  CHECK_THROWS_AS(kv_uint(parse_key_values("x = -3"), "x", 0), ConfigError);
  CHECK(kv_bool(parse_key_values("x = true"), "x", false));
  CHECK(kv_uint_list(parse_key_values("x = 1,2,30"), "x", {}) == std::vector<std::uint64_t>{1, 2, 30});
  CHECK(parse_key_values(format_key_values(kv)) == kv);
  CHECK_THROWS_AS(read_key_values(fs::temp_directory_path() / "haru_no_such_file.kv"), IoError);

  Rng rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, i % 40 - 20);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::isinf(std::stod(format_double(std::numeric_limits<double>::infinity()))));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("label rendering") {
  CHECK(label_color(0) == Rgb8{0, 0, 0});
  std::set<Rgb8> colours;
  for (std::int32_t id = 1; id <= 64; ++id) {
    colours.insert(label_color(id));
    CHECK(label_color(id) != Rgb8{0, 0, 0});
  }
  CHECK(colours.size() == 64);

  const Image blank = render_labels(InstanceMap(4, 5, 0));
  for (double v : blank.pixels) CHECK(v == 0.0);

  InstanceMap m(6, 6, 0);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t c = 1; c < 5; ++c) m(r, c) = 3;
  const Image a = render_labels(m), b = render_labels(m);
  CHECK(a == b);
  CHECK(a.at(2, 2, 0) == label_color(3)[0] / 255.0);
  const Image contour = render_labels(m, true);
  CHECK(contour.at(1, 1, 0) == 1.0);  // rim pixel
  CHECK(contour.at(2, 2, 0) == a.at(2, 2, 0));
}

TEST_CASE("prediction on arbitrary image sizes") {
  Network net(micro_config());
  CHECK(padded_extent(net.config(), 32) == 32);
  CHECK(padded_extent(net.config(), 33) == 64);
  Rng rng(8);
  Image img(40, 21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.pixels) v = u(rng);
  const Prediction p = predict_image(net, img, true);
  CHECK(p.mask.height == 40);
  CHECK(p.mask.width == 21);
  CHECK(p.edge.height == 40);
  CHECK(p.mask_sides.size() == 6);
  CHECK(p.edge_sides[5].width == 21);
  for (double v : p.mask.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Eval mode: the same image gives the same maps.
  CHECK(predict_image(net, img).mask == p.mask);
}
