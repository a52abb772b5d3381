#include <algorithm>
#include <fstream>

#include "doctest.h"
#include "odseg/convert.hpp"
#include "odseg/errors.hpp"
#include "odseg/model.hpp"
#include "test_util.hpp"

using namespace odseg;

TEST_CASE("npy round trip") {
  const test::TempDir dir;
  const Tensor t = gaussian_init({2, 3, 4}, 0.0f, 1.0f, 1);
  write_npy(dir.path / "t.npy", t);
  CHECK(read_npy(dir.path / "t.npy") == t);
  std::ofstream(dir.path / "bad.npy") << "not an array";
  CHECK_THROWS_AS(read_npy(dir.path / "bad.npy"), FormatError);
}

TEST_CASE("oihw transpose") {
  Tensor k({2, 1, 3, 3});
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<float>(i);
  const Tensor h = oihw_to_hwio(k);
  CHECK(h.shape() == Shape{3, 3, 1, 2});
  // [o=1, i=0, y=2, x=0] -> [y=2, x=0, i=0, o=1]
  CHECK(h[((2 * 3 + 0) * 1 + 0) * 2 + 1] == k[((1 * 1 + 0) * 3 + 2) * 3 + 0]);
}

TEST_CASE("mapping parse") {
  const auto m = parse_mapping("# c\nblock1_conv1/kernel:0 enc1_conv1.kernel\nfeatures.0.weight\tenc1_conv1.kernel oihw\n");
  REQUIRE(m.size() == 2);
  CHECK(m[0].layout == KernelLayout::kHwio);
  CHECK(m[1].layout == KernelLayout::kOihw);
  CHECK_THROWS_AS(parse_mapping("lonely\n"), FormatError);
  CHECK_THROWS_AS(parse_mapping("a b sideways\n"), FormatError);
}

TEST_CASE("npy directory converts into a loadable encoder file") {
  const test::TempDir dir;
  const Model donor = build_model(32, 32, 0.125, 8);
  std::ofstream map(dir.path / "map.txt");
  std::filesystem::create_directories(dir.path / "npy");
  for (const NamedTensor& t : encoder_parameters(donor)) {
    const std::string external = "torch." + t.name;
    if (t.tensor.rank() == 4) {
      // Store as [out, in, kh, kw].
      const Shape& s = t.tensor.shape();
      Tensor o({s[3], s[2], s[0], s[1]});
      for (std::size_t y = 0; y < s[0]; ++y)
        for (std::size_t x = 0; x < s[1]; ++x)
          for (std::size_t i = 0; i < s[2]; ++i)
            for (std::size_t c = 0; c < s[3]; ++c)
              o[((c * s[2] + i) * s[0] + y) * s[1] + x] = t.tensor[((y * s[1] + x) * s[2] + i) * s[3] + c];
      write_npy(dir.path / "npy" / (external + ".npy"), o);
      map << external << ' ' << t.name << " oihw\n";
    } else {
      write_npy(dir.path / "npy" / (external + ".npy"), t.tensor);
      map << external << ' ' << t.name << "\n";
    }
  }
  map.close();
  const auto converted = convert_weights(dir.path / "npy", read_mapping(dir.path / "map.txt"));
  write_weight_file(dir.path / "enc.odsw", converted);
  Model m = build_model(32, 32, 0.125, 9);
  load_weights(m, dir.path / "enc.odsw");
  const auto want = encoder_parameters(donor), got = encoder_parameters(m);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(want[i].tensor == got[i].tensor);

  std::ofstream(dir.path / "missing.txt") << "nothing.here enc1_conv1.kernel\n";
  CHECK_THROWS(convert_weights(dir.path / "npy", read_mapping(dir.path / "missing.txt")));
}

TEST_CASE("shipped vgg16 mappings cover the encoder") {
  const Model m = build_model(32, 32, 1.0);
  for (const char* file : {"vgg16_keras.map", "vgg16_torchvision.map"}) {
    const auto map = read_mapping(std::filesystem::path(ODSEG_DOCS_DIR) / file);
    CHECK(map.size() == encoder_parameters(m).size());
    std::vector<std::string> names;
    for (const auto& e : map) names.push_back(e.internal);
    for (const auto& t : encoder_parameters(m)) CHECK(std::find(names.begin(), names.end(), t.name) != names.end());
  }
}
