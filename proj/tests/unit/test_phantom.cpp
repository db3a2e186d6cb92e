#include "adadiff/error.hpp"
#include "adadiff/operator.hpp"
#include "adadiff/phantom.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <map>
#include <set>

using namespace adadiff;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

torch::Tensor magnitude_of(const torch::Tensor& image) {
  return torch::sqrt(image[0].to(torch::kFloat64).pow(2) + image[1].to(torch::kFloat64).pow(2));
}

} // namespace

TEST_CASE("tissue intensity ranges are disjoint within each contrast") {
  for (auto c : {Contrast::T1, Contrast::T2, Contrast::PD}) {
    for (int a = 0; a <= kTissueCount; ++a) {
      for (int b = a + 1; b <= kTissueCount; ++b) {
        const auto ra = tissue_range(a, c);
        const auto rb = tissue_range(b, c);
        CHECK((ra.second < rb.first || rb.second < ra.first));
      }
    }
  }
}

TEST_CASE("phantom magnitudes take only background and tissue values") {
  const auto p = make_phantom(Contrast::T2, 48, 48, 123);
  CHECK((p.image.sizes().vec() == std::vector<int64_t>{2, 48, 48}));
  CHECK((p.image.scalar_type() == torch::kFloat32));
  CHECK(p.ellipses.size() >= 9);
  CHECK(p.ellipses.size() <= 16);
  std::set<double> allowed{0.0};
  for (int t = 0; t <= kTissueCount; ++t) {
    allowed.insert(p.intensity[t][static_cast<int>(Contrast::T2)]);
  }
  const auto mag = magnitude_of(p.image).flatten();
  for (int64_t i = 0; i < mag.numel(); ++i) {
    const double v = mag[i].item<double>();
    bool matched = false;
    for (double a : allowed) {
      matched = matched || std::abs(v - a) < 1e-5;
    }
    REQUIRE(matched);
  }
  CHECK(mag.max().item<double>() <= 1.0 + 1e-6);
  CHECK(mag.eq(0).any().item<bool>());
}

TEST_CASE("contrasts of one slice share geometry and phase") {
  const auto a = make_phantom(Contrast::T1, 32, 32, 55);
  const auto b = make_phantom(Contrast::PD, 32, 32, 55);
  REQUIRE(a.ellipses.size() == b.ellipses.size());
  for (size_t i = 0; i < a.ellipses.size(); ++i) {
    CHECK(a.ellipses[i].cx == b.ellipses[i].cx);
    CHECK(a.ellipses[i].tissue == b.ellipses[i].tissue);
  }
  CHECK(a.phaseCoeffs == b.phaseCoeffs);
  // Identical label maps: the pixel partition by magnitude value matches.
  const auto ma = magnitude_of(a.image).flatten();
  const auto mb = magnitude_of(b.image).flatten();
  std::map<long, long> forward;
  for (int64_t i = 0; i < ma.numel(); ++i) {
    const long ka = std::lround(ma[i].item<double>() * 1e5);
    const long kb = std::lround(mb[i].item<double>() * 1e5);
    const auto [it, inserted] = forward.emplace(ka, kb);
    REQUIRE(it->second == kb);
  }
  const auto phaseA = torch::atan2(a.image[1], a.image[0]);
  const auto phaseB = torch::atan2(b.image[1], b.image[0]);
  const auto both = (ma.view({32, 32}) > 0) & (mb.view({32, 32}) > 0);
  CHECK(torch::allclose(phaseA.masked_select(both), phaseB.masked_select(both), 0, 1e-5));
}

TEST_CASE("phantoms are seeded") {
  CHECK(torch::equal(make_phantom(Contrast::T1, 32, 32, 9).image, make_phantom(Contrast::T1, 32, 32, 9).image));
  CHECK_FALSE(torch::equal(make_phantom(Contrast::T1, 32, 32, 9).image, make_phantom(Contrast::T1, 32, 32, 10).image));
  CHECK_THROWS_AS(make_phantom(Contrast::T1, 16, 16, 1), ConfigError);
}

TEST_CASE("dataset layout, split and byte-identical regeneration") {
  const auto dir = testing::scratch_dir("dataset-a");
  const auto m = make_dataset(10, {Contrast::T1, Contrast::T2, Contrast::PD}, 32, 32, 4, 1, dir);
  CHECK(m.sliceCount() == 120);
  std::map<Split, int> counts;
  for (const auto& s : m.subjects) {
    ++counts[s.split];
  }
  CHECK(counts[Split::Train] == 7);
  CHECK(counts[Split::Val] == 1);
  CHECK(counts[Split::Test] == 2);
  CHECK(split_slices(m, Split::Test).size() == 24);

  const auto again = testing::scratch_dir("dataset-b");
  make_dataset(10, {Contrast::T1, Contrast::T2, Contrast::PD}, 32, 32, 4, 1, again);
  CHECK(read_bytes(dir / "manifest.json") == read_bytes(again / "manifest.json"));
  for (const auto& s : m.subjects) {
    for (const auto& e : s.slices) {
      REQUIRE(read_bytes(dir / e.file) == read_bytes(again / e.file));
    }
  }
}

TEST_CASE("dataset round trip reproduces the generated phantoms") {
  const auto dir = testing::scratch_dir("dataset-c");
  make_dataset(3, {Contrast::T1, Contrast::T2}, 32, 32, 2, 4, dir);
  const auto m = load_manifest(dir);
  CHECK(m.sliceCount() == 12);
  for (const auto& s : m.subjects) {
    for (const auto& e : s.slices) {
      CHECK(torch::equal(load_slice(dir, m, e), make_phantom(e.contrast, 32, 32, e.seed).image));
    }
  }
  const auto train = load_split(dir, m, Split::Train);
  CHECK((train.sizes().vec() == std::vector<int64_t>{4, 2, 32, 32}));
  CHECK(load_split(dir, m, Split::Train, 3).size(0) == 3);
}

TEST_CASE("dataset errors are data errors") {
  CHECK_THROWS_AS(make_dataset(2, {Contrast::T1}, 32, 32, 1, 1, testing::scratch_dir("dataset-d")), ConfigError);
  const auto dir = testing::scratch_dir("dataset-e");
  const auto m = make_dataset(3, {Contrast::T1}, 32, 32, 1, 1, dir);
  std::filesystem::resize_file(dir / m.subjects[0].slices[0].file, 100);
  CHECK_THROWS_AS(load_manifest(dir), DataError);
  std::ofstream(dir / "manifest.json", std::ios::trunc) << "{ not json";
  CHECK_THROWS_AS(load_manifest(dir), DataError);
  CHECK_THROWS_AS(load_manifest(testing::scratch_dir("dataset-f")), DataError);
}

TEST_CASE("cfl files store interleaved little-endian float32") {
  const auto dir = testing::scratch_dir("cfl");
  auto x = torch::zeros({2, 32, 32});
  x[0][0][0] = 1.5f;
  x[1][0][0] = -2.0f;
  x[0][0][1] = 3.0f;
  write_cfl(dir / "x.cfl", x);
  const auto bytes = read_bytes(dir / "x.cfl");
  REQUIRE(bytes.size() == 2 * 32 * 32 * 4);
  float v[3];
  std::memcpy(v, bytes.data(), sizeof(v));
  CHECK(v[0] == 1.5f);
  CHECK(v[1] == -2.0f);
  CHECK(v[2] == 3.0f);
  CHECK(torch::equal(read_cfl(dir / "x.cfl", 32, 32), x));
  CHECK_THROWS_AS(read_cfl(dir / "x.cfl", 24, 24), DataError);
}

TEST_CASE("acquisition noise has the configured per-component deviation on sampled entries") {
  const int64_t n = 64;
  const ImagingOperator op(make_mask(n, n, 2.0, MaskKind::VariableDensity2D, 1.0 / 64.0, 3), CoilMaps::unit(n, n));
  const auto image = make_phantom(Contrast::T1, n, n, 8).image.to(torch::kFloat64);
  const auto clean = simulate_acquisition(image, op, 0.0, 1);
  CHECK(torch::equal(clean, op.forward(image)));
  const auto noisy = simulate_acquisition(image, op, 0.1, 1);
  const auto diff = noisy - clean;
  const auto sampled = op.mask().pattern.unsqueeze(0);
  const auto re = torch::real(diff).masked_select(sampled);
  const auto im = torch::imag(diff).masked_select(sampled);
  CHECK(std::abs(re.std().item<double>() - 0.1) < 0.005);
  CHECK(std::abs(im.std().item<double>() - 0.1) < 0.005);
  CHECK(torch::abs(diff).masked_select(sampled.logical_not()).max().item<double>() == 0.0);
  CHECK(torch::equal(noisy, simulate_acquisition(image, op, 0.1, 1)));
}
