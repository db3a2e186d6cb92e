#include "adadiff/error.hpp"
#include "adadiff/metrics.hpp"
#include "adadiff/random.hpp"

#include <doctest.h>

#include <cmath>

using namespace adadiff;

namespace {

MagnitudeImage image_from(const std::vector<double>& v, int64_t rows, int64_t cols) {
  return {rows, cols, v};
}

MagnitudeImage random_image(int64_t rows, int64_t cols, uint64_t seed) {
  SplitMix64 rng(seed);
  MagnitudeImage m{rows, cols, std::vector<double>(static_cast<size_t>(rows * cols))};
  for (auto& v : m.data) {
    v = rng.uniform(0.1, 1.0);
  }
  return m;
}

MagnitudeImage scaled(MagnitudeImage m, double s) {
  for (auto& v : m.data) {
    v *= s;
  }
  return m;
}

MagnitudeImage perturbed(MagnitudeImage m, double amount, uint64_t seed) {
  SplitMix64 rng(seed);
  for (auto& v : m.data) {
    v = std::max(0.0, v + amount * rng.normal());
  }
  return m;
}

// Direct 2D Gaussian-window SSIM over every valid window position.
double naive_ssim(const MagnitudeImage& ref, const MagnitudeImage& rec) {
  const int w = 7;
  const double sigma = 1.5;
  double meanA = 0, meanB = 0;
  for (size_t i = 0; i < ref.data.size(); ++i) {
    meanA += ref.data[i];
    meanB += rec.data[i];
  }
  meanA /= static_cast<double>(ref.data.size());
  meanB /= static_cast<double>(rec.data.size());
  auto a = [&](int64_t i, int64_t j) { return ref.at(i, j) / meanA; };
  auto b = [&](int64_t i, int64_t j) { return rec.at(i, j) / meanB; };
  double peak = 0;
  for (double v : ref.data) {
    peak = std::max(peak, v / meanA);
  }
  const double c1 = std::pow(0.01 * peak, 2);
  const double c2 = std::pow(0.03 * peak, 2);
  double weights[7][7];
  double wsum = 0;
  for (int u = 0; u < w; ++u) {
    for (int v = 0; v < w; ++v) {
      weights[u][v] = std::exp(-((u - 3) * (u - 3) + (v - 3) * (v - 3)) / (2 * sigma * sigma));
      wsum += weights[u][v];
    }
  }
  double total = 0;
  int64_t count = 0;
  for (int64_t i = 0; i + w <= ref.rows; ++i) {
    for (int64_t j = 0; j + w <= ref.cols; ++j) {
      double ma = 0, mb = 0;
      for (int u = 0; u < w; ++u) {
        for (int v = 0; v < w; ++v) {
          ma += weights[u][v] / wsum * a(i + u, j + v);
          mb += weights[u][v] / wsum * b(i + u, j + v);
        }
      }
      double va = 0, vb = 0, cov = 0;
      for (int u = 0; u < w; ++u) {
        for (int v = 0; v < w; ++v) {
          const double k = weights[u][v] / wsum;
          va += k * (a(i + u, j + v) - ma) * (a(i + u, j + v) - ma);
          vb += k * (b(i + u, j + v) - mb) * (b(i + u, j + v) - mb);
          cov += k * (a(i + u, j + v) - ma) * (b(i + u, j + v) - mb);
        }
      }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Two-sided exact p by enumerating every sign assignment of the ranks.
double enumeration_p(const std::vector<double>& d) {
  const size_t n = d.size();
  std::vector<double> rank(n);
  for (size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2;
  }
  double wObs = 0;
  for (size_t i = 0; i < n; ++i) {
    wObs += d[i] > 0 ? rank[i] : 0;
  }
  const double center = n * (n + 1) / 4.0;
  int hits = 0;
  for (unsigned s = 0; s < (1u << n); ++s) {
    double w = 0;
    for (size_t i = 0; i < n; ++i) {
      w += (s >> i) & 1u ? rank[i] : 0;
    }
    hits += std::abs(w - center) >= std::abs(wObs - center) - 1e-9;
  }
  return static_cast<double>(hits) / static_cast<double>(1u << n);
}

} // namespace

TEST_CASE("psnr on a hand-built pair") {
  std::vector<double> ref(16);
  for (size_t i = 0; i < 16; ++i) {
    ref[i] = i % 2 ? 1.5 : 0.5;
  }
  auto rec = ref;
  const double delta = 0.1;
  rec[0] += delta;
  rec[1] -= delta;
  const double expect = 10 * std::log10(1.5 * 1.5 * 16 / (2 * delta * delta));
  CHECK(psnr(image_from(ref, 4, 4), image_from(rec, 4, 4)) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::isinf(psnr(image_from(ref, 4, 4), image_from(ref, 4, 4))));
}

TEST_CASE("psnr and ssim are invariant to positive global scaling") {
  const auto ref = random_image(32, 32, 1);
  const auto rec = perturbed(ref, 0.1, 2);
  const double p = psnr(ref, rec);
  const double s = ssim(ref, rec);
  for (double k : {0.01, 3.0, 250.0}) {
    CHECK(psnr(scaled(ref, k), rec) == doctest::Approx(p).epsilon(1e-10));
    CHECK(psnr(ref, scaled(rec, k)) == doctest::Approx(p).epsilon(1e-10));
    CHECK(ssim(scaled(ref, k), rec) == doctest::Approx(s).epsilon(1e-10));
    CHECK(ssim(ref, scaled(rec, k)) == doctest::Approx(s).epsilon(1e-10));
  }
}

TEST_CASE("ssim matches a direct window evaluation") {
  const auto ref = random_image(20, 24, 3);
  for (double noise : {0.0, 0.05, 0.3}) {
    const auto rec = perturbed(ref, noise, 4);
    CHECK(ssim(ref, rec) == doctest::Approx(naive_ssim(ref, rec)).epsilon(1e-12));
  }
  CHECK(ssim(ref, ref) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("metrics reject degenerate inputs") {
  const auto ref = random_image(8, 8, 5);
  CHECK_THROWS_AS(psnr(ref, random_image(8, 9, 5)), ContractError);
  CHECK_THROWS_AS(ssim(ref, random_image(8, 8, 6), SsimOptions{9}), ContractError);
  CHECK_THROWS_AS(psnr(scaled(ref, 0.0), ref), EvaluationError);
  CHECK(psnr(ref, scaled(ref, 0.0)) > -1e300);
}

TEST_CASE("magnitude reduces channel pairs") {
  const auto x = torch::stack({torch::full({2, 3}, 3.0), torch::full({2, 3}, -4.0)});
  const auto m = magnitude(x);
  CHECK(m.rows == 2);
  CHECK(m.cols == 3);
  CHECK(m.at(1, 2) == 5.0);
}

TEST_CASE("signed rank frozen small cases") {
  const std::vector<double> zero(6, 0.0);
  const std::vector<double> up{1, 2, 3, 4, 5, 6};
  CHECK(signed_rank_test(up, zero) == doctest::Approx(2.0 / 64.0).epsilon(1e-15));
  const std::vector<double> mixed{-1, 2, 3, 4, 5, 6};
  CHECK(signed_rank_test(mixed, zero) == doctest::Approx(4.0 / 64.0).epsilon(1e-15));
  CHECK(signed_rank_test(up, up) == 1.0);
  CHECK_THROWS_AS(signed_rank_test(std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 0}), ContractError);
  CHECK_THROWS_AS(signed_rank_test(up, std::vector<double>{1}), ContractError);
}

TEST_CASE("signed rank exact mode matches enumeration up to twelve pairs") {
  SplitMix64 rng(11);
  for (int n = 5; n <= kExactSignedRankLimit; ++n) {
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n)), d(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        a[static_cast<size_t>(i)] = std::round(rng.uniform(0, 10) * 2) / 2 + 0.3;
        b[static_cast<size_t>(i)] = std::round(rng.uniform(0, 10) * 2) / 2;
        d[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)];
      }
      const double p = signed_rank_test(a, b);
      CAPTURE(n);
      CHECK(p == doctest::Approx(enumeration_p(d)).epsilon(1e-12));
      CHECK(p > 0.0);
      CHECK(p <= 1.0);
      CHECK(signed_rank_test(b, a) == p);
    }
  }
}

TEST_CASE("signed rank ties use average ranks") {
  const std::vector<double> a{1, 1, 2, 2, 3, 5, 8};
  const std::vector<double> b{0, 2, 0, 4, 0, 0, 0};
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    d[i] = a[i] - b[i];
  }
  CHECK(signed_rank_test(a, b) == doctest::Approx(enumeration_p(d)).epsilon(1e-12));
}

TEST_CASE("signed rank normal approximation above the exact limit") {
  std::vector<double> a(20), zero(20, 0.0);
  for (int i = 0; i < 20; ++i) {
    a[static_cast<size_t>(i)] = i + 1;
  }
  const double z = 105.0 / std::sqrt(20.0 * 21.0 * 41.0 / 24.0);
  CHECK(signed_rank_test(a, zero) == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-12));
  a[0] = -1;
  a[1] = -2;
  const double z2 = (210.0 - 3.0 - 105.0) / std::sqrt(717.5);
  CHECK(signed_rank_test(a, zero) == doctest::Approx(std::erfc(z2 / std::sqrt(2.0))).epsilon(1e-12));
}

TEST_CASE("summaries average subjects first unless slice pooling is requested") {
  for (bool pooled : {false, true}) {
    MetricReport r(pooled);
    r.add({"full", "T1", "000", 0, 10.0, 0.5});
    r.add({"full", "T1", "000", 1, 20.0, 0.7});
    r.add({"full", "T1", "001", 0, 30.0, 0.9});
    const auto s = r.summaries();
    REQUIRE(s.size() == 2);
    CHECK(s[0].contrast == "T1");
    CHECK(s[1].contrast == "all");
    if (pooled) {
      CHECK(s[0].psnr.mean == doctest::Approx(20.0));
      CHECK(s[0].psnr.std == doctest::Approx(10.0));
      CHECK(s[0].psnr.count == 3);
    } else {
      CHECK(s[0].psnr.mean == doctest::Approx(22.5));
      CHECK(s[0].psnr.std == doctest::Approx(std::sqrt(2 * 7.5 * 7.5)));
      CHECK(s[0].ssim.mean == doctest::Approx(0.75));
      CHECK(s[0].psnr.count == 2);
    }
  }
}

TEST_CASE("report pairs slices across methods and exports tables") {
  MetricReport r;
  for (int k = 0; k < 6; ++k) {
    r.add({"full", "T2", "00" + std::to_string(k / 2), k % 2, 30.0 + k, 0.9});
    r.add({"zf", "T2", "00" + std::to_string(k / 2), k % 2, 20.0 + k, 0.6});
  }
  const auto tests = r.pairwise();
  REQUIRE(tests.size() == 2);
  CHECK(tests[0].pairs == 6);
  CHECK(tests[0].psnrP == doctest::Approx(2.0 / 64.0));
  CHECK(tests[0].ssimP == doctest::Approx(2.0 / 64.0));
  CHECK(r.toCsv().rfind("method,contrast,subject,slice,psnr_db,ssim\n", 0) == 0);
  CHECK(r.summaryCsv().find("full,T2,3,") != std::string::npos);
  const auto j = r.toJson();
  CHECK(j["rows"].size() == 12);
  CHECK(j["statistics"] == "subject-mean");
  MetricReport inf;
  inf.add({"x", "T1", "000", 0, kPsnrIdentical, 1.0});
  CHECK(inf.toJson()["rows"][0]["psnr"] == "inf");
}
