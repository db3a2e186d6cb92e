#include "adadiff/metrics.hpp"

#include "adadiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <tuple>

namespace adadiff {

MagnitudeImage magnitude(const torch::Tensor& channels) {
  if (channels.dim() != 3 || channels.size(0) != 2) {
    throw ContractError("magnitude: expected a (2, H, W) tensor");
  }
  auto c = channels.detach().to(torch::kFloat64).contiguous();
  auto mag = torch::sqrt(c[0] * c[0] + c[1] * c[1]).contiguous();
  MagnitudeImage out;
  out.rows = mag.size(0);
  out.cols = mag.size(1);
  out.data.assign(mag.data_ptr<double>(), mag.data_ptr<double>() + mag.numel());
  return out;
}

namespace {

void check_pair(const MagnitudeImage& ref, const MagnitudeImage& rec) {
  if (ref.rows != rec.rows || ref.cols != rec.cols || ref.data.size() != rec.data.size() || ref.data.empty()) {
    throw ContractError("metrics: images must be non-empty and of equal shape");
  }
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> normalized(const std::vector<double>& v, bool isReference) {
  const double m = mean_of(v);
  if (!(m > 0.0)) {
    if (isReference) {
      throw EvaluationError("metrics: reference image has zero mean");
    }
    // A non-negative image with zero mean is all zeros already.
    return std::vector<double>(v.size(), 0.0);
  }
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [m](double x) { return x / m; });
  return out;
}

} // namespace

double psnr(const MagnitudeImage& ref, const MagnitudeImage& rec) {
  check_pair(ref, rec);
  const auto a = normalized(ref.data, true);
  const auto b = normalized(rec.data, false);
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    mse += (a[i] - b[i]) * (a[i] - b[i]);
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) {
    return kPsnrIdentical;
  }
  const double peak = *std::max_element(a.begin(), a.end());
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const MagnitudeImage& ref, const MagnitudeImage& rec, const SsimOptions& options) {
  check_pair(ref, rec);
  const int w = options.window;
  if (w < 1 || w > ref.rows || w > ref.cols) {
    throw ContractError("ssim: window larger than the image");
  }
  const auto a = normalized(ref.data, true);
  const auto b = normalized(rec.data, false);
  const double range = *std::max_element(a.begin(), a.end());
  const double c1 = (options.k1 * range) * (options.k1 * range);
  const double c2 = (options.k2 * range) * (options.k2 * range);

  std::vector<double> g(static_cast<size_t>(w));
  const double center = (w - 1) / 2.0;
  for (int i = 0; i < w; ++i) {
    g[static_cast<size_t>(i)] = std::exp(-(i - center) * (i - center) / (2.0 * options.sigma * options.sigma));
  }
  const double gsum = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) {
    v /= gsum;
  }

  // Separable weighted means of a, b, a^2, b^2, ab over valid windows.
  const int64_t rows = ref.rows;
  const int64_t cols = ref.cols;
  const int64_t outRows = rows - w + 1;
  const int64_t outCols = cols - w + 1;
  auto filter = [&](auto&& value) {
    std::vector<double> tmp(static_cast<size_t>(rows * outCols));
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < outCols; ++j) {
        double s = 0.0;
        for (int k = 0; k < w; ++k) {
          s += g[static_cast<size_t>(k)] * value(static_cast<size_t>(i * cols + j + k));
        }
        tmp[static_cast<size_t>(i * outCols + j)] = s;
      }
    }
    std::vector<double> out(static_cast<size_t>(outRows * outCols));
    for (int64_t i = 0; i < outRows; ++i) {
      for (int64_t j = 0; j < outCols; ++j) {
        double s = 0.0;
        for (int k = 0; k < w; ++k) {
          s += g[static_cast<size_t>(k)] * tmp[static_cast<size_t>((i + k) * outCols + j)];
        }
        out[static_cast<size_t>(i * outCols + j)] = s;
      }
    }
    return out;
  };
  const auto muA = filter([&](size_t p) { return a[p]; });
  const auto muB = filter([&](size_t p) { return b[p]; });
  const auto aa = filter([&](size_t p) { return a[p] * a[p]; });
  const auto bb = filter([&](size_t p) { return b[p] * b[p]; });
  const auto ab = filter([&](size_t p) { return a[p] * b[p]; });

  double total = 0.0;
  for (size_t p = 0; p < muA.size(); ++p) {
    const double varA = aa[p] - muA[p] * muA[p];
    const double varB = bb[p] - muB[p] * muB[p];
    const double cov = ab[p] - muA[p] * muB[p];
    const double num = (2.0 * muA[p] * muB[p] + c1) * (2.0 * cov + c2);
    const double den = (muA[p] * muA[p] + muB[p] * muB[p] + c1) * (varA + varB + c2);
    total += num / den;
  }
  return total / static_cast<double>(muA.size());
}

double signed_rank_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ContractError("signed_rank_test: samples must be paired (equal length)");
  }
  std::vector<double> d;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (std::isnan(diff)) {
      throw ContractError("signed_rank_test: NaN in sample");
    }
    if (diff != 0.0) {
      d.push_back(diff);
    }
  }
  const auto n = static_cast<int64_t>(d.size());
  if (n == 0) {
    return 1.0;
  }
  if (n < 5) {
    throw ContractError("signed_rank_test: need at least 5 non-zero differences");
  }

  std::vector<size_t> order(d.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(d.size());
  double tieTerm = 0.0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) {
      ++j;
    }
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) {
      rank[order[k]] = avg;
    }
    const double t = static_cast<double>(j - i + 1);
    tieTerm += t * t * t - t;
    i = j + 1;
  }

  double wPlus = 0.0;
  for (size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0.0) {
      wPlus += rank[i];
    }
  }
  const double nn = static_cast<double>(n);
  const double center = nn * (nn + 1.0) / 4.0;
  const double observed = std::abs(wPlus - center);

  if (n <= kExactSignedRankLimit) {
    // Average ranks are multiples of 1/2, so doubled sums are exact integers.
    std::vector<int64_t> twice(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
      twice[i] = std::llround(2.0 * rank[i]);
    }
    const auto twiceObserved = std::llround(2.0 * observed);
    const auto twiceCenter2 = std::llround(4.0 * center); // 2 * (2 * center)
    int64_t extreme = 0;
    const int64_t total = int64_t{1} << n;
    for (int64_t mask = 0; mask < total; ++mask) {
      int64_t s = 0;
      for (int64_t i = 0; i < n; ++i) {
        if (mask & (int64_t{1} << i)) {
          s += twice[static_cast<size_t>(i)];
        }
      }
      // |2s - 2*center2/2| >= 2*observed, all in doubled units.
      if (std::llabs(2 * s - twiceCenter2) >= 2 * twiceObserved) {
        ++extreme;
      }
    }
    return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(total));
  }

  const double variance = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tieTerm / 48.0;
  if (!(variance > 0.0)) {
    return 1.0;
  }
  const double z = observed / std::sqrt(variance);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = static_cast<int64_t>(values.size());
  if (values.empty()) {
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

void MetricReport::add(MetricRow row) {
  rows_.push_back(std::move(row));
}

std::vector<std::string> MetricReport::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows_) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) {
      out.push_back(r.method);
    }
  }
  return out;
}

std::vector<std::string> MetricReport::contrasts() const {
  std::vector<std::string> out;
  for (const auto& r : rows_) {
    if (std::find(out.begin(), out.end(), r.contrast) == out.end()) {
      out.push_back(r.contrast);
    }
  }
  return out;
}

std::vector<MethodSummary> MetricReport::summaries() const {
  std::vector<MethodSummary> out;
  auto groups = contrasts();
  groups.push_back("all");
  for (const auto& method : methods()) {
    for (const auto& contrast : groups) {
      // Subject -> (psnr values, ssim values), in first-seen order.
      std::vector<std::string> subjects;
      std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> bySubject;
      std::vector<double> pooledP, pooledS;
      for (const auto& r : rows_) {
        if (r.method != method || (contrast != "all" && r.contrast != contrast)) {
          continue;
        }
        if (!bySubject.count(r.subject)) {
          subjects.push_back(r.subject);
        }
        bySubject[r.subject].first.push_back(r.psnr);
        bySubject[r.subject].second.push_back(r.ssim);
        pooledP.push_back(r.psnr);
        pooledS.push_back(r.ssim);
      }
      if (pooledP.empty()) {
        continue;
      }
      MethodSummary s;
      s.method = method;
      s.contrast = contrast;
      if (slicePooled_) {
        s.psnr = summarize(pooledP);
        s.ssim = summarize(pooledS);
      } else {
        std::vector<double> p, q;
        for (const auto& subject : subjects) {
          const auto& [ps, ss] = bySubject[subject];
          p.push_back(summarize(ps).mean);
          q.push_back(summarize(ss).mean);
        }
        s.psnr = summarize(p);
        s.ssim = summarize(q);
      }
      out.push_back(s);
    }
  }
  return out;
}

std::vector<PairwiseTest> MetricReport::pairwise() const {
  std::vector<PairwiseTest> out;
  const auto ms = methods();
  auto groups = contrasts();
  groups.push_back("all");
  using Key = std::tuple<std::string, std::string, int64_t>;
  for (size_t i = 0; i < ms.size(); ++i) {
    for (size_t j = i + 1; j < ms.size(); ++j) {
      for (const auto& contrast : groups) {
        std::map<Key, const MetricRow*> a;
        for (const auto& r : rows_) {
          if (r.method == ms[i] && (contrast == "all" || r.contrast == contrast)) {
            a[{r.subject, r.contrast, r.slice}] = &r;
          }
        }
        std::vector<double> pa, pb, sa, sb;
        for (const auto& r : rows_) {
          if (r.method != ms[j] || (contrast != "all" && r.contrast != contrast)) {
            continue;
          }
          const auto it = a.find({r.subject, r.contrast, r.slice});
          if (it == a.end()) {
            continue;
          }
          pa.push_back(it->second->psnr);
          pb.push_back(r.psnr);
          sa.push_back(it->second->ssim);
          sb.push_back(r.ssim);
        }
        if (pa.empty()) {
          continue;
        }
        auto safe = [](const std::vector<double>& x, const std::vector<double>& y) {
          try {
            return signed_rank_test(x, y);
          } catch (const ContractError&) {
            return 1.0;
          }
        };
        PairwiseTest t;
        t.methodA = ms[i];
        t.methodB = ms[j];
        t.contrast = contrast;
        t.pairs = static_cast<int64_t>(pa.size());
        t.psnrP = safe(pa, pb);
        t.ssimP = safe(sa, sb);
        out.push_back(t);
      }
    }
  }
  return out;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

json number_or_inf(double v) {
  if (std::isfinite(v)) {
    return v;
  }
  return fmt(v);
}

} // namespace

std::string MetricReport::toCsv() const {
  std::string out = "method,contrast,subject,slice,psnr_db,ssim\n";
  for (const auto& r : rows_) {
    out += r.method + "," + r.contrast + "," + r.subject + "," + std::to_string(r.slice) + "," + fmt(r.psnr) + "," +
           fmt(r.ssim) + "\n";
  }
  return out;
}

std::string MetricReport::summaryCsv() const {
  std::string out = "method,contrast,n,psnr_mean,psnr_std,ssim_mean_pct,ssim_std_pct\n";
  for (const auto& s : summaries()) {
    out += s.method + "," + s.contrast + "," + std::to_string(s.psnr.count) + "," + fmt(s.psnr.mean) + "," +
           fmt(s.psnr.std) + "," + fmt(100.0 * s.ssim.mean) + "," + fmt(100.0 * s.ssim.std) + "\n";
  }
  return out;
}

json MetricReport::toJson() const {
  json j;
  j["statistics"] = slicePooled_ ? "slice-pooled" : "subject-mean";
  json rows = json::array();
  for (const auto& r : rows_) {
    rows.push_back(json{{"method", r.method},
                        {"contrast", r.contrast},
                        {"subject", r.subject},
                        {"slice", r.slice},
                        {"psnr", number_or_inf(r.psnr)},
                        {"ssim", r.ssim}});
  }
  j["rows"] = rows;
  json summaries = json::array();
  for (const auto& s : this->summaries()) {
    summaries.push_back(json{{"method", s.method},
                             {"contrast", s.contrast},
                             {"n", s.psnr.count},
                             {"psnr", {{"mean", number_or_inf(s.psnr.mean)}, {"std", number_or_inf(s.psnr.std)}}},
                             {"ssim", {{"mean", s.ssim.mean}, {"std", s.ssim.std}}}});
  }
  j["summary"] = summaries;
  json tests = json::array();
  for (const auto& t : pairwise()) {
    tests.push_back(json{{"a", t.methodA},
                         {"b", t.methodB},
                         {"contrast", t.contrast},
                         {"pairs", t.pairs},
                         {"psnrP", t.psnrP},
                         {"ssimP", t.ssimP}});
  }
  j["signedRank"] = tests;
  return j;
}

} // namespace adadiff
