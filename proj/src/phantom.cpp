#include "adadiff/phantom.hpp"

#include "adadiff/error.hpp"
#include "adadiff/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace adadiff {

std::string to_string(Contrast c) {
  switch (c) {
  case Contrast::T1:
    return "T1";
  case Contrast::T2:
    return "T2";
  case Contrast::PD:
    return "PD";
  }
  return "?";
}

Contrast contrast_from_string(const std::string& name) {
  if (name == "T1") {
    return Contrast::T1;
  }
  if (name == "T2") {
    return Contrast::T2;
  }
  if (name == "PD") {
    return Contrast::PD;
  }
  throw ConfigError("unknown contrast '" + name + "' (expected T1, T2 or PD)");
}

std::pair<double, double> tissue_range(int tissue, Contrast contrast) {
  // Rows: head background, then three inner tissue classes. Within a
  // contrast the ranges do not overlap.
  static constexpr double kRanges[kTissueCount + 1][3][2] = {
      {{0.55, 0.70}, {0.30, 0.45}, {0.60, 0.75}},
      {{0.75, 0.95}, {0.10, 0.25}, {0.45, 0.58}},
      {{0.15, 0.30}, {0.80, 1.00}, {0.85, 1.00}},
      {{0.35, 0.50}, {0.55, 0.75}, {0.20, 0.40}},
  };
  if (tissue < 0 || tissue > kTissueCount) {
    throw ContractError("tissue_range: tissue index out of range");
  }
  const auto c = static_cast<int>(contrast);
  return {kRanges[tissue][c][0], kRanges[tissue][c][1]};
}

namespace {

bool inside(const Ellipse& e, double x, double y) {
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  const double u = (x - e.cx) * c + (y - e.cy) * s;
  const double v = -(x - e.cx) * s + (y - e.cy) * c;
  return (u / e.a) * (u / e.a) + (v / e.b) * (v / e.b) <= 1.0;
}

double grid_coord(int64_t i, int64_t n) {
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

} // namespace

Phantom make_phantom(Contrast contrast, int64_t rows, int64_t cols, uint64_t seed) {
  if (rows < 32 || cols < 32) {
    throw ConfigError("make_phantom: image must be at least 32x32");
  }
  Phantom p;
  p.contrast = contrast;
  p.seed = seed;
  SplitMix64 rng(seed);

  Ellipse head;
  head.a = rng.uniform(0.75, 0.90);
  head.b = rng.uniform(0.85, 0.95);
  head.angle = rng.uniform(-0.2, 0.2);
  head.tissue = 0;
  p.ellipses.push_back(head);

  for (int t = 0; t <= kTissueCount; ++t) {
    for (int c = 0; c < 3; ++c) {
      const auto [lo, hi] = tissue_range(t, static_cast<Contrast>(c));
      p.intensity[t][c] = rng.uniform(lo, hi);
    }
  }

  const auto count = rng.uniformInt(8, 15);
  for (int64_t i = 0; i < count; ++i) {
    Ellipse e;
    e.cx = rng.uniform(-0.5, 0.5);
    e.cy = rng.uniform(-0.5, 0.5);
    e.a = rng.uniform(0.05, 0.35);
    e.b = rng.uniform(0.05, 0.35);
    e.angle = rng.uniform(0.0, std::numbers::pi);
    e.tissue = static_cast<int>(rng.uniformInt(1, kTissueCount));
    p.ellipses.push_back(e);
  }
  for (auto& c : p.phaseCoeffs) {
    c = 0.5 * rng.normal();
  }

  const auto ci = static_cast<int>(contrast);
  p.image = torch::zeros({2, rows, cols}, torch::kFloat32);
  auto acc = p.image.accessor<float, 3>();
  for (int64_t i = 0; i < rows; ++i) {
    const double y = grid_coord(i, rows);
    for (int64_t j = 0; j < cols; ++j) {
      const double x = grid_coord(j, cols);
      if (!inside(head, x, y)) {
        continue;
      }
      double mag = p.intensity[0][ci];
      for (size_t e = 1; e < p.ellipses.size(); ++e) {
        if (inside(p.ellipses[e], x, y)) {
          mag = p.intensity[p.ellipses[e].tissue][ci];
        }
      }
      mag = std::clamp(mag, 0.0, 1.0);
      const double phase = p.phaseCoeffs[0] * x + p.phaseCoeffs[1] * y + p.phaseCoeffs[2] * x * y;
      acc[0][i][j] = static_cast<float>(mag * std::cos(phase));
      acc[1][i][j] = static_cast<float>(mag * std::sin(phase));
    }
  }
  return p;
}

std::string to_string(Split s) {
  switch (s) {
  case Split::Train:
    return "train";
  case Split::Val:
    return "val";
  case Split::Test:
    return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") {
    return Split::Train;
  }
  if (name == "val") {
    return Split::Val;
  }
  if (name == "test") {
    return Split::Test;
  }
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

int64_t DatasetManifest::sliceCount() const {
  int64_t n = 0;
  for (const auto& s : subjects) {
    n += static_cast<int64_t>(s.slices.size());
  }
  return n;
}

json to_json(const DatasetManifest& m) {
  json j;
  j["format"] = m.version;
  j["shape"] = {m.rows, m.cols};
  j["seed"] = m.seed;
  json contrasts = json::array();
  for (auto c : m.contrasts) {
    contrasts.push_back(to_string(c));
  }
  j["contrasts"] = contrasts;
  j["slicesPerSubject"] = m.slicesPerSubject;
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    json slices = json::array();
    for (const auto& e : s.slices) {
      slices.push_back(json{{"file", e.file}, {"contrast", to_string(e.contrast)}, {"slice", e.slice}, {"seed", e.seed}});
    }
    subjects.push_back(json{{"id", s.id}, {"split", to_string(s.split)}, {"seed", s.seed}, {"slices", slices}});
  }
  j["subjects"] = subjects;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("format").get<std::string>();
    if (m.version != kDataFormat) {
      throw DataError("manifest format '" + m.version + "' is not " + kDataFormat);
    }
    const auto shape = j.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 2 || shape[0] <= 0 || shape[1] <= 0) {
      throw DataError("manifest shape must be [rows, cols]");
    }
    m.rows = shape[0];
    m.cols = shape[1];
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& c : j.at("contrasts")) {
      m.contrasts.push_back(contrast_from_string(c.get<std::string>()));
    }
    m.slicesPerSubject = j.at("slicesPerSubject").get<int64_t>();
    for (const auto& s : j.at("subjects")) {
      SubjectEntry sub;
      sub.id = s.at("id").get<std::string>();
      sub.split = split_from_string(s.at("split").get<std::string>());
      sub.seed = s.at("seed").get<uint64_t>();
      for (const auto& e : s.at("slices")) {
        SliceEntry entry;
        entry.file = e.at("file").get<std::string>();
        entry.contrast = contrast_from_string(e.at("contrast").get<std::string>());
        entry.slice = e.at("slice").get<int64_t>();
        entry.seed = e.at("seed").get<uint64_t>();
        sub.slices.push_back(entry);
      }
      m.subjects.push_back(sub);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_cfl(const std::filesystem::path& path, const torch::Tensor& channels) {
  if (channels.dim() < 3 || channels.size(-3) != 2) {
    throw ContractError("write_cfl: expected (..., 2, H, W) channels");
  }
  auto c = channels.detach().to(torch::kFloat32).contiguous();
  const auto rows = c.size(-2);
  const auto cols = c.size(-1);
  const auto images = c.numel() / (2 * rows * cols);
  auto flat = c.reshape({images, 2, rows * cols});
  auto acc = flat.accessor<float, 3>();
  std::vector<unsigned char> buf(static_cast<size_t>(c.numel()) * 4);
  size_t pos = 0;
  auto put = [&](float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int b = 0; b < 4; ++b) {
      buf[pos++] = static_cast<unsigned char>(bits >> (8 * b));
    }
  };
  for (int64_t n = 0; n < images; ++n) {
    for (int64_t i = 0; i < rows * cols; ++i) {
      put(acc[n][0][i]);
      put(acc[n][1][i]);
    }
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) {
    throw DataError("cannot write " + path.string());
  }
}

torch::Tensor read_cfl(const std::filesystem::path& path, int64_t rows, int64_t cols) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) {
    throw DataError("cannot open " + path.string());
  }
  const auto size = static_cast<int64_t>(is.tellg());
  const auto perImage = rows * cols * 2 * 4;
  if (size <= 0 || size % perImage != 0) {
    throw DataError(path.string() + ": size " + std::to_string(size) + " does not match " + std::to_string(rows) +
                    "x" + std::to_string(cols) + " complex float32 images");
  }
  const auto images = size / perImage;
  std::vector<unsigned char> buf(static_cast<size_t>(size));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(buf.data()), size);
  auto out = torch::empty({images, 2, rows * cols}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  size_t pos = 0;
  auto get = [&]() {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= uint32_t{buf[pos++]} << (8 * b);
    }
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  };
  for (int64_t n = 0; n < images; ++n) {
    for (int64_t i = 0; i < rows * cols; ++i) {
      acc[n][0][i] = get();
      acc[n][1][i] = get();
    }
  }
  out = out.reshape({images, 2, rows, cols});
  return images == 1 ? out.squeeze(0) : out;
}

DatasetManifest make_dataset(int64_t subjects, const std::vector<Contrast>& contrasts, int64_t rows, int64_t cols,
                             int64_t slicesPerSubject, uint64_t seed, const std::filesystem::path& root) {
  if (subjects < 3) {
    throw ConfigError("make_dataset: need at least 3 subjects to form train/val/test splits");
  }
  if (contrasts.empty() || slicesPerSubject < 1) {
    throw ConfigError("make_dataset: need at least one contrast and one slice per subject");
  }
  if (rows < 32 || cols < 32) {
    throw ConfigError("make_dataset: image must be at least 32x32");
  }

  DatasetManifest m;
  m.rows = rows;
  m.cols = cols;
  m.seed = seed;
  m.contrasts = contrasts;
  m.slicesPerSubject = slicesPerSubject;

  // Seeded Fisher-Yates over subject indices decides the split.
  std::vector<int64_t> order(static_cast<size_t>(subjects));
  for (int64_t i = 0; i < subjects; ++i) {
    order[static_cast<size_t>(i)] = i;
  }
  SplitMix64 rng(derive_seed(seed, 0x5b1));
  for (int64_t i = subjects - 1; i > 0; --i) {
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniformInt(0, i))]);
  }
  const auto nTest = std::max<int64_t>(1, std::llround(0.2 * static_cast<double>(subjects)));
  const auto nVal = std::max<int64_t>(1, std::llround(0.1 * static_cast<double>(subjects)));
  std::vector<Split> splits(static_cast<size_t>(subjects), Split::Train);
  for (int64_t i = 0; i < nTest; ++i) {
    splits[static_cast<size_t>(order[static_cast<size_t>(i)])] = Split::Test;
  }
  for (int64_t i = nTest; i < nTest + nVal; ++i) {
    splits[static_cast<size_t>(order[static_cast<size_t>(i)])] = Split::Val;
  }

  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) {
    throw DataError("cannot create dataset directory " + root.string() + ": " + ec.message());
  }

  for (int64_t s = 0; s < subjects; ++s) {
    SubjectEntry sub;
    char id[32];
    std::snprintf(id, sizeof(id), "%03lld", static_cast<long long>(s));
    sub.id = id;
    sub.split = splits[static_cast<size_t>(s)];
    sub.seed = derive_seed(seed, static_cast<uint64_t>(s) + 1);
    for (int64_t k = 0; k < slicesPerSubject; ++k) {
      const auto sliceSeed = derive_seed(sub.seed, static_cast<uint64_t>(k) + 1);
      for (auto c : contrasts) {
        SliceEntry e;
        e.file = "sub" + sub.id + "/" + to_string(c) + "_" + std::to_string(k) + ".cfl";
        e.contrast = c;
        e.slice = k;
        e.seed = sliceSeed;
        write_cfl(root / e.file, make_phantom(c, rows, cols, sliceSeed).image);
        sub.slices.push_back(e);
      }
    }
    m.subjects.push_back(sub);
  }

  std::ofstream os(root / "manifest.json", std::ios::trunc);
  os << to_json(m).dump(2) << '\n';
  if (!os) {
    throw DataError("cannot write manifest in " + root.string());
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream is(path);
  if (!is) {
    throw DataError("cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
  auto m = manifest_from_json(j);
  const auto expected = static_cast<std::uintmax_t>(m.rows * m.cols * 2 * 4);
  for (const auto& s : m.subjects) {
    for (const auto& e : s.slices) {
      const auto file = root / e.file;
      std::error_code ec;
      const auto size = std::filesystem::file_size(file, ec);
      if (ec) {
        throw DataError("manifest references missing file " + file.string());
      }
      if (size != expected) {
        throw DataError(file.string() + " has " + std::to_string(size) + " bytes, expected " +
                        std::to_string(expected));
      }
    }
  }
  return m;
}

std::vector<SliceRef> split_slices(const DatasetManifest& m, Split split) {
  std::vector<SliceRef> out;
  for (const auto& s : m.subjects) {
    if (s.split != split) {
      continue;
    }
    for (const auto& e : s.slices) {
      out.push_back({s.id, e});
    }
  }
  return out;
}

torch::Tensor load_slice(const std::filesystem::path& root, const DatasetManifest& m, const SliceEntry& entry) {
  auto x = read_cfl(root / entry.file, m.rows, m.cols);
  if (x.dim() != 3) {
    throw DataError(entry.file + " holds more than one image");
  }
  return x;
}

torch::Tensor load_split(const std::filesystem::path& root, const DatasetManifest& m, Split split, int64_t limit) {
  std::vector<torch::Tensor> images;
  for (const auto& ref : split_slices(m, split)) {
    if (limit >= 0 && static_cast<int64_t>(images.size()) >= limit) {
      break;
    }
    images.push_back(load_slice(root, m, ref.entry));
  }
  if (images.empty()) {
    return torch::empty({0, 2, m.rows, m.cols}, torch::kFloat32);
  }
  return torch::stack(images);
}

torch::Tensor simulate_acquisition(const torch::Tensor& image, const ImagingOperator& op, double noiseSigma,
                                   uint64_t seed) {
  if (noiseSigma < 0.0) {
    throw ContractError("simulate_acquisition: noise level must be non-negative");
  }
  auto y = apply_A(image, op);
  if (noiseSigma == 0.0) {
    return y;
  }
  auto gen = make_generator(seed);
  const auto realType = image.scalar_type();
  auto re = torch::randn(y.sizes(), gen, torch::TensorOptions().dtype(realType));
  auto im = torch::randn(y.sizes(), gen, torch::TensorOptions().dtype(realType));
  auto noise = torch::complex(re, im) * noiseSigma;
  return y + noise * op.mask().pattern.to(y.scalar_type());
}

} // namespace adadiff
