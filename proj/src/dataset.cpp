#include "stx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace stx {

std::array<std::array<double, 3>, 3> SyntheticClasses::source_colors() {
  return {{{90, 105, 125}, {200, 170, 90}, {70, 160, 90}}};
}

std::array<std::array<double, 3>, 3> SyntheticClasses::target_means() {
  return {{{80, 60, 110}, {205, 65, 75}, {95, 185, 110}}};
}

LabelMap SyntheticClasses::classify(const ImageU8& img) {
  auto means = target_means();
  LabelMap lm{img.h, img.w, kCount, std::vector<int>(static_cast<std::size_t>(img.h * img.w))};
  for (Index y = 0; y < img.h; ++y) {
    for (Index x = 0; x < img.w; ++x) {
      double best = 1e18;
      int best_k = 0;
      for (int k = 0; k < kCount; ++k) {
        double d = 0.0;
        for (Index ch = 0; ch < 3; ++ch) {
          double diff = static_cast<double>(img.at(y, x, ch)) - means[static_cast<std::size_t>(k)][static_cast<std::size_t>(ch)];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          best_k = k;
        }
      }
      lm.at(y, x) = best_k;
    }
  }
  return lm;
}

namespace {

std::array<double, 3> class_fractions(const LabelMap& lm) {
  std::array<double, 3> f{0, 0, 0};
  for (int id : lm.ids) f[static_cast<std::size_t>(id)] += 1.0;
  for (double& v : f) v /= static_cast<double>(lm.ids.size());
  return f;
}

void paint_disk(LabelMap& lm, Index cx, Index cy, Index r, int cls) {
  for (Index y = std::max<Index>(0, cy - r); y <= std::min<Index>(lm.h - 1, cy + r); ++y) {
    for (Index x = std::max<Index>(0, cx - r); x <= std::min<Index>(lm.w - 1, cx + r); ++x) {
      Index dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= r * r) lm.at(y, x) = cls;
    }
  }
}

void paint_bar(LabelMap& lm, Index x0, Index y0, Index len, Index thickness, int cls) {
  for (Index y = y0; y < std::min<Index>(lm.h, y0 + thickness); ++y) {
    for (Index x = x0; x < std::min<Index>(lm.w, x0 + len); ++x) {
      lm.at(y, x) = cls;
    }
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::llround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

LabelMap make_layout(Index size, const DomainSpec& spec, Rng& rng) {
  LabelMap lm{size, size, SyntheticClasses::kCount,
              std::vector<int>(static_cast<std::size_t>(size * size), 0)};
  const double total = static_cast<double>(size * size);
  const double eps = 0.002;
  for (int iter = 0; iter < 400; ++iter) {
    auto f = class_fractions(lm);
    double deficit_disk = spec.disk_frac - f[1];
    double deficit_stripe = spec.stripe_frac - f[2];
    if (deficit_disk <= eps && deficit_stripe <= eps) break;
    if (deficit_disk >= deficit_stripe) {
      double remaining_px = deficit_disk * total;
      Index r = static_cast<Index>(std::llround(std::sqrt(remaining_px / std::numbers::pi)));
      r = std::clamp<Index>(r, 2, std::max<Index>(2, size / 10));
      paint_disk(lm, rng.uniform_int(size), rng.uniform_int(size), r, 1);
    } else {
      Index thickness = 2 + rng.uniform_int(2);
      double remaining_px = deficit_stripe * total;
      Index len = static_cast<Index>(std::llround(remaining_px / static_cast<double>(thickness)));
      len = std::clamp<Index>(len, 6, std::max<Index>(6, size / 2));
      Index x0 = rng.uniform_int(std::max<Index>(1, size - len + 1));
      Index y0 = rng.uniform_int(std::max<Index>(1, size - thickness + 1));
      paint_bar(lm, x0, y0, len, thickness, 2);
    }
  }
  return lm;
}

ImageU8 render_source(const LabelMap& labels) {
  auto colors = SyntheticClasses::source_colors();
  ImageU8 img{labels.h, labels.w, 3,
              std::vector<std::uint8_t>(static_cast<std::size_t>(labels.h * labels.w * 3))};
  for (Index y = 0; y < labels.h; ++y) {
    for (Index x = 0; x < labels.w; ++x) {
      const auto& c = colors[static_cast<std::size_t>(labels.at(y, x))];
      for (Index ch = 0; ch < 3; ++ch) img.at(y, x, ch) = to_byte(c[static_cast<std::size_t>(ch)]);
    }
  }
  return img;
}

ImageU8 render_target(const LabelMap& labels, Rng& rng) {
  auto means = SyntheticClasses::target_means();
  // Per-image texture phases; amplitudes stay well inside the nearest-mean
  // decision margins.
  double phase0 = rng.uniform();
  double phase2 = rng.uniform();
  int checker_parity = static_cast<int>(rng.uniform_int(2));
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  ImageU8 img{labels.h, labels.w, 3,
              std::vector<std::uint8_t>(static_cast<std::size_t>(labels.h * labels.w * 3))};
  for (Index y = 0; y < labels.h; ++y) {
    for (Index x = 0; x < labels.w; ++x) {
      int cls = labels.at(y, x);
      double offset = 0.0;
      switch (cls) {
        case 0:  // smooth horizontal waves
          offset = 18.0 * std::sin(kTwoPi * (static_cast<double>(x) / 16.0 + phase0));
          break;
        case 1:  // coarse checker
          offset = (((x / 3 + y / 3) & 1) == checker_parity) ? 20.0 : -20.0;
          break;
        case 2:  // diagonal stripes
          offset = 20.0 * std::sin(kTwoPi * (static_cast<double>(x + y) / 8.0 + phase2));
          break;
        default:
          break;
      }
      const auto& m = means[static_cast<std::size_t>(cls)];
      for (Index ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) = to_byte(m[static_cast<std::size_t>(ch)] + offset);
      }
    }
  }
  return img;
}

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["image_size"] = image_size;
  j["count"] = count;
  j["source_files"] = source_files;
  j["target_files"] = target_files;
  j["label_files"] = label_files;
  j["reference_files"] = reference_files;
  j["source_class_freq"] = source_class_freq;
  j["target_class_freq"] = target_class_freq;
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  DatasetManifest m;
  m.image_size = j.at("image_size").get<Index>();
  m.count = j.at("count").get<Index>();
  m.source_files = j.at("source_files").get<std::vector<std::string>>();
  m.target_files = j.at("target_files").get<std::vector<std::string>>();
  m.label_files = j.at("label_files").get<std::vector<std::string>>();
  m.reference_files = j.at("reference_files").get<std::vector<std::string>>();
  m.source_class_freq = j.at("source_class_freq").get<std::vector<double>>();
  m.target_class_freq = j.at("target_class_freq").get<std::vector<double>>();
  return m;
}

DatasetManifest generate_dataset(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "source", ec);
  fs::create_directories(dir / "target", ec);
  fs::create_directories(dir / "labels", ec);
  fs::create_directories(dir / "reference", ec);
  if (!fs::is_directory(dir / "source")) throw IoError("cannot create dataset dir: " + dir.string());

  DomainSpec src_spec{cfg.data_disk_frac_source, cfg.data_stripe_frac_source};
  DomainSpec tgt_spec{cfg.data_disk_frac_target, cfg.data_stripe_frac_target};

  DatasetManifest m;
  m.image_size = cfg.data_image_size;
  m.count = cfg.data_images_per_domain;
  m.source_class_freq.assign(3, 0.0);
  m.target_class_freq.assign(3, 0.0);

  for (Index i = 0; i < cfg.data_images_per_domain; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04lld", static_cast<long long>(i));

    Rng src_rng(Rng::derive(cfg.data_seed, {1, static_cast<std::uint64_t>(i)}));
    LabelMap src_labels = make_layout(cfg.data_image_size, src_spec, src_rng);
    ImageU8 src_img = render_source(src_labels);

    Rng tgt_rng(Rng::derive(cfg.data_seed, {2, static_cast<std::uint64_t>(i)}));
    LabelMap tgt_labels = make_layout(cfg.data_image_size, tgt_spec, tgt_rng);
    Rng tgt_tex_rng(Rng::derive(cfg.data_seed, {3, static_cast<std::uint64_t>(i)}));
    ImageU8 tgt_img = render_target(tgt_labels, tgt_tex_rng);

    Rng ref_tex_rng(Rng::derive(cfg.data_seed, {4, static_cast<std::uint64_t>(i)}));
    ImageU8 ref_img = render_target(src_labels, ref_tex_rng);

    std::string src_file = std::string("source/") + name + ".ppm";
    std::string tgt_file = std::string("target/") + name + ".ppm";
    std::string lbl_file = std::string("labels/") + name + ".pgm";
    std::string ref_file = std::string("reference/") + name + ".ppm";
    write_ppm(src_img, dir / src_file);
    write_ppm(tgt_img, dir / tgt_file);
    write_pgm_labels(src_labels, dir / lbl_file);
    write_ppm(ref_img, dir / ref_file);
    m.source_files.push_back(src_file);
    m.target_files.push_back(tgt_file);
    m.label_files.push_back(lbl_file);
    m.reference_files.push_back(ref_file);

    auto sf = class_fractions(src_labels);
    auto tf = class_fractions(tgt_labels);
    for (int k = 0; k < 3; ++k) {
      m.source_class_freq[static_cast<std::size_t>(k)] += sf[static_cast<std::size_t>(k)];
      m.target_class_freq[static_cast<std::size_t>(k)] += tf[static_cast<std::size_t>(k)];
    }
  }
  for (int k = 0; k < 3; ++k) {
    m.source_class_freq[static_cast<std::size_t>(k)] /= static_cast<double>(m.count);
    m.target_class_freq[static_cast<std::size_t>(k)] /= static_cast<double>(m.count);
  }

  std::ofstream os(dir / "manifest.json", std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << m.to_json() << "\n";
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("missing manifest.json in " + dir.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return DatasetManifest::from_json(buf.str());
}

std::vector<ImageU8> load_images(const std::filesystem::path& dir,
                                 const std::vector<std::string>& files) {
  std::vector<ImageU8> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_ppm(dir / f));
  return out;
}

std::vector<LabelMap> load_labels(const std::filesystem::path& dir,
                                  const std::vector<std::string>& files) {
  std::vector<LabelMap> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_pgm_labels(dir / f, SyntheticClasses::kCount));
  return out;
}

}  // namespace stx
