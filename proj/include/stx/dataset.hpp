#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "stx/config.hpp"
#include "stx/image.hpp"
#include "stx/rng.hpp"

namespace stx {

// Three semantic classes shared by both domains.
//   0 background, 1 disk, 2 stripe
// Source renders each class as a flat color. Target renders class-specific
// procedural textures around well-separated mean colors (global color shift
// folded into the means), so pixels classify exactly by nearest mean.
struct SyntheticClasses {
  static constexpr int kCount = 3;
  static std::array<std::array<double, 3>, 3> source_colors();
  static std::array<std::array<double, 3>, 3> target_means();
  static LabelMap classify(const ImageU8& img);
};

struct DomainSpec {
  double disk_frac = 0.0;
  double stripe_frac = 0.0;
};

// Paints disks and stripe segments until the requested class fractions are
// reached (measured on the evolving label map, so overwrites are accounted).
LabelMap make_layout(Index size, const DomainSpec& spec, Rng& rng);

ImageU8 render_source(const LabelMap& labels);
ImageU8 render_target(const LabelMap& labels, Rng& rng);

struct DatasetManifest {
  Index image_size = 0;
  Index count = 0;
  std::vector<std::string> source_files, target_files, label_files, reference_files;
  // Mean realized per-class pixel fractions (length 3).
  std::vector<double> source_class_freq, target_class_freq;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

// Writes source/, target/, labels/, reference/ and manifest.json under dir.
// reference/ holds the source layouts re-rendered in the target style (the
// by-construction paired ground truth used by image metrics).
DatasetManifest generate_dataset(const ExperimentConfig& cfg, const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& dir);

std::vector<ImageU8> load_images(const std::filesystem::path& dir,
                                 const std::vector<std::string>& files);
std::vector<LabelMap> load_labels(const std::filesystem::path& dir,
                                  const std::vector<std::string>& files);

}  // namespace stx
