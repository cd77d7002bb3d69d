#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrank/data/image.hpp"

namespace pairrank::data {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { kUnassigned, kTrain, kVal, kTest };
const char* split_name(Split split);

/// Disc lesion geometry in the frame of the image it belongs to.
struct Lesion {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
};

/// One image of one subject at one visit. `target` holds the progression t*
/// (Starmen) or the regression target y (tumor radius, external targets).
struct LongitudinalSample {
  std::string subject_id;
  int time_index = 0;
  double target = 0.0;
  Image image;
  std::optional<Mask> change_mask;
  std::optional<Lesion> lesion;
  /// Nuisance pose the generator applied (not persisted in manifests).
  std::optional<AugmentParams> nuisance;
};

struct Subject {
  std::string id;
  Split split = Split::kUnassigned;
  std::vector<LongitudinalSample> samples;  // strictly increasing time_index
};

struct LongitudinalDataset {
  std::string name;
  nlohmann::json info = nlohmann::json::object();  // generator config, seed, summary
  std::vector<Subject> subjects;

  std::size_t image_count() const;
  std::size_t subject_count(Split split) const;
  /// Throws DatasetError if an invariant is broken (time order, image range,
  /// mask dimensions, uniform image size).
  void validate() const;
};

/// Within-subject ordered pair. `logit = R(I_second, I_first)`, `label` is 1 iff
/// the second image is the later one and `delta = y_second - y_first`.
struct PairRecord {
  std::size_t subject = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  int label = 0;
  double delta = 0.0;
  bool tie = false;
};

enum class PairMode { kAllOrdered, kBothDirections, kRandomK };

/// Pairs of the subjects tagged `split` (kUnassigned selects every subject).
/// kAllOrdered yields earlier->later pairs only, kBothDirections each pair in
/// both orders, kRandomK up to `k` random unordered pairs per subject with a
/// random orientation. Pairs with equal targets carry `tie = true`.
std::vector<PairRecord> sample_pairs(const LongitudinalDataset& dataset, Split split, PairMode mode,
                                     std::uint64_t seed = 0, std::size_t k = 0);

/// Subject-level split by the given train/val/test ratios, deterministic in
/// `seed`. Throws DatasetError for fewer subjects than non-zero ratios.
void split_subjects(LongitudinalDataset& dataset, std::array<double, 3> ratios = {0.6, 0.2, 0.2},
                    std::uint64_t seed = 0);

/// Sample-count-weighted mean and population std of targets.
std::pair<double, double> target_stats(const LongitudinalDataset& dataset);

struct ManifestOptions {
  /// Square side every image is resized to; 0 keeps native size.
  int input_size = 0;
};

/// Reads `subject_id,time_index,target,image_path[,mask_path]` CSV. Paths are
/// relative to the manifest's directory. Images are rescaled to [0, 1].
LongitudinalDataset load_manifest(const std::filesystem::path& manifest, const ManifestOptions& options = {});

/// Writes `manifest.csv`, `images/`, optional `masks/`, and `dataset.json`.
/// Refuses a non-empty directory unless `force`.
void save_dataset(const LongitudinalDataset& dataset, const std::filesystem::path& dir, bool force = false);

/// load_manifest plus the lesion table and info stored in `dataset.json`.
LongitudinalDataset load_dataset_dir(const std::filesystem::path& dir, const ManifestOptions& options = {});

}  // namespace pairrank::data
