#include "pairrank/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "pairrank/data/image_io.hpp"
#include "pairrank/util/rng.hpp"

namespace pairrank::data {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

std::size_t LongitudinalDataset::image_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.samples.size();
  return n;
}

std::size_t LongitudinalDataset::subject_count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(subjects.begin(), subjects.end(), [&](const Subject& s) { return s.split == split; }));
}

void LongitudinalDataset::validate() const {
  int width = -1, height = -1;
  for (const auto& subject : subjects) {
    for (std::size_t i = 0; i < subject.samples.size(); ++i) {
      const auto& s = subject.samples[i];
      if (i > 0 && s.time_index <= subject.samples[i - 1].time_index) {
        throw DatasetError("subject " + subject.id + ": time indices not strictly increasing");
      }
      if (width < 0) {
        width = s.image.width;
        height = s.image.height;
      }
      if (s.image.width != width || s.image.height != height) {
        throw DatasetError("subject " + subject.id + ": image size differs from the rest of the dataset");
      }
      for (const double v : s.image.pixels) {
        if (!(v >= 0.0 && v <= 1.0)) throw DatasetError("subject " + subject.id + ": image value outside [0, 1]");
      }
      if (s.change_mask && (s.change_mask->width != width || s.change_mask->height != height)) {
        throw DatasetError("subject " + subject.id + ": change mask size differs from image");
      }
    }
  }
}

std::vector<PairRecord> sample_pairs(const LongitudinalDataset& dataset, Split split, PairMode mode,
                                     std::uint64_t seed, std::size_t k) {
  std::vector<PairRecord> pairs;
  auto make = [&](std::size_t s, std::size_t a, std::size_t b) {
    const auto& samples = dataset.subjects[s].samples;
    PairRecord p;
    p.subject = s;
    p.first = a;
    p.second = b;
    p.label = samples[b].time_index > samples[a].time_index ? 1 : 0;
    p.delta = samples[b].target - samples[a].target;
    p.tie = p.delta == 0.0;
    return p;
  };
  for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
    const auto& subject = dataset.subjects[s];
    if (split != Split::kUnassigned && subject.split != split) continue;
    const std::size_t n = subject.samples.size();
    if (n < 2) continue;
    if (mode == PairMode::kRandomK) {
      std::vector<std::pair<std::size_t, std::size_t>> all;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) all.emplace_back(i, j);
      }
      Rng rng(seed, s);
      rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(all));
      const std::size_t take = std::min(k, all.size());
      for (std::size_t i = 0; i < take; ++i) {
        const auto [a, b] = all[i];
        pairs.push_back(rng.uniform() < 0.5 ? make(s, a, b) : make(s, b, a));
      }
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        pairs.push_back(make(s, i, j));
        if (mode == PairMode::kBothDirections) pairs.push_back(make(s, j, i));
      }
    }
  }
  return pairs;
}

void split_subjects(LongitudinalDataset& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw DatasetError("split ratios must be non-negative and sum to 1");
  }
  const std::size_t n = dataset.subjects.size();
  const auto nonzero = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0.0; }));
  if (n < nonzero) {
    throw DatasetError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(nonzero) + " parts");
  }
  // Largest-remainder apportionment, then make sure every non-zero part is populated.
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    const auto i = static_cast<std::size_t>(std::max_element(remainders.begin(), remainders.end()) - remainders.begin());
    counts[i] += 1;
    remainders[i] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (ratios[i] > 0.0 && counts[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      counts[donor] -= 1;
      counts[i] = 1;
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const Split tags[3] = {Split::kTrain, Split::kVal, Split::kTest};
  std::size_t pos = 0;
  for (std::size_t part = 0; part < 3; ++part) {
    for (std::size_t c = 0; c < counts[part]; ++c) dataset.subjects[order[pos++]].split = tags[part];
  }
}

std::pair<double, double> target_stats(const LongitudinalDataset& dataset) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : dataset.subjects) {
    for (const auto& sample : s.samples) {
      sum += sample.target;
      sum_sq += sample.target * sample.target;
      ++n;
    }
  }
  if (n == 0) return {0.0, 0.0};
  const double mean = sum / static_cast<double>(n);
  return {mean, std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean))};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return fields;
}

template <typename T>
T parse_number(const std::string& text, const std::string& what, std::size_t row) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DatasetError("manifest row " + std::to_string(row) + ": invalid " + what + " '" + text + "'");
  }
  return value;
}

Mask resize_mask(const Mask& mask, int size) {
  if (mask.width == size && mask.height == size) return mask;
  std::vector<double> values(mask.bits.begin(), mask.bits.end());
  const auto resized = resize_bilinear(values, mask.width, mask.height, size, size);
  Mask out = Mask::zeros(size, size);
  for (std::size_t i = 0; i < resized.size(); ++i) out.bits[i] = resized[i] >= 0.5 ? 1 : 0;
  return out;
}

std::string format_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

}  // namespace

LongitudinalDataset load_manifest(const fs::path& manifest, const ManifestOptions& options) {
  std::ifstream in(manifest);
  if (!in) throw DatasetError("cannot open manifest: " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("empty manifest: " + manifest.string());
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw DatasetError("manifest header lacks column '" + name + "'");
      return std::nullopt;
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_subject = *column("subject_id", true);
  const auto c_time = *column("time_index", true);
  const auto c_target = *column("target", true);
  const auto c_image = *column("image_path", true);
  const auto c_mask = column("mask_path", false);
  const fs::path base = manifest.parent_path();

  LongitudinalDataset dataset;
  dataset.name = manifest.parent_path().filename().string();
  std::map<std::string, std::size_t> index;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < header.size() - (c_mask ? 1 : 0)) {
      throw DatasetError("manifest row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                         " fields, got " + std::to_string(fields.size()));
    }
    LongitudinalSample sample;
    sample.subject_id = fields[c_subject];
    if (sample.subject_id.empty()) throw DatasetError("manifest row " + std::to_string(row) + ": empty subject_id");
    sample.time_index = parse_number<int>(fields[c_time], "time_index", row);
    sample.target = parse_number<double>(fields[c_target], "target", row);
    const fs::path image_path = base / fields[c_image];
    if (!fs::exists(image_path)) {
      throw DatasetError("manifest row " + std::to_string(row) + ": image file not found: " + image_path.string());
    }
    try {
      sample.image = read_image(image_path);
      if (c_mask && *c_mask < fields.size() && !fields[*c_mask].empty()) {
        const fs::path mask_path = base / fields[*c_mask];
        if (!fs::exists(mask_path)) {
          throw DatasetError("manifest row " + std::to_string(row) + ": mask file not found: " + mask_path.string());
        }
        sample.change_mask = read_mask(mask_path);
      }
    } catch (const ImageIoError& e) {
      throw DatasetError("manifest row " + std::to_string(row) + ": " + e.what());
    }
    if (options.input_size > 0) {
      sample.image = resize_bilinear(sample.image, options.input_size, options.input_size);
      clamp_unit(sample.image);
      if (sample.change_mask) sample.change_mask = resize_mask(*sample.change_mask, options.input_size);
    }
    auto [it, inserted] = index.emplace(sample.subject_id, dataset.subjects.size());
    if (inserted) dataset.subjects.push_back(Subject{sample.subject_id, Split::kUnassigned, {}});
    dataset.subjects[it->second].samples.push_back(std::move(sample));
  }
  for (auto& subject : dataset.subjects) {
    std::stable_sort(subject.samples.begin(), subject.samples.end(),
                     [](const auto& a, const auto& b) { return a.time_index < b.time_index; });
    for (std::size_t i = 1; i < subject.samples.size(); ++i) {
      if (subject.samples[i].time_index == subject.samples[i - 1].time_index) {
        throw DatasetError("manifest: subject " + subject.id + " has duplicate time_index " +
                           std::to_string(subject.samples[i].time_index));
      }
    }
  }
  dataset.validate();
  return dataset;
}

void save_dataset(const LongitudinalDataset& dataset, const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw DatasetError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir / "images");
  bool has_masks = false;
  for (const auto& s : dataset.subjects) {
    for (const auto& sample : s.samples) has_masks = has_masks || sample.change_mask.has_value();
  }
  if (has_masks) fs::create_directories(dir / "masks");

  std::ofstream csv(dir / "manifest.csv", std::ios::trunc);
  if (!csv) throw DatasetError("cannot write manifest in " + dir.string());
  csv << "subject_id,time_index,target,image_path" << (has_masks ? ",mask_path" : "") << '\n';
  json lesions = json::array();
  for (const auto& subject : dataset.subjects) {
    for (const auto& s : subject.samples) {
      const std::string stem = subject.id + "_t" + std::to_string(s.time_index);
      const std::string image_rel = "images/" + stem + ".png";
      write_png(dir / image_rel, s.image);
      csv << subject.id << ',' << s.time_index << ',' << format_double(s.target) << ',' << image_rel;
      if (has_masks) {
        if (s.change_mask) {
          const std::string mask_rel = "masks/" + stem + ".png";
          write_mask_png(dir / mask_rel, *s.change_mask);
          csv << ',' << mask_rel;
        } else {
          csv << ',';
        }
      }
      csv << '\n';
      if (s.lesion) {
        lesions.push_back({{"subject_id", subject.id},
                           {"time_index", s.time_index},
                           {"center_x", s.lesion->center_x},
                           {"center_y", s.lesion->center_y},
                           {"radius", s.lesion->radius}});
      }
    }
  }
  const auto [mean, stddev] = target_stats(dataset);
  json meta{{"name", dataset.name},
            {"info", dataset.info},
            {"summary",
             {{"subjects", dataset.subjects.size()},
              {"images", dataset.image_count()},
              {"target_mean", mean},
              {"target_std", stddev}}},
            {"lesions", lesions}};
  std::ofstream js(dir / "dataset.json", std::ios::trunc);
  js << meta.dump(2) << '\n';
  if (!csv || !js) throw DatasetError("failed writing dataset files in " + dir.string());
}

LongitudinalDataset load_dataset_dir(const fs::path& dir, const ManifestOptions& options) {
  LongitudinalDataset dataset = load_manifest(dir / "manifest.csv", options);
  const fs::path meta_path = dir / "dataset.json";
  if (!fs::exists(meta_path)) return dataset;
  json meta;
  try {
    std::ifstream in(meta_path);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError("corrupt dataset.json in " + dir.string() + ": " + e.what());
  }
  dataset.name = meta.value("name", dataset.name);
  dataset.info = meta.value("info", json::object());
  if (meta.contains("lesions")) {
    std::map<std::pair<std::string, int>, LongitudinalSample*> lookup;
    int native = 0;
    for (auto& s : dataset.subjects) {
      for (auto& sample : s.samples) lookup[{s.id, sample.time_index}] = &sample;
    }
    native = dataset.info.value("image_size", 0);
    for (const auto& entry : meta.at("lesions")) {
      const auto it = lookup.find({entry.at("subject_id").get<std::string>(), entry.at("time_index").get<int>()});
      if (it == lookup.end()) continue;
      Lesion lesion{entry.at("center_x").get<double>(), entry.at("center_y").get<double>(),
                    entry.at("radius").get<double>()};
      if (options.input_size > 0 && native > 0 && native != options.input_size) {
        const double f = static_cast<double>(options.input_size) / native;
        lesion.center_x = (lesion.center_x + 0.5) * f - 0.5;
        lesion.center_y = (lesion.center_y + 0.5) * f - 0.5;
        lesion.radius *= f;
      }
      it->second->lesion = lesion;
    }
  }
  return dataset;
}

}  // namespace pairrank::data
