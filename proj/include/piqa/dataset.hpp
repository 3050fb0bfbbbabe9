#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace piqa::dataset {

enum class Attribute { Overall, Exposure, Details };
enum class Split { Train, Val, Test };

std::string_view to_string(Attribute a);
std::string_view to_string(Split s);
// Throws Error{ConfigError} on unknown names.
Attribute parse_attribute(std::string_view text);
Split parse_split(std::string_view text);

struct FaceBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const FaceBox&, const FaceBox&) = default;
};

struct PortraitRecord {
  std::filesystem::path image_ref;
  std::string scene_id;
  double jod = 0.0;
  Attribute attribute = Attribute::Overall;
  std::optional<FaceBox> face_box;
  Split split = Split::Train;
  int line = 0;  // source line in the manifest, 0 when synthesised
};

struct PairSample {
  PortraitRecord x;
  PortraitRecord y;
  int label = 0;
};

// One manifest line as written, before attribute filtering or file checks.
struct ManifestRow {
  int line = 0;
  std::string image_path;
  std::string scene_id;
  Split split = Split::Train;
  Attribute attribute = Attribute::Overall;
  double jod = 0.0;
  std::optional<FaceBox> face_box;
};

// Scene id -> indices into the record list. Ordered by scene id.
class SceneIndex {
 public:
  SceneIndex() = default;
  explicit SceneIndex(std::span<const PortraitRecord> records);

  const std::map<std::string, std::vector<std::size_t>>& scenes() const noexcept { return scenes_; }
  std::size_t count(const std::string& scene_id) const;
  std::size_t record_count() const noexcept { return records_; }

 private:
  std::map<std::string, std::vector<std::size_t>> scenes_;
  std::size_t records_ = 0;
};

struct LoadOptions {
  // Check that every image opens and that face boxes fit inside it.
  bool verify_images = true;
};

// Syntax-level parse of the manifest (header required). Throws MissingFile or
// MalformedRow with the offending line number.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);

// Resolves relative image paths against the manifest directory.
std::filesystem::path resolve_image_path(const std::filesystem::path& manifest, const std::string& image_path);

// Full load for one attribute: parse, filter, resolve paths and validate.
std::vector<PortraitRecord> load_manifest(const std::filesystem::path& path, Attribute attribute,
                                          const LoadOptions& options = {});

std::vector<PortraitRecord> filter_split(std::span<const PortraitRecord> records, Split split);

// 1 when q_x >= q_y, else 0. This is the reverse of the printed polarity; it
// agrees with pair_probability > 0.5 when x scores higher.
int binary_label(double q_x, double q_y);

// Number of unordered pairs available in each scene, in scene order.
std::uint64_t pair_count(std::size_t scene_size) noexcept;

// Draws n_pairs within-scene ordered pairs. Scenes are chosen with weight
// equal to their pair count; members are drawn uniformly without replacement.
std::vector<PairSample> sample_pairs(const SceneIndex& index, std::span<const PortraitRecord> records,
                                     std::size_t n_pairs, std::uint64_t seed);

}  // namespace piqa::dataset
