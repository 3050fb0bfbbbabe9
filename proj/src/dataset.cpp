#include "piqa/dataset.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "piqa/error.hpp"
#include "piqa/image.hpp"

namespace piqa::dataset {

std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::Overall: return "overall";
    case Attribute::Exposure: return "exposure";
    case Attribute::Details: return "details";
  }
  return "overall";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Attribute parse_attribute(std::string_view text) {
  if (text == "overall") return Attribute::Overall;
  if (text == "exposure") return Attribute::Exposure;
  if (text == "details") return Attribute::Details;
  throw Error(Errc::ConfigError, "unknown attribute '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw Error(Errc::ConfigError, "unknown split '" + std::string(text) + "'");
}

SceneIndex::SceneIndex(std::span<const PortraitRecord> records) : records_(records.size()) {
  for (std::size_t i = 0; i < records.size(); ++i) scenes_[records[i].scene_id].push_back(i);
}

std::size_t SceneIndex::count(const std::string& scene_id) const {
  auto it = scenes_.find(scene_id);
  return it == scenes_.end() ? 0 : it->second.size();
}

namespace {

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

// Comma-separated fields with optional double-quoted values.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

double parse_real(const std::string& text, int line, const char* column) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(Errc::MalformedRow, std::string(column) + " is not a number: '" + text + "'", line);
  if (!std::isfinite(value)) throw Error(Errc::MalformedRow, std::string(column) + " is not finite", line);
  return value;
}

int parse_int(const std::string& text, int line, const char* column) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(Errc::MalformedRow, std::string(column) + " is not an integer: '" + text + "'", line);
  return value;
}

constexpr std::array<const char*, 5> kRequired{"image_path", "scene_id", "split", "attribute", "jod"};
constexpr std::array<const char*, 4> kFace{"face_x", "face_y", "face_w", "face_h"};

}  // namespace

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open manifest " + path.string());

  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw Error(Errc::MalformedRow, "manifest has no header", 1);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::unordered_map<std::string, std::size_t> column;
  const auto header = split_csv(line);
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* name : kRequired) {
    if (!column.contains(name)) throw Error(Errc::MalformedRow, std::string("header lacks column ") + name, 1);
  }
  std::array<std::optional<std::size_t>, 4> face_cols;
  for (std::size_t k = 0; k < kFace.size(); ++k) {
    if (auto it = column.find(kFace[k]); it != column.end()) face_cols[k] = it->second;
  }

  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size())
      throw Error(Errc::MalformedRow,
                  "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                  line_no);
    auto field = [&](const char* name) -> const std::string& { return fields[column.at(name)]; };

    ManifestRow row;
    row.line = line_no;
    row.image_path = field("image_path");
    row.scene_id = field("scene_id");
    if (row.image_path.empty()) throw Error(Errc::MalformedRow, "empty image_path", line_no);
    if (row.scene_id.empty()) throw Error(Errc::MalformedRow, "empty scene_id", line_no);
    try {
      row.split = parse_split(field("split"));
      row.attribute = parse_attribute(field("attribute"));
    } catch (const Error& e) {
      throw Error(Errc::MalformedRow, e.what(), line_no);
    }
    row.jod = parse_real(field("jod"), line_no, "jod");

    int present = 0;
    std::array<int, 4> face{};
    for (std::size_t k = 0; k < kFace.size(); ++k) {
      if (!face_cols[k] || fields[*face_cols[k]].empty()) continue;
      face[k] = parse_int(fields[*face_cols[k]], line_no, kFace[k]);
      ++present;
    }
    if (present != 0 && present != 4)
      throw Error(Errc::MalformedRow, "face box needs all of face_x, face_y, face_w, face_h", line_no);
    if (present == 4) {
      FaceBox box{face[0], face[1], face[2], face[3]};
      if (box.w <= 0 || box.h <= 0) throw Error(Errc::MalformedRow, "face box has non-positive size", line_no);
      if (box.x < 0 || box.y < 0) throw Error(Errc::MalformedRow, "face box has negative origin", line_no);
      row.face_box = box;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write manifest " + path.string());
  out << "image_path,scene_id,split,attribute,jod,face_x,face_y,face_w,face_h\n";
  for (const auto& row : rows) {
    std::ostringstream jod;
    jod.precision(17);
    jod << row.jod;
    out << quote_csv(row.image_path) << ',' << quote_csv(row.scene_id) << ',' << to_string(row.split) << ','
        << to_string(row.attribute) << ',' << jod.str();
    if (row.face_box) {
      out << ',' << row.face_box->x << ',' << row.face_box->y << ',' << row.face_box->w << ',' << row.face_box->h;
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "failed writing manifest " + path.string());
}

std::filesystem::path resolve_image_path(const std::filesystem::path& manifest, const std::string& image_path) {
  std::filesystem::path p(image_path);
  if (p.is_absolute()) return p;
  return manifest.parent_path() / p;
}

std::vector<PortraitRecord> load_manifest(const std::filesystem::path& path, Attribute attribute,
                                          const LoadOptions& options) {
  const auto rows = read_manifest(path);
  std::vector<PortraitRecord> records;
  std::set<std::string> seen;
  for (const auto& row : rows) {
    if (row.attribute != attribute) continue;
    if (!seen.insert(row.image_path).second)
      throw Error(Errc::DuplicateImageRef, "image listed twice: " + row.image_path, row.line);

    PortraitRecord rec;
    rec.image_ref = resolve_image_path(path, row.image_path);
    rec.scene_id = row.scene_id;
    rec.jod = row.jod;
    rec.attribute = row.attribute;
    rec.face_box = row.face_box;
    rec.split = row.split;
    rec.line = row.line;

    if (options.verify_images) {
      const auto size = probe_image_size(rec.image_ref);
      if (!size) throw Error(Errc::MissingFile, "cannot read image " + rec.image_ref.string(), row.line);
      if (rec.face_box) {
        const auto& b = *rec.face_box;
        if (b.x + b.w > size->width || b.y + b.h > size->height)
          throw Error(Errc::MalformedRow,
                      "face box exceeds image bounds " + std::to_string(size->width) + "x" +
                          std::to_string(size->height),
                      row.line);
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<PortraitRecord> filter_split(std::span<const PortraitRecord> records, Split split) {
  std::vector<PortraitRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

int binary_label(double q_x, double q_y) {
  if (!std::isfinite(q_x) || !std::isfinite(q_y)) throw Error(Errc::NonFiniteInput, "binary_label needs finite JODs");
  return q_x >= q_y ? 1 : 0;
}

std::uint64_t pair_count(std::size_t scene_size) noexcept {
  const auto n = static_cast<std::uint64_t>(scene_size);
  return n < 2 ? 0 : n * (n - 1) / 2;
}

std::vector<PairSample> sample_pairs(const SceneIndex& index, std::span<const PortraitRecord> records,
                                     std::size_t n_pairs, std::uint64_t seed) {
  std::vector<const std::vector<std::size_t>*> buckets;
  std::vector<double> weights;
  for (const auto& [scene, members] : index.scenes()) {
    const auto pairs = pair_count(members.size());
    if (pairs == 0) continue;
    buckets.push_back(&members);
    weights.push_back(static_cast<double>(pairs));
  }
  if (buckets.empty()) throw Error(Errc::NoValidScene, "every scene has fewer than 2 records");

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_scene(weights.begin(), weights.end());
  std::vector<PairSample> out;
  out.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const auto& members = *buckets[pick_scene(rng)];
    std::uniform_int_distribution<std::size_t> first(0, members.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, members.size() - 2);
    const std::size_t i = first(rng);
    std::size_t j = second(rng);
    if (j >= i) ++j;
    const auto& x = records[members[i]];
    const auto& y = records[members[j]];
    out.push_back(PairSample{x, y, binary_label(x.jod, y.jod)});
  }
  return out;
}

}  // namespace piqa::dataset
