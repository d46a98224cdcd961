#include "volformer/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>

#include "volformer/core/error.hpp"
#include "volformer/data/preprocess.hpp"
#include "volformer/data/volume_io.hpp"
#include "volformer/layers/data_norm.hpp"

namespace volformer {

namespace {
const std::vector<std::string> kManifestColumns = {"subject_id", "site_id", "label", "modality", "path"};

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (quoted) throw DataError(where + ": unterminated quoted field");
  cells.push_back(std::move(cell));
  return cells;
}

std::string csv_cell(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename N>
N parse_number(const std::string& text, const std::string& where, const char* field) {
  N value{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw DataError(where + ": " + field + " '" + text + "' is not a valid number");
  }
  return value;
}
}  // namespace

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::fmri: return "fmri";
    case Modality::smri: return "smri";
    case Modality::fc: return "fc";
  }
  return "fmri";
}

Modality parse_modality(const std::string& text) {
  if (text == "fmri") return Modality::fmri;
  if (text == "smri") return Modality::smri;
  if (text == "fc") return Modality::fc;
  throw DataError("unknown modality '" + text + "' (expected fmri, smri or fc)");
}

std::size_t Dataset::volume_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.fmri_volumes.size();
  return n;
}

std::vector<std::string> Dataset::drop_empty_subjects() {
  std::vector<std::string> dropped;
  std::erase_if(subjects, [&](const SubjectRecord& s) {
    if (!s.fmri_volumes.empty()) return false;
    dropped.push_back(s.subject_id);
    return true;
  });
  return dropped;
}

void Dataset::validate() const {
  std::set<std::string> seen;
  for (const auto& s : subjects) {
    if (!seen.insert(s.subject_id).second) throw DataError("duplicate subject " + s.subject_id);
    if (s.label >= class_count) {
      throw DataError("subject " + s.subject_id + " has label " + std::to_string(s.label) + " but only " +
                      std::to_string(class_count) + " classes exist");
    }
    for (const auto& v : s.fmri_volumes) {
      if (v.subject_id != s.subject_id || v.label != s.label) {
        throw DataError("volume " + v.source + " disagrees with subject " + s.subject_id + " on id or label");
      }
    }
    for (float r : s.fc) {
      if (!(r >= -1.0f - 1e-6f && r <= 1.0f + 1e-6f)) {
        throw DataError("subject " + s.subject_id + " has a connectivity entry outside [-1, 1]");
      }
    }
    if (s.phenotype.size() != s.phenotype_present.size()) {
      throw DataError("subject " + s.subject_id + " phenotype mask length differs from its values");
    }
  }
}

std::size_t fc_feature_dim(std::size_t p, bool upper_triangle) {
  return upper_triangle ? p * (p - 1) / 2 : p * p;
}

std::vector<float> flatten_fc(const std::vector<float>& matrix, std::size_t p, bool upper_triangle) {
  if (matrix.size() != p * p) {
    throw DimensionError("connectivity matrix holds " + std::to_string(matrix.size()) + " entries, expected " +
                         std::to_string(p) + "x" + std::to_string(p));
  }
  if (!upper_triangle) return matrix;
  std::vector<float> out;
  out.reserve(fc_feature_dim(p, true));
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) out.push_back(matrix[i * p + j]);
  return out;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty manifest");
  const auto header = split_csv_line(line, path.string() + ":1");
  if (header.size() < kManifestColumns.size() ||
      !std::equal(kManifestColumns.begin(), kManifestColumns.end(), header.begin())) {
    throw DataError(path.string() + ":1: header must start with subject_id,site_id,label,modality,path");
  }
  const std::size_t pheno_count = header.size() - kManifestColumns.size();
  for (std::size_t i = 0; i < pheno_count; ++i) {
    if (header[kManifestColumns.size() + i] != "pheno_" + std::to_string(i)) {
      throw DataError(path.string() + ":1: expected column pheno_" + std::to_string(i) + ", found '" +
                      header[kManifestColumns.size() + i] + "'");
    }
  }
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto cells = split_csv_line(line, where);
    if (cells.size() != header.size()) {
      throw DataError(where + ": " + std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    ManifestRow row;
    row.line = line_no;
    row.subject_id = cells[0];
    row.site_id = cells[1];
    if (row.subject_id.empty()) throw DataError(where + ": empty subject_id");
    row.label = parse_number<std::size_t>(cells[2], where, "label");
    try {
      row.modality = parse_modality(cells[3]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    row.path = cells[4];
    if (row.path.empty()) throw DataError(where + ": empty path");
    for (std::size_t i = 0; i < pheno_count; ++i) {
      const std::string& cell = cells[kManifestColumns.size() + i];
      if (cell.empty()) {
        row.pheno.push_back(std::nullopt);
      } else {
        row.pheno.push_back(parse_number<float>(cell, where, "phenotype value"));
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::size_t pheno_count = 0;
  for (const auto& r : rows) pheno_count = std::max(pheno_count, r.pheno.size());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) out << (i ? "," : "") << kManifestColumns[i];
  for (std::size_t i = 0; i < pheno_count; ++i) out << ",pheno_" << i;
  out << "\n";
  for (const auto& r : rows) {
    out << csv_cell(r.subject_id) << "," << csv_cell(r.site_id) << "," << r.label << "," << modality_name(r.modality)
        << "," << csv_cell(r.path);
    for (std::size_t i = 0; i < pheno_count; ++i) {
      out << ",";
      if (i < r.pheno.size() && r.pheno[i]) out << format_float(*r.pheno[i]);
    }
    out << "\n";
  }
  if (!out) throw DataError("write failed for manifest " + path.string());
}

Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options) {
  const auto rows = read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::map<std::string, SubjectRecord> by_id;
  std::size_t max_label = 0;
  for (const auto& row : rows) {
    const std::string where = manifest.string() + ":" + std::to_string(row.line);
    auto [it, fresh] = by_id.try_emplace(row.subject_id);
    SubjectRecord& rec = it->second;
    if (fresh) {
      rec.subject_id = row.subject_id;
      rec.site_id = row.site_id;
      rec.label = row.label;
      rec.phenotype.assign(row.pheno.size(), 0.0f);
      rec.phenotype_present.assign(row.pheno.size(), false);
    } else if (rec.site_id != row.site_id || rec.label != row.label) {
      throw DataError(where + ": subject " + row.subject_id + " appears with a different site or label");
    }
    for (std::size_t i = 0; i < row.pheno.size(); ++i) {
      if (!row.pheno[i]) continue;
      if (rec.phenotype_present[i] && rec.phenotype[i] != *row.pheno[i]) {
        throw DataError(where + ": subject " + row.subject_id + " has conflicting pheno_" + std::to_string(i));
      }
      rec.phenotype[i] = *row.pheno[i];
      rec.phenotype_present[i] = true;
    }
    max_label = std::max(max_label, row.label);

    const std::filesystem::path file = std::filesystem::path(row.path).is_absolute() ? std::filesystem::path(row.path) : base / row.path;
    Tensor<float> data = load_volume(file);
    if (row.modality == Modality::fc) {
      if (data.dim() != 2 || data.size(0) != data.size(1)) {
        throw DataError(where + ": connectivity file " + file.string() + " is " + shape_str(data.shape()) +
                        ", expected a square matrix");
      }
      if (!rec.fc.empty()) throw DataError(where + ": subject " + row.subject_id + " has two connectivity files");
      rec.fc = data.to_vector();
      rec.fc_rois = data.size(0);
      continue;
    }
    if (data.dim() != 3) {
      throw DataError(where + ": " + file.string() + " is " + shape_str(data.shape()) + ", expected a 3D volume");
    }
    const bool degenerate = is_degenerate_volume(data);
    if (options.pad_to) {
      try {
        data = pad_volume(data, *options.pad_to, options.allow_crop);
      } catch (const ContractError& e) {
        throw DataError(where + ": " + e.what());
      }
    }
    VolumeSample sample{row.subject_id, row.site_id, row.label, row.modality, data, degenerate,
                        file.string()};
    if (row.modality == Modality::smri) {
      if (rec.smri) throw DataError(where + ": subject " + row.subject_id + " has two structural volumes");
      rec.smri = std::move(sample);
    } else {
      rec.fmri_volumes.push_back(std::move(sample));
    }
  }
  Dataset data;
  data.class_count = std::max<std::size_t>(2, max_label + 1);
  for (auto& [id, rec] : by_id) {
    std::sort(rec.fmri_volumes.begin(), rec.fmri_volumes.end(),
              [](const VolumeSample& a, const VolumeSample& b) { return a.source < b.source; });
    data.subjects.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  const auto volumes = dir / "volumes";
  std::filesystem::create_directories(volumes);
  std::vector<ManifestRow> rows;
  auto add_row = [&](const SubjectRecord& s, Modality m, const std::string& name) {
    ManifestRow row;
    row.subject_id = s.subject_id;
    row.site_id = s.site_id;
    row.label = s.label;
    row.modality = m;
    row.path = "volumes/" + name;
    for (std::size_t i = 0; i < s.phenotype.size(); ++i) {
      row.pheno.push_back(s.phenotype_present[i] ? std::optional<float>(s.phenotype[i]) : std::nullopt);
    }
    rows.push_back(std::move(row));
  };
  for (const auto& s : data.subjects) {
    for (std::size_t k = 0; k < s.fmri_volumes.size(); ++k) {
      char idx[16];
      std::snprintf(idx, sizeof idx, "%03zu", k);
      const std::string name = s.subject_id + "_fmri_" + idx + ".vfv";
      save_volume(volumes / name, s.fmri_volumes[k].volume);
      add_row(s, Modality::fmri, name);
    }
    if (s.smri) {
      const std::string name = s.subject_id + "_smri.vfv";
      save_volume(volumes / name, s.smri->volume);
      add_row(s, Modality::smri, name);
    }
    if (!s.fc.empty()) {
      const std::string name = s.subject_id + "_fc.vfv";
      save_volume(volumes / name, Tensor<float>(Shape{s.fc_rois, s.fc_rois}, s.fc));
      add_row(s, Modality::fc, name);
    }
  }
  const auto manifest = dir / "manifest.csv";
  write_manifest(manifest, rows);
  return manifest;
}

}  // namespace volformer
