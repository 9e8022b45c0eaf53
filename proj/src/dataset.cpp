#include "mmer/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

namespace mmer {

namespace fs = std::filesystem;

ModalitySet all_modalities(std::size_t count) {
  ModalitySet set(count);
  for (std::size_t i = 0; i < count; ++i) set[i] = i;
  return set;
}

ModalitySet without(const ModalitySet& set, std::size_t modality) {
  ModalitySet out;
  for (auto m : set) {
    if (m != modality) out.push_back(m);
  }
  return out;
}

ModalitySet intersect(const ModalitySet& a, const ModalitySet& b) {
  ModalitySet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

ModalitySet parse_modality_list(std::string_view names, const std::vector<ModalitySpec>& declared) {
  ModalitySet out;
  std::size_t pos = 0;
  while (pos <= names.size()) {
    const auto comma = std::min(names.find(',', pos), names.size());
    std::string_view token = names.substr(pos, comma - pos);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (!token.empty()) {
      auto it = std::find_if(declared.begin(), declared.end(), [&](const ModalitySpec& s) { return s.name == token; });
      if (it == declared.end()) throw ConfigError("unknown modality '" + std::string(token) + "'");
      out.push_back(static_cast<std::size_t>(it - declared.begin()));
    }
    pos = comma + 1;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string describe(const ModalitySet& set, const std::vector<ModalitySpec>& declared) {
  std::string out;
  for (auto m : set) {
    if (!out.empty()) out += ',';
    out += declared.at(m).name;
  }
  return out;
}

const MultimodalSample& Dataset::find(std::string_view id) const {
  for (const auto& s : samples) {
    if (s.id == id) return s;
  }
  throw std::out_of_range("no sample '" + std::string(id) + "'");
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw std::runtime_error("cannot format double");
  return std::string(buf, end);
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

std::string location(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

double parse_field(std::string_view text, const fs::path& file, std::size_t line) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw LoadError(location(file, line) + ": malformed number '" + std::string(text) + "'");
  }
  if (!std::isfinite(value)) throw LoadError(location(file, line) + ": non-finite value '" + std::string(text) + "'");
  return value;
}

/// Returns nullopt for a file with no content at all.
std::optional<CsvTable> read_csv(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError(file.string() + ": cannot open");
  CsvTable table;
  std::string line;
  std::size_t number = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (!have_header) {
      for (auto f : fields) table.header.emplace_back(f);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw LoadError(location(file, number) + ": expected " + std::to_string(table.header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_field(f, file, number));
    table.rows.push_back(std::move(row));
  }
  if (!have_header) return std::nullopt;
  return table;
}

void check_timestamps(const CsvTable& table, const fs::path& file) {
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const double t = table.rows[i][0];
    const double expected = kFrameSeconds * static_cast<double>(i);
    if (i == 0 && std::abs(t) > 1e-6) {
      throw LoadError(location(file, 2) + ": first timestamp must be 0, found " + format_double(t));
    }
    if (i > 0) {
      const double step = t - table.rows[i - 1][0];
      if (step <= 0.0) throw LoadError(location(file, i + 2) + ": timestamps must be strictly increasing");
      if (std::abs(step - kFrameSeconds) > 1e-6 || std::abs(t - expected) > 1e-6) {
        throw LoadError(location(file, i + 2) + ": timestamp " + format_double(t) + " breaks the 0.5 s grid");
      }
    }
  }
}

MultimodalSample load_sample(const fs::path& dir, const std::vector<ModalitySpec>& declared) {
  MultimodalSample sample;
  sample.id = dir.filename().string();
  const fs::path label_file = dir / "labels.csv";
  if (!fs::exists(label_file)) throw LoadError(label_file.string() + ": missing label file");
  auto labels = read_csv(label_file);
  if (!labels || labels->rows.empty()) throw LoadError(label_file.string() + ": no label rows");
  if (labels->header.size() != 2 || labels->header[0] != "timestamp" || labels->header[1] != "value") {
    throw LoadError(location(label_file, 1) + ": header must be 'timestamp,value'");
  }
  check_timestamps(*labels, label_file);
  const Index steps = static_cast<Index>(labels->rows.size());
  sample.labels.resize(steps);
  for (Index t = 0; t < steps; ++t) {
    const double v = labels->rows[static_cast<std::size_t>(t)][1];
    if (v < -1.0 || v > 1.0) {
      throw LoadError(location(label_file, static_cast<std::size_t>(t) + 2) + ": label " + format_double(v) +
                      " outside [-1, 1]");
    }
    sample.labels(t) = v;
  }

  for (std::size_t m = 0; m < declared.size(); ++m) {
    const auto& spec = declared[m];
    const fs::path file = dir / (spec.name + ".csv");
    std::optional<CsvTable> table;
    if (fs::exists(file)) table = read_csv(file);
    if (!table || table->rows.empty()) {
      sample.features.emplace_back(0, spec.width);
      continue;
    }
    if (table->header.empty() || table->header[0] != "timestamp") {
      throw LoadError(location(file, 1) + ": first column must be 'timestamp'");
    }
    const Index width = static_cast<Index>(table->header.size()) - 1;
    if (width != spec.width) {
      throw LoadError(location(file, 1) + ": expected " + std::to_string(spec.width) + " features, found " +
                      std::to_string(width));
    }
    for (Index j = 0; j < width; ++j) {
      if (table->header[static_cast<std::size_t>(j) + 1] != "f" + std::to_string(j)) {
        throw LoadError(location(file, 1) + ": feature column " + std::to_string(j) + " must be named f" + std::to_string(j));
      }
    }
    if (static_cast<Index>(table->rows.size()) != steps) {
      throw LoadError(file.string() + ": " + std::to_string(table->rows.size()) + " rows but labels have " +
                      std::to_string(steps));
    }
    RowMatrix x(steps, width);
    for (Index t = 0; t < steps; ++t) {
      const auto& row = table->rows[static_cast<std::size_t>(t)];
      const double expected = labels->rows[static_cast<std::size_t>(t)][0];
      if (std::abs(row[0] - expected) > 1e-6) {
        throw LoadError(location(file, static_cast<std::size_t>(t) + 2) + ": timestamp " + format_double(row[0]) +
                        " does not match label timestamp " + format_double(expected));
      }
      for (Index j = 0; j < width; ++j) x(t, j) = row[static_cast<std::size_t>(j) + 1];
    }
    sample.features.push_back(std::move(x));
    sample.available.push_back(m);
  }
  if (sample.available.empty()) throw LoadError(dir.string() + ": no modality files present");
  return sample;
}

void write_csv(const fs::path& file, const std::string& header, const Vector& timestamps, const RowMatrix& values) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(file.string() + ": cannot write");
  out << header << '\n';
  for (Index t = 0; t < values.rows(); ++t) {
    out << format_double(timestamps(t));
    for (Index j = 0; j < values.cols(); ++j) out << ',' << format_double(values(t, j));
    out << '\n';
  }
  if (!out) throw std::runtime_error(file.string() + ": write failed");
}

}  // namespace

Dataset load_dataset(const fs::path& root, std::string_view split, const std::vector<ModalitySpec>& declared) {
  if (declared.empty()) throw ConfigError("no modalities declared");
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) throw LoadError(dir.string() + ": split directory not found");
  Dataset ds;
  ds.modalities = declared;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) ds.samples.push_back(load_sample(d, declared));
  if (ds.samples.empty()) throw LoadError(dir.string() + ": no samples");
  return ds;
}

DatasetSplits load_splits(const fs::path& root, const std::vector<ModalitySpec>& declared) {
  return {load_dataset(root, "train", declared), load_dataset(root, "val", declared), load_dataset(root, "test", declared)};
}

void write_dataset(const fs::path& root, std::string_view split, const Dataset& dataset) {
  const fs::path dir = root / split;
  fs::create_directories(dir);
  for (const auto& sample : dataset.samples) {
    const fs::path sdir = dir / sample.id;
    fs::create_directories(sdir);
    const Index steps = sample.steps();
    Vector timestamps(steps);
    for (Index t = 0; t < steps; ++t) timestamps(t) = kFrameSeconds * static_cast<double>(t);
    write_csv(sdir / "labels.csv", "timestamp,value", timestamps, RowMatrix(sample.labels));
    for (auto m : sample.available) {
      const auto& spec = dataset.modalities[m];
      std::string header = "timestamp";
      for (Index j = 0; j < spec.width; ++j) header += ",f" + std::to_string(j);
      write_csv(sdir / (spec.name + ".csv"), header, timestamps, sample.features[m]);
    }
  }
}

void write_splits(const fs::path& root, const DatasetSplits& splits) {
  write_dataset(root, "train", splits.train);
  write_dataset(root, "val", splits.val);
  write_dataset(root, "test", splits.test);
}

NormalizationStats compute_normalization(const Dataset& train) {
  if (train.normalized) throw ContractError("normalisation statistics must come from untransformed data");
  NormalizationStats stats;
  for (std::size_t m = 0; m < train.modalities.size(); ++m) {
    const Index width = train.modalities[m].width;
    Vector sum = Vector::Zero(width);
    Vector sq = Vector::Zero(width);
    double count = 0.0;
    for (const auto& s : train.samples) {
      const auto& x = s.features[m];
      if (x.rows() == 0) continue;
      sum += x.colwise().sum().transpose();
      count += static_cast<double>(x.rows());
    }
    Vector mu = count > 0 ? Vector(sum / count) : Vector::Zero(width);
    for (const auto& s : train.samples) {
      const auto& x = s.features[m];
      if (x.rows() == 0) continue;
      sq += (x.rowwise() - mu.transpose()).array().square().colwise().sum().matrix().transpose();
    }
    Vector sd = count > 0 ? Vector((sq / count).array().sqrt()) : Vector::Ones(width);
    sd = sd.cwiseMax(kStdFloor);
    stats.mean.push_back(std::move(mu));
    stats.stddev.push_back(std::move(sd));
  }
  return stats;
}

void apply_normalization(Dataset& dataset, const NormalizationStats& stats) {
  if (dataset.normalized) throw ContractError("dataset is already normalised");
  if (stats.mean.size() != dataset.modalities.size()) throw ShapeError("normalisation statistics do not match modalities");
  for (auto& s : dataset.samples) {
    for (std::size_t m = 0; m < s.features.size(); ++m) {
      auto& x = s.features[m];
      if (x.rows() == 0) continue;
      if (x.cols() != stats.mean[m].size()) throw ShapeError("normalisation width mismatch for " + dataset.modalities[m].name);
      x = ((x.rowwise() - stats.mean[m].transpose()).array().rowwise() / stats.stddev[m].transpose().array()).matrix();
    }
  }
  dataset.normalized = true;
}

std::vector<Segment> segment(const MultimodalSample& sample, std::size_t sample_index, Index length, Index hop) {
  if (length < 1 || hop < 1) throw ConfigError("segment length and hop must be positive");
  if (length > sample.steps()) {
    throw ConfigError("segment length " + std::to_string(length) + " exceeds sample '" + sample.id + "' of " +
                      std::to_string(sample.steps()) + " steps");
  }
  std::vector<Segment> out;
  for (Index start = 0; start + length <= sample.steps(); start += hop) out.push_back({sample_index, start, length});
  return out;
}

Batch make_batch(const Dataset& dataset, std::span<const Segment> segments) {
  if (segments.empty()) throw ContractError("empty batch");
  const Index steps = segments.front().length;
  const Index b = static_cast<Index>(segments.size());
  Batch batch;
  batch.labels.resize(b, steps);
  batch.available = all_modalities(dataset.modalities.size());
  for (Index i = 0; i < b; ++i) {
    const auto& seg = segments[static_cast<std::size_t>(i)];
    if (seg.length != steps) throw ShapeError("batch segments differ in length");
    const auto& s = dataset.samples.at(seg.sample);
    batch.labels.row(i) = s.labels.segment(seg.start, steps).transpose();
    batch.available = intersect(batch.available, s.available);
  }
  for (std::size_t m = 0; m < dataset.modalities.size(); ++m) {
    if (!std::binary_search(batch.available.begin(), batch.available.end(), m)) {
      batch.features.emplace_back();
      continue;
    }
    const Index width = dataset.modalities[m].width;
    RowMatrix x(b * steps, width);
    for (Index i = 0; i < b; ++i) {
      const auto& seg = segments[static_cast<std::size_t>(i)];
      x.middleRows(i * steps, steps) = dataset.samples[seg.sample].features[m].middleRows(seg.start, steps);
    }
    batch.features.emplace_back(Shape{b, steps, width}, std::move(x));
  }
  return batch;
}

Batch make_batch(const MultimodalSample& sample, const std::vector<ModalitySpec>& declared) {
  Batch batch;
  const Index steps = sample.steps();
  batch.labels = sample.labels.transpose();
  batch.available = sample.available;
  for (std::size_t m = 0; m < declared.size(); ++m) {
    if (std::binary_search(sample.available.begin(), sample.available.end(), m)) {
      batch.features.emplace_back(Shape{1, steps, declared[m].width}, sample.features[m]);
    } else {
      batch.features.emplace_back();
    }
  }
  return batch;
}

}  // namespace mmer
