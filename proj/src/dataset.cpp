#include "mmta/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmta/binary_io.hpp"
#include "mmta/error.hpp"

namespace mmta {

namespace {

constexpr std::string_view kMagic = "MMTADSET";

}  // namespace

std::string sequence_name(std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "seq%05zu", index);
  return name;
}

std::size_t Dataset::frame_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.length();
  return n;
}

void Dataset::validate() const {
  for (const auto& s : sequences) {
    if (s.features.rows() != s.labels.size()) {
      throw ShapeError("sequence '" + s.name + "' has " + std::to_string(s.features.rows()) + " feature rows and " +
                       std::to_string(s.labels.size()) + " labels");
    }
    if (s.features.cols() != feature_dim) {
      throw ShapeError("sequence '" + s.name + "' has feature width " + std::to_string(s.features.cols()) +
                       ", dataset declares " + std::to_string(feature_dim));
    }
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
      if (s.labels[t] >= classes) {
        throw LabelError("sequence '" + s.name + "' frame " + std::to_string(t) + ": label " +
                         std::to_string(s.labels[t]) + " is outside [0, " + std::to_string(classes) + ")");
      }
    }
  }
}

std::string encode_dataset(const Dataset& ds) {
  ds.validate();
  std::string out(kMagic);
  binio::put<std::uint32_t>(out, kDatasetVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.classes));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.feature_dim));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.sequences.size()));
  for (const auto& s : ds.sequences) {
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.length()));
    for (double v : s.features.values()) binio::put<double>(out, v);
    for (std::uint16_t l : s.labels) binio::put<std::uint16_t>(out, l);
  }
  return out;
}

Dataset decode_dataset(std::string_view bytes, std::string_view source) {
  binio::Reader in(bytes, source);
  if (bytes.size() < kMagic.size() || in.take(kMagic.size(), "magic") != kMagic) {
    throw IoError(std::string(source) + ": not a dataset file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kDatasetVersion) {
    throw IoError(std::string(source) + ": dataset version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kDatasetVersion) + ")");
  }
  Dataset ds;
  ds.classes = in.get<std::uint32_t>("class count");
  ds.feature_dim = in.get<std::uint32_t>("feature width");
  const auto count = in.get<std::uint32_t>("sequence count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto length = in.get<std::uint32_t>("sequence length");
    const std::string what = "sequence " + std::to_string(i);
    in.need(static_cast<std::size_t>(length) * (ds.feature_dim * 8 + 2), what);
    Sequence s;
    s.name = sequence_name(i);
    s.features = Matrix(length, ds.feature_dim);
    for (double& v : s.features.values()) v = in.get<double>(what);
    s.labels.resize(length);
    for (auto& l : s.labels) l = in.get<std::uint16_t>(what);
    ds.sequences.push_back(std::move(s));
  }
  if (in.remaining() != 0) {
    throw IoError(std::string(source) + ": expected " + std::to_string(in.position()) + " bytes, file has " +
                  std::to_string(bytes.size()));
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  binio::write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(binio::read_file(path), path.string());
}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  char buf[32];
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto& s = ds.sequences[i];
    std::string text = "frame,label";
    for (std::size_t c = 0; c < ds.feature_dim; ++c) text += ",f" + std::to_string(c);
    text += '\n';
    for (std::size_t t = 0; t < s.length(); ++t) {
      text += std::to_string(t) + "," + std::to_string(s.labels[t]);
      for (double v : s.features.row(t)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        text += ',';
        text += buf;
      }
      text += '\n';
    }
    binio::write_file(dir / (sequence_name(i) + ".csv"), text);
  }
}

namespace {

Sequence parse_csv(const std::filesystem::path& path, std::size_t& width) {
  const std::string text = binio::read_file(path);
  Sequence s;
  s.name = path.stem().string();
  std::vector<double> values;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  const std::string where = path.string();
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("frame", 0) == 0) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (fields.size() < 3) throw IoError(where + ":" + std::to_string(line_no) + ": expected frame,label,features...");
    const std::size_t row_width = fields.size() - 2;
    if (width == 0) width = row_width;
    if (row_width != width) {
      throw IoError(where + ":" + std::to_string(line_no) + ": " + std::to_string(row_width) +
                    " feature columns, expected " + std::to_string(width));
    }
    std::size_t frame = 0;
    unsigned label = 0;
    auto bad = [&](std::string_view field) {
      return IoError(where + ":" + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "'");
    };
    if (std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), frame).ec != std::errc{}) throw bad(fields[0]);
    if (frame != s.labels.size()) {
      throw IoError(where + ":" + std::to_string(line_no) + ": frame index " + std::to_string(frame) + ", expected " +
                    std::to_string(s.labels.size()));
    }
    if (std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label).ec != std::errc{} || label > 65535) {
      throw bad(fields[1]);
    }
    s.labels.push_back(static_cast<std::uint16_t>(label));
    for (std::size_t c = 2; c < fields.size(); ++c) {
      double v = 0.0;
      const auto r = std::from_chars(fields[c].data(), fields[c].data() + fields[c].size(), v);
      if (r.ec != std::errc{} || r.ptr != fields[c].data() + fields[c].size()) throw bad(fields[c]);
      values.push_back(v);
    }
  }
  s.features = Matrix(s.labels.size(), width);
  std::copy(values.begin(), values.end(), s.features.data());
  return s;
}

}  // namespace

Dataset load_dataset_csv(const std::filesystem::path& dir, std::size_t classes) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no .csv files");
  Dataset ds;
  for (const auto& f : files) ds.sequences.push_back(parse_csv(f, ds.feature_dim));
  std::size_t max_label = 0;
  for (const auto& s : ds.sequences)
    for (auto l : s.labels) max_label = std::max<std::size_t>(max_label, l);
  ds.classes = classes != 0 ? classes : max_label + 1;
  ds.validate();
  return ds;
}

Dataset load_dataset_any(const std::filesystem::path& path, std::size_t classes_hint) {
  if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path.string());
  return std::filesystem::is_directory(path) ? load_dataset_csv(path, classes_hint) : load_dataset(path);
}

}  // namespace mmta
