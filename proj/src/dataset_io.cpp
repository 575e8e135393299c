#include "relinf/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

namespace relinf {

void validate(const Dataset& data) {
  if (data.n() < 1) throw DataError("dataset is empty");
  if (data.labels.size() != data.n())
    throw DataError("label count does not match feature rows");
  if (data.c < 1) throw DataError("class count must be >= 1");
  if (!data.features.allFinite())
    throw DataError("feature matrix contains non-finite values");
  for (Index i = 0; i < data.n(); ++i) {
    if (data.labels[i] < 0 || data.labels[i] >= data.c)
      throw DataError("label out of range at row " + std::to_string(i + 1));
  }
}

namespace {

double parse_double(std::string_view tok, Index row, Index col) {
  double value = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw DataError("non-numeric feature at row " + std::to_string(row) +
                    ", column f" + std::to_string(col));
  if (!std::isfinite(value))
    throw DataError("non-finite feature at row " + std::to_string(row));
  return value;
}

std::vector<std::string_view> split_commas(const std::string& line,
                                           std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.emplace_back(line.data() + start, line.size() - start);
      break;
    }
    out.emplace_back(line.data() + start, comma - start);
    start = comma + 1;
  }
  return out;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
  std::uint8_t raw[4];
  if (!in.read(reinterpret_cast<char*>(raw), 4))
    throw DataError("truncated IDX file while reading " + what);
  return (std::uint32_t(raw[0]) << 24) | (std::uint32_t(raw[1]) << 16) |
         (std::uint32_t(raw[2]) << 8) | std::uint32_t(raw[3]);
}

}  // namespace

Dataset load_csv(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("malformed header: empty file " + path);
  line = strip_cr(line);
  std::vector<std::string_view> tokens;
  split_commas(line, tokens);
  if (tokens.empty() || tokens[0] != "label")
    throw DataError("malformed header: expected first column `label` in " + path);
  const Index d = static_cast<Index>(tokens.size()) - 1;
  if (d < 1) throw DataError("malformed header: no feature columns in " + path);

  std::vector<double> features;
  std::vector<int> labels;
  Index row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    split_commas(line, tokens);
    if (static_cast<Index>(tokens.size()) != d + 1)
      throw DataError("wrong column count at row " + std::to_string(row));
    int label = 0;
    {
      const auto tok = tokens[0];
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), label);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw DataError("non-integer label at row " + std::to_string(row));
    }
    if (label < 0) throw DataError("negative label at row " + std::to_string(row));
    labels.push_back(label);
    for (Index j = 0; j < d; ++j)
      features.push_back(parse_double(tokens[static_cast<std::size_t>(j) + 1], row, j));
  }
  if (row == 0) throw DataError("dataset has no data rows: " + path);

  Dataset data;
  data.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>(
      features.data(), row, d);
  data.labels = Eigen::Map<const IntVector>(labels.data(), row);
  if (num_classes > 0) {
    data.c = num_classes;
    for (Index i = 0; i < row; ++i) {
      if (labels[static_cast<std::size_t>(i)] >= num_classes)
        throw DataError("label out of range at row " + std::to_string(i + 1) +
                        " (label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                        " with c=" + std::to_string(num_classes) + ")");
    }
  } else {
    data.c = data.labels.maxCoeff() + 1;
  }
  validate(data);
  return data;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open IDX image file: " + images_path);
  const std::uint32_t img_magic = read_be_u32(img, "image magic");
  if (img_magic != 0x00000803u)
    throw DataError("bad magic in IDX image file " + images_path);
  const std::uint32_t n = read_be_u32(img, "image count");
  const std::uint32_t rows = read_be_u32(img, "image rows");
  const std::uint32_t cols = read_be_u32(img, "image cols");
  const std::size_t pixels = std::size_t(n) * rows * cols;
  std::vector<std::uint8_t> raw(pixels);
  if (!img.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(pixels)))
    throw DataError("truncated IDX image file " + images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open IDX label file: " + labels_path);
  const std::uint32_t lab_magic = read_be_u32(lab, "label magic");
  if (lab_magic != 0x00000801u)
    throw DataError("bad magic in IDX label file " + labels_path);
  const std::uint32_t n_lab = read_be_u32(lab, "label count");
  if (n_lab != n)
    throw DataError("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                    std::to_string(n_lab));
  std::vector<std::uint8_t> lab_raw(n);
  if (!lab.read(reinterpret_cast<char*>(lab_raw.data()), n))
    throw DataError("truncated IDX label file " + labels_path);

  Dataset data;
  const Index d = static_cast<Index>(rows) * static_cast<Index>(cols);
  data.features.resize(static_cast<Index>(n), d);
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index j = 0; j < d; ++j)
      data.features(i, j) = raw[static_cast<std::size_t>(i) * d + j] / 255.0;
  data.labels.resize(static_cast<Index>(n));
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    data.labels[i] = lab_raw[static_cast<std::size_t>(i)];
  data.c = num_classes > 0 ? num_classes : data.labels.maxCoeff() + 1;
  validate(data);
  return data;
}

void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  out << "label";
  for (Index j = 0; j < data.d(); ++j) out << ",f" << j;
  out << "\n";
  out.precision(17);
  for (Index i = 0; i < data.n(); ++i) {
    out << data.labels[i];
    for (Index j = 0; j < data.d(); ++j) out << "," << data.features(i, j);
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace relinf
