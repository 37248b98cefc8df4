#pragma once

// Named-column feature table with per-row provenance, labels and an explicit
// missing-value mask.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecg/common.hpp"

namespace ecg {

struct BeatRef {
  std::string record_id;
  std::size_t r_peak = 0;
};

struct FeatureMatrix {
  std::vector<std::string> columns;
  Matrix values;                      // n_rows x n_cols
  std::vector<std::uint8_t> missing;  // row-major mask, 1 = value unavailable
  std::vector<BeatRef> rows;
  std::vector<int> labels;            // AAMI class index, -1 when unlabeled

  std::size_t n_rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_cols() const { return static_cast<std::size_t>(values.cols()); }

  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * n_cols() + c] != 0; }

  void set(std::size_t r, std::size_t c, double v) {
    values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    missing[r * n_cols() + c] = 0;
  }

  void set_missing(std::size_t r, std::size_t c) {
    values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::numeric_limits<double>::quiet_NaN();
    missing[r * n_cols() + c] = 1;
  }

  double at(std::size_t r, std::size_t c) const {
    return values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  std::size_t column_index(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ParameterError("no feature column named '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  std::size_t missing_count() const {
    return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
  }

  static FeatureMatrix with_columns(std::vector<std::string> names, std::size_t n_rows) {
    FeatureMatrix m;
    m.columns = std::move(names);
    m.values = Matrix::Zero(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(m.columns.size()));
    m.missing.assign(n_rows * m.columns.size(), 0);
    m.rows.resize(n_rows);
    m.labels.assign(n_rows, -1);
    return m;
  }
};

/// Stacks matrices with identical columns row-wise.
inline FeatureMatrix vstack(const std::vector<FeatureMatrix>& parts) {
  if (parts.empty()) return {};
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.columns != parts.front().columns) throw ParameterError("vstack: column layouts differ");
    n += p.n_rows();
  }
  auto out = FeatureMatrix::with_columns(parts.front().columns, n);
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.n_rows() == 0) continue;
    out.values.middleRows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p.n_rows())) = p.values;
    std::copy(p.missing.begin(), p.missing.end(), out.missing.begin() + static_cast<long>(r * out.n_cols()));
    std::copy(p.rows.begin(), p.rows.end(), out.rows.begin() + static_cast<long>(r));
    std::copy(p.labels.begin(), p.labels.end(), out.labels.begin() + static_cast<long>(r));
    r += p.n_rows();
  }
  return out;
}

/// Appends the columns of `extra` (same row count) to `base`.
inline FeatureMatrix hstack(const FeatureMatrix& base, const FeatureMatrix& extra) {
  if (base.n_rows() != extra.n_rows()) throw ParameterError("hstack: row counts differ");
  auto names = base.columns;
  names.insert(names.end(), extra.columns.begin(), extra.columns.end());
  auto out = FeatureMatrix::with_columns(names, base.n_rows());
  out.rows = base.rows;
  out.labels = base.labels;
  if (base.n_cols()) out.values.leftCols(static_cast<Eigen::Index>(base.n_cols())) = base.values;
  if (extra.n_cols()) out.values.rightCols(static_cast<Eigen::Index>(extra.n_cols())) = extra.values;
  for (std::size_t r = 0; r < base.n_rows(); ++r) {
    for (std::size_t c = 0; c < base.n_cols(); ++c) out.missing[r * out.n_cols() + c] = base.missing[r * base.n_cols() + c];
    for (std::size_t c = 0; c < extra.n_cols(); ++c)
      out.missing[r * out.n_cols() + base.n_cols() + c] = extra.missing[r * extra.n_cols() + c];
  }
  return out;
}

inline FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::size_t>& idx) {
  auto out = FeatureMatrix::with_columns(m.columns, idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = m.values.row(static_cast<Eigen::Index>(idx[i]));
    std::copy_n(m.missing.begin() + static_cast<long>(idx[i] * m.n_cols()), m.n_cols(),
                out.missing.begin() + static_cast<long>(i * m.n_cols()));
    out.rows[i] = m.rows[idx[i]];
    out.labels[i] = m.labels[idx[i]];
  }
  return out;
}

/// Stable fingerprint of a column layout plus a version tag.
inline std::string layout_hash(const std::vector<std::string>& columns, const std::string& version) {
  std::string joined = version;
  for (const auto& c : columns) joined += '\x1f' + c;
  return hex64(fnv1a64(joined));
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

/// CSV with header `record,r_peak,<columns...>,label`; missing cells are empty.
/// `comment`, when given, is written first as a "# ..." line.
inline void write_csv(const FeatureMatrix& m, const std::filesystem::path& path, const std::string& comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (!comment.empty()) out << (comment.rfind("#", 0) == 0 ? "" : "# ") << comment << '\n';
  out << "record,r_peak";
  for (const auto& c : m.columns) out << ',' << c;
  out << ",label\n";
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    out << m.rows[r].record_id << ',' << m.rows[r].r_peak;
    for (std::size_t c = 0; c < m.n_cols(); ++c) out << ',' << (m.is_missing(r, c) ? "" : format_double(m.at(r, c)));
    out << ',' << (m.labels[r] >= 0 ? std::string(1, label_char(static_cast<AamiLabel>(m.labels[r]))) : "");
    out << '\n';
  }
}

inline FeatureMatrix read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') f.push_back(cur), cur.clear();
      else if (ch != '\r') cur += ch;
    }
    f.push_back(cur);
    return f;
  };
  std::string line;
  do {
    if (!std::getline(in, line)) throw std::runtime_error("empty feature CSV " + path.string());
  } while (line.rfind("#", 0) == 0);
  auto header = split(line);
  if (header.size() < 3 || header[0] != "record" || header[1] != "r_peak" || header.back() != "label")
    throw std::runtime_error("unexpected feature CSV header in " + path.string());
  std::vector<std::string> cols(header.begin() + 2, header.end() - 1);
  std::vector<std::vector<std::string>> body;
  while (std::getline(in, line))
    if (!line.empty()) body.push_back(split(line));
  auto m = FeatureMatrix::with_columns(cols, body.size());
  for (std::size_t r = 0; r < body.size(); ++r) {
    const auto& f = body[r];
    if (f.size() != header.size()) throw std::runtime_error("ragged feature CSV row " + std::to_string(r + 2));
    m.rows[r] = {f[0], static_cast<std::size_t>(std::stoull(f[1]))};
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (f[c + 2].empty()) m.set_missing(r, c);
      else m.set(r, c, std::stod(f[c + 2]));
    }
    const auto lab = f.back();
    m.labels[r] = lab.empty() ? -1 : class_index(label_from_char(lab[0]).value());
  }
  return m;
}

/// Compact dump: `<stem>.bin` holds column-major float64 values, `<stem>.json`
/// the schema, provenance, labels and missing mask.
inline void write_binary(const FeatureMatrix& m, const std::filesystem::path& stem, const nlohmann::json& extra = {}) {
  {
    std::ofstream out(stem.string() + ".bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + stem.string() + ".bin");
    for (std::size_t c = 0; c < m.n_cols(); ++c)
      for (std::size_t r = 0; r < m.n_rows(); ++r) {
        const double v = m.at(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  nlohmann::json j;
  j["dtype"] = "float64";
  j["order"] = "column-major";
  j["n_rows"] = m.n_rows();
  j["columns"] = m.columns;
  j["labels"] = m.labels;
  std::vector<std::string> rec;
  std::vector<std::size_t> peaks;
  for (const auto& b : m.rows) rec.push_back(b.record_id), peaks.push_back(b.r_peak);
  j["record"] = rec;
  j["r_peak"] = peaks;
  std::vector<std::size_t> miss;
  for (std::size_t i = 0; i < m.missing.size(); ++i)
    if (m.missing[i]) miss.push_back(i);
  j["missing_flat_row_major"] = miss;
  if (!extra.is_null()) j["meta"] = extra;
  std::ofstream(stem.string() + ".json") << j.dump(1);
}

inline FeatureMatrix read_binary(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot open " + stem.string() + ".json");
  const auto j = nlohmann::json::parse(js);
  const auto n = j.at("n_rows").get<std::size_t>();
  auto m = FeatureMatrix::with_columns(j.at("columns").get<std::vector<std::string>>(), n);
  std::ifstream in(stem.string() + ".bin", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + stem.string() + ".bin");
  for (std::size_t c = 0; c < m.n_cols(); ++c)
    for (std::size_t r = 0; r < n; ++r) {
      double v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated " + stem.string() + ".bin");
      m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  m.labels = j.at("labels").get<std::vector<int>>();
  const auto rec = j.at("record").get<std::vector<std::string>>();
  const auto peaks = j.at("r_peak").get<std::vector<std::size_t>>();
  for (std::size_t r = 0; r < n; ++r) m.rows[r] = {rec[r], peaks[r]};
  for (auto i : j.at("missing_flat_row_major").get<std::vector<std::size_t>>()) m.missing[i] = 1;
  return m;
}

}  // namespace ecg
