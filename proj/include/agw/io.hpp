#pragma once

// File formats: JSON model files, CSV sequences, distance matrices and the
// experiment tables. JSON goes through nlohmann::json (vendored); the CSV
// dialect here is deliberately tiny (no quoting, comma separators, '#'
// comment lines) so readers in other languages stay one-liners.
//
// All writers are deterministic: given the same inputs they produce byte
// identical files. Nothing time- or host-dependent is ever written, and
// nlohmann::json keeps object keys sorted, so JSON output is canonical.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "agw/errors.hpp"
#include "agw/eval.hpp"
#include "agw/experiments.hpp"
#include "agw/hmm.hpp"

namespace agw {

inline constexpr const char kVersionString[] = "0.1.0";

// Provenance carried alongside a model: how it was estimated. Both fields
// are optional because hand-written model files have neither.
struct ModelMetadata {
  std::optional<std::uint64_t> seed;
  std::optional<double> log_likelihood;
};

namespace detail {

// Shortest-round-trip formatting is what nlohmann uses for JSON; for CSV we
// pin %.17g, which is enough digits to reproduce any double exactly.
inline std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline bool parse_double(const std::string& cell, double& out) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline bool parse_long(const std::string& cell, long long& out) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

// Reads a whole text file, normalizing CRLF line endings. Returns the lines
// without their terminators; a trailing newline does not produce an empty
// final line.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open '" + path + "' for writing");
  return out;
}

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw data_error(std::string("missing field '") + name + "'");
  return *it;
}

inline double number_field(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw data_error(where + ": expected a number");
  return j.get<double>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model files (JSON, format version "1")
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const GmmHmm& h, const ModelMetadata& meta = {}) {
  nlohmann::json j;
  j["version"] = "1";
  j["dim"] = h.dim();
  j["states"] = h.states();

  nlohmann::json transition = nlohmann::json::array();
  for (Eigen::Index i = 0; i < h.states(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < h.states(); ++k) row.push_back(h.transition()(i, k));
    transition.push_back(std::move(row));
  }
  j["transition"] = std::move(transition);

  nlohmann::json means = nlohmann::json::array();
  nlohmann::json covs = nlohmann::json::array();
  for (Eigen::Index s = 0; s < h.states(); ++s) {
    const Gaussian& g = h.component(s);
    nlohmann::json mean = nlohmann::json::array();
    for (Eigen::Index k = 0; k < h.dim(); ++k) mean.push_back(g.mean()(k));
    means.push_back(std::move(mean));
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < h.dim(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < h.dim(); ++c) row.push_back(g.cov()(r, c));
      cov.push_back(std::move(row));
    }
    covs.push_back(std::move(cov));
  }
  j["means"] = std::move(means);
  j["covariances"] = std::move(covs);

  if (meta.seed || meta.log_likelihood) {
    nlohmann::json m;
    if (meta.seed) m["seed"] = *meta.seed;
    if (meta.log_likelihood) m["log_likelihood"] = *meta.log_likelihood;
    j["metadata"] = std::move(m);
  }
  return j;
}

inline GmmHmm model_from_json(const nlohmann::json& j, ModelMetadata* meta = nullptr) {
  using detail::number_field;
  using detail::require_field;

  if (!j.is_object()) throw data_error("model: top level must be a JSON object");

  const nlohmann::json& version = require_field(j, "version");
  if (!version.is_string() || version.get<std::string>() != "1")
    throw data_error("model: unsupported format version (expected \"1\")");

  const nlohmann::json& jdim = require_field(j, "dim");
  const nlohmann::json& jstates = require_field(j, "states");
  if (!jdim.is_number_integer() || jdim.get<long long>() < 1)
    throw data_error("model: field 'dim' must be a positive integer");
  if (!jstates.is_number_integer() || jstates.get<long long>() < 1)
    throw data_error("model: field 'states' must be a positive integer");
  const auto d = static_cast<Eigen::Index>(jdim.get<long long>());
  const auto m = static_cast<Eigen::Index>(jstates.get<long long>());

  const nlohmann::json& jt = require_field(j, "transition");
  if (!jt.is_array() || static_cast<Eigen::Index>(jt.size()) != m)
    throw data_error("model: field 'transition' must be an array of " + std::to_string(m) +
                     " rows");
  Matrix t(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const nlohmann::json& row = jt[static_cast<size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m)
      throw data_error("model: transition row " + std::to_string(i) + " must have " +
                       std::to_string(m) + " entries");
    for (Eigen::Index k = 0; k < m; ++k)
      t(i, k) = number_field(row[static_cast<size_t>(k)],
                             "model: transition[" + std::to_string(i) + "][" +
                                 std::to_string(k) + "]");
  }

  const nlohmann::json& jmeans = require_field(j, "means");
  const nlohmann::json& jcovs = require_field(j, "covariances");
  if (!jmeans.is_array() || static_cast<Eigen::Index>(jmeans.size()) != m)
    throw data_error("model: field 'means' must list one mean per state");
  if (!jcovs.is_array() || static_cast<Eigen::Index>(jcovs.size()) != m)
    throw data_error("model: field 'covariances' must list one matrix per state");

  std::vector<Gaussian> comps;
  comps.reserve(static_cast<size_t>(m));
  for (Eigen::Index s = 0; s < m; ++s) {
    const nlohmann::json& jmean = jmeans[static_cast<size_t>(s)];
    if (!jmean.is_array() || static_cast<Eigen::Index>(jmean.size()) != d)
      throw data_error("model: means[" + std::to_string(s) + "] must have " +
                       std::to_string(d) + " entries");
    Vector mu(d);
    for (Eigen::Index k = 0; k < d; ++k)
      mu(k) = number_field(jmean[static_cast<size_t>(k)],
                           "model: means[" + std::to_string(s) + "][" + std::to_string(k) + "]");

    const nlohmann::json& jcov = jcovs[static_cast<size_t>(s)];
    if (!jcov.is_array() || static_cast<Eigen::Index>(jcov.size()) != d)
      throw data_error("model: covariances[" + std::to_string(s) + "] must be a " +
                       std::to_string(d) + "x" + std::to_string(d) + " matrix");
    Matrix cov(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      const nlohmann::json& row = jcov[static_cast<size_t>(r)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d)
        throw data_error("model: covariances[" + std::to_string(s) + "] row " +
                         std::to_string(r) + " must have " + std::to_string(d) + " entries");
      for (Eigen::Index c = 0; c < d; ++c)
        cov(r, c) = number_field(row[static_cast<size_t>(c)],
                                 "model: covariances[" + std::to_string(s) + "][" +
                                     std::to_string(r) + "][" + std::to_string(c) + "]");
    }
    comps.emplace_back(std::move(mu), std::move(cov));
  }

  if (meta) {
    *meta = ModelMetadata{};
    auto it = j.find("metadata");
    if (it != j.end()) {
      if (!it->is_object()) throw data_error("model: field 'metadata' must be an object");
      auto s = it->find("seed");
      if (s != it->end()) {
        if (!s->is_number_integer() || s->get<long long>() < 0)
          throw data_error("model: metadata.seed must be a nonnegative integer");
        meta->seed = s->get<std::uint64_t>();
      }
      auto ll = it->find("log_likelihood");
      if (ll != it->end())
        meta->log_likelihood = number_field(*ll, "model: metadata.log_likelihood");
    }
  }

  // Construction re-checks every structural invariant (stochastic rows, SPD
  // covariances, consistent dimensions) and throws with its own diagnostics.
  return GmmHmm(std::move(t), std::move(comps));
}

inline void save_model_file(const std::string& path, const GmmHmm& h,
                            const ModelMetadata& meta = {}) {
  std::ofstream out = detail::open_for_write(path);
  out << model_to_json(h, meta).dump(2) << '\n';
  if (!out) throw data_error("failed writing '" + path + "'");
}

inline GmmHmm load_model_file(const std::string& path, ModelMetadata* meta = nullptr) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error(path + ": " + e.what());
  }
  try {
    return model_from_json(j, meta);
  } catch (const numerical_error& e) {
    throw numerical_error(path + ": " + e.what());
  } catch (const data_error& e) {
    throw data_error(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sequence files (CSV, one row per time step)
// ---------------------------------------------------------------------------

inline void save_sequence_csv(const std::string& path, const Matrix& observations) {
  if (observations.rows() < 1 || observations.cols() < 1)
    throw data_error("save_sequence_csv: empty observation matrix");
  if (!observations.allFinite())
    throw data_error("save_sequence_csv: non-finite observations");
  std::ofstream out = detail::open_for_write(path);
  for (Eigen::Index k = 0; k < observations.cols(); ++k)
    out << (k ? "," : "") << "x" << k;
  out << '\n';
  for (Eigen::Index i = 0; i < observations.rows(); ++i) {
    for (Eigen::Index k = 0; k < observations.cols(); ++k)
      out << (k ? "," : "") << detail::format_g17(observations(i, k));
    out << '\n';
  }
  if (!out) throw data_error("failed writing '" + path + "'");
}

// Header rows are optional and detected by attempting to parse the first
// line; any non-numeric cell there makes it a header. Errors cite 1-based
// file line numbers.
inline Matrix load_sequence_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);

  std::vector<std::vector<double>> rows;
  Eigen::Index width = -1;
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) {
      if (ln + 1 == lines.size()) break;  // tolerate one blank line at EOF
      throw data_error(path + " row " + std::to_string(ln + 1) + ": blank line");
    }
    const std::vector<std::string> cells = detail::split_csv_line(lines[ln]);
    std::vector<double> vals(cells.size());
    bool numeric = true;
    for (size_t c = 0; c < cells.size(); ++c) {
      if (!detail::parse_double(cells[c], vals[c])) {
        numeric = false;
        if (ln == 0) break;  // header line
        throw data_error(path + " row " + std::to_string(ln + 1) + ": cannot parse '" +
                         cells[c] + "' as a number");
      }
    }
    if (!numeric) continue;  // skipped header
    if (width < 0) {
      width = static_cast<Eigen::Index>(vals.size());
    } else if (static_cast<Eigen::Index>(vals.size()) != width) {
      throw data_error(path + " row " + std::to_string(ln + 1) + ": expected " +
                       std::to_string(width) + " columns, got " + std::to_string(vals.size()));
    }
    for (double v : vals)
      if (!std::isfinite(v))
        throw data_error(path + " row " + std::to_string(ln + 1) + ": non-finite value");
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw data_error(path + ": no data rows");

  Matrix obs(static_cast<Eigen::Index>(rows.size()), width);
  for (Eigen::Index i = 0; i < obs.rows(); ++i)
    for (Eigen::Index k = 0; k < width; ++k)
      obs(i, k) = rows[static_cast<size_t>(i)][static_cast<size_t>(k)];
  return obs;
}

// ---------------------------------------------------------------------------
// Distance matrices (CSV with a commented provenance line + metadata JSON)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string distmat_comment(const DistanceMatrix& dm) {
  std::ostringstream os;
  os << "# method=" << method_name(dm.method) << " p=" << format_g17(dm.params.p)
     << " alpha=" << format_g17(dm.params.alpha) << " samples=" << dm.params.sample_count
     << " seed=" << dm.base_seed << " version=" << kVersionString;
  return os.str();
}

}  // namespace detail

inline void save_distance_matrix_csv(const std::string& path, const DistanceMatrix& dm,
                                     const std::vector<std::string>& names) {
  const auto n = static_cast<size_t>(dm.values.rows());
  if (names.size() != n)
    throw data_error("save_distance_matrix_csv: " + std::to_string(names.size()) +
                     " names for " + std::to_string(n) + " models");
  for (const std::string& name : names)
    if (name.empty() || name.find(',') != std::string::npos ||
        name.find('\n') != std::string::npos)
      throw data_error("save_distance_matrix_csv: name '" + name +
                       "' is empty or contains a delimiter");
  std::ofstream out = detail::open_for_write(path);
  out << detail::distmat_comment(dm) << '\n';
  out << "name,label";
  for (const std::string& name : names) out << ',' << name;
  out << '\n';
  for (size_t i = 0; i < n; ++i) {
    out << names[i] << ',' << dm.labels[i];
    for (size_t k = 0; k < n; ++k)
      out << ',' << detail::format_g17(dm.values(static_cast<Eigen::Index>(i),
                                                 static_cast<Eigen::Index>(k)));
    out << '\n';
  }
  if (!out) throw data_error("failed writing '" + path + "'");
}

inline void save_distance_matrix_meta(const std::string& path, const DistanceMatrix& dm,
                                      const std::vector<std::string>& names) {
  nlohmann::json j;
  j["method"] = method_name(dm.method);
  j["p"] = dm.params.p;
  j["alpha"] = dm.params.alpha;
  j["samples"] = dm.params.sample_count;
  j["seed"] = dm.base_seed;
  j["labels"] = dm.labels;
  j["files"] = names;
  j["version"] = kVersionString;
  std::ofstream out = detail::open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw data_error("failed writing '" + path + "'");
}

// Result of reading a matrix CSV back: enough to drive the evaluation
// routines. Term matrices and timings are not part of the file format, so
// the corresponding fields stay empty.
struct LoadedDistanceMatrix {
  DistanceMatrix matrix;
  std::vector<std::string> names;
};

inline LoadedDistanceMatrix load_distance_matrix_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);

  size_t ln = 0;
  std::string comment;
  while (ln < lines.size() && !lines[ln].empty() && lines[ln][0] == '#') {
    if (comment.empty()) comment = lines[ln];
    ++ln;
  }
  if (ln >= lines.size()) throw data_error(path + ": missing header row");

  const std::vector<std::string> header = detail::split_csv_line(lines[ln]);
  if (header.size() < 3 || header[0] != "name" || header[1] != "label")
    throw data_error(path + " row " + std::to_string(ln + 1) +
                     ": header must start with 'name,label'");
  const size_t n = header.size() - 2;
  ++ln;

  LoadedDistanceMatrix out;
  out.names.assign(header.begin() + 2, header.end());
  out.matrix.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  out.matrix.labels.resize(n);

  for (size_t i = 0; i < n; ++i, ++ln) {
    if (ln >= lines.size() || lines[ln].empty())
      throw data_error(path + ": expected " + std::to_string(n) + " data rows, got " +
                       std::to_string(i));
    const std::vector<std::string> cells = detail::split_csv_line(lines[ln]);
    if (cells.size() != n + 2)
      throw data_error(path + " row " + std::to_string(ln + 1) + ": expected " +
                       std::to_string(n + 2) + " cells, got " + std::to_string(cells.size()));
    if (cells[0] != out.names[i])
      throw data_error(path + " row " + std::to_string(ln + 1) + ": row name '" + cells[0] +
                       "' does not match header order ('" + out.names[i] + "')");
    long long label = 0;
    if (!detail::parse_long(cells[1], label))
      throw data_error(path + " row " + std::to_string(ln + 1) + ": cannot parse label '" +
                       cells[1] + "'");
    out.matrix.labels[i] = static_cast<int>(label);
    for (size_t k = 0; k < n; ++k) {
      double v = 0.0;
      if (!detail::parse_double(cells[k + 2], v))
        throw data_error(path + " row " + std::to_string(ln + 1) + ": cannot parse '" +
                         cells[k + 2] + "' as a number");
      if (!std::isfinite(v))
        throw data_error(path + " row " + std::to_string(ln + 1) + ": non-finite distance");
      out.matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
    }
  }

  // Recover the method tag from the provenance comment when present; it is
  // informational only at this point.
  for (DistanceMethod m : {DistanceMethod::Maw, DistanceMethod::Iaw, DistanceMethod::KlMc}) {
    const std::string tag = std::string("method=") + method_name(m) + " ";
    if (comment.find(tag) != std::string::npos) {
      out.matrix.method = m;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label files, PR curves and experiment tables
// ---------------------------------------------------------------------------

// Labels file: CSV rows of "file,label" with an optional "file,label" header.
inline std::vector<std::pair<std::string, int>> load_labels_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);
  std::vector<std::pair<std::string, int>> out;
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) {
      if (ln + 1 == lines.size()) break;
      throw data_error(path + " row " + std::to_string(ln + 1) + ": blank line");
    }
    const std::vector<std::string> cells = detail::split_csv_line(lines[ln]);
    if (cells.size() != 2)
      throw data_error(path + " row " + std::to_string(ln + 1) +
                       ": expected 'file,label', got " + std::to_string(cells.size()) +
                       " cells");
    long long label = 0;
    if (!detail::parse_long(cells[1], label)) {
      if (ln == 0) continue;  // header
      throw data_error(path + " row " + std::to_string(ln + 1) + ": cannot parse label '" +
                       cells[1] + "'");
    }
    if (cells[0].empty())
      throw data_error(path + " row " + std::to_string(ln + 1) + ": empty file name");
    out.emplace_back(cells[0], static_cast<int>(label));
  }
  if (out.empty()) throw data_error(path + ": no label rows");
  return out;
}

inline void save_pr_csv(const std::string& path, const PrCurve& curve,
                        const std::string& comment) {
  std::ofstream out = detail::open_for_write(path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "recall,precision\n";
  for (Eigen::Index k = 0; k < curve.recall.size(); ++k)
    out << detail::format_g17(curve.recall(k)) << ',' << detail::format_g17(curve.precision(k))
        << '\n';
  if (!out) throw data_error("failed writing '" + path + "'");
}

inline void save_class_summary_csv(const std::string& path, const Vector& mean,
                                   const Vector& sd, const std::string& comment) {
  if (mean.size() != sd.size())
    throw data_error("save_class_summary_csv: mean/sd length mismatch");
  std::ofstream out = detail::open_for_write(path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "class,mean,sd\n";
  for (Eigen::Index c = 0; c < mean.size(); ++c)
    out << c << ',' << detail::format_g17(mean(c)) << ',' << detail::format_g17(sd(c)) << '\n';
  if (!out) throw data_error("failed writing '" + path + "'");
}

inline void save_toy_csv(const std::string& path, const std::vector<ToyRow>& rows,
                         const std::string& comment) {
  std::ofstream out = detail::open_for_write(path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "i,w2_mean,w2_sd,kl_mean,kl_sd\n";
  for (const ToyRow& r : rows)
    out << r.i << ',' << detail::format_g17(r.w2_mean) << ',' << detail::format_g17(r.w2_sd)
        << ',' << detail::format_g17(r.kl_mean) << ',' << detail::format_g17(r.kl_sd) << '\n';
  if (!out) throw data_error("failed writing '" + path + "'");
}

}  // namespace agw
