#include "cellmr/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cellmr/errors.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {
const double kNaN = std::numeric_limits<double>::quiet_NaN();
}

long DataMatrix::observed_in_row(long i) const {
  long count = 0;
  for (long j = 0; j < cols(); ++j) count += mask(i, j);
  return count;
}

DataMatrix DataMatrix::complete(const Matrix& values) {
  DataMatrix d;
  d.values = values;
  d.mask = MaskMatrix::Ones(values.rows(), values.cols());
  d.column_names.resize(values.cols());
  for (long j = 0; j < values.cols(); ++j) d.column_names[j] = "v" + std::to_string(j + 1);
  d.validate();
  return d;
}

DataMatrix DataMatrix::from_values_with_nan(const Matrix& values) {
  DataMatrix d;
  d.values = values;
  d.mask = MaskMatrix::Ones(values.rows(), values.cols());
  for (long i = 0; i < values.rows(); ++i)
    for (long j = 0; j < values.cols(); ++j)
      if (std::isnan(values(i, j))) d.mask(i, j) = 0;
  d.column_names.resize(values.cols());
  for (long j = 0; j < values.cols(); ++j) d.column_names[j] = "v" + std::to_string(j + 1);
  d.validate();
  return d;
}

void DataMatrix::validate() const {
  if (values.rows() != mask.rows() || values.cols() != mask.cols())
    throw DimensionMismatchError("DataMatrix: mask shape differs from values");
  if (!column_names.empty() &&
      static_cast<long>(column_names.size()) != values.cols())
    throw DimensionMismatchError("DataMatrix: column name count differs from values");
  for (long i = 0; i < rows(); ++i) {
    long seen = 0;
    for (long j = 0; j < cols(); ++j) {
      const bool obs = mask(i, j) != 0;
      const double v = values(i, j);
      if (obs && !std::isfinite(v))
        throw NonFiniteInputError("DataMatrix: non-finite value in observed cell");
      seen += obs;
    }
    if (seen == 0)
      throw AllMissingRowError("DataMatrix: row " + std::to_string(i) +
                                   " has no observed cell",
                               i);
  }
}

DataMatrix DataMatrix::select_rows(const std::vector<long>& idx) const {
  DataMatrix out;
  out.values.resize(static_cast<long>(idx.size()), cols());
  out.mask.resize(static_cast<long>(idx.size()), cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.values.row(static_cast<long>(r)) = values.row(idx[r]);
    out.mask.row(static_cast<long>(r)) = mask.row(idx[r]);
  }
  out.column_names = column_names;
  return out;
}

DataMatrix DataMatrix::select_cols(long first, long count) const {
  DataMatrix out;
  out.values = values.middleCols(first, count);
  out.mask = mask.middleCols(first, count);
  if (!column_names.empty())
    out.column_names.assign(column_names.begin() + first,
                            column_names.begin() + first + count);
  return out;
}

DataMatrix hstack(const DataMatrix& x, const DataMatrix& y) {
  if (x.rows() != y.rows())
    throw DimensionMismatchError("hstack: row counts differ");
  DataMatrix joint;
  joint.values.resize(x.rows(), x.cols() + y.cols());
  joint.values << x.values, y.values;
  joint.mask.resize(x.rows(), x.cols() + y.cols());
  joint.mask << x.mask, y.mask;
  joint.column_names = x.column_names;
  joint.column_names.insert(joint.column_names.end(), y.column_names.begin(),
                            y.column_names.end());
  return joint;
}

DataMatrix Standardizer::apply(const DataMatrix& data) const {
  if (data.cols() != cols())
    throw DimensionMismatchError("Standardizer: column count differs from fit");
  DataMatrix out = data;
  for (long j = 0; j < out.cols(); ++j) out.values.col(j) /= scales[j];
  return out;
}

DataMatrix Standardizer::invert(const DataMatrix& data) const {
  if (data.cols() != cols())
    throw DimensionMismatchError("Standardizer: column count differs from fit");
  DataMatrix out = data;
  for (long j = 0; j < out.cols(); ++j) out.values.col(j) *= scales[j];
  return out;
}

std::pair<DataMatrix, Standardizer> standardize(const DataMatrix& data,
                                                const TanhChi& chi) {
  data.validate();
  if (data.rows() == 0) throw EmptyInputError("standardize: no rows");
  Standardizer s;
  s.medians.resize(data.cols());
  s.scales.resize(data.cols());
  std::vector<double> col;
  for (long j = 0; j < data.cols(); ++j) {
    col.clear();
    for (long i = 0; i < data.rows(); ++i)
      if (data.observed(i, j)) col.push_back(data.values(i, j));
    if (col.empty())
      throw DegenerateColumnError(
          "standardize: column " + std::to_string(j) + " has no observed cells",
          static_cast<int>(j));
    const double med = median(col);
    for (double& v : col) v -= med;
    const MScaleResult ms = mscale(col, chi);
    if (ms.degenerate)
      throw DegenerateColumnError(
          "standardize: column " + std::to_string(j) + " has zero robust scale",
          static_cast<int>(j));
    s.medians[j] = med;
    s.scales[j] = ms.sigma;
  }
  return {s.apply(data), s};
}

std::pair<Vector, Matrix> destandardize_cov(const Standardizer& s, const Vector& mu,
                                            const Matrix& sigma) {
  if (mu.size() != s.cols() || sigma.rows() != s.cols() || sigma.cols() != s.cols())
    throw DimensionMismatchError("destandardize_cov: shape mismatch");
  const Vector& d = s.scales;
  Vector mu_out = d.cwiseProduct(mu);
  Matrix sigma_out = d.asDiagonal() * sigma * d.asDiagonal();
  return {std::move(mu_out), std::move(sigma_out)};
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool is_missing_token(const std::string& t) {
  if (t.empty()) return true;
  std::string lower;
  lower.reserve(t.size());
  for (char ch : t) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return lower == "na" || lower == "nan";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

DataMatrix read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("read_csv: empty file " + path);
  DataMatrix out;
  for (auto& name : split_csv_line(line)) out.column_names.push_back(trim(name));
  const long d = static_cast<long>(out.column_names.size());

  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::uint8_t>> masks;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<long>(fields.size()) != d)
      throw IoError("read_csv: line " + std::to_string(lineno) + " has " +
                    std::to_string(fields.size()) + " fields, expected " +
                    std::to_string(d));
    std::vector<double> vals(d);
    std::vector<std::uint8_t> m(d);
    long seen = 0;
    for (long j = 0; j < d; ++j) {
      const std::string tok = trim(fields[j]);
      if (is_missing_token(tok)) {
        vals[j] = kNaN;
        m[j] = 0;
        continue;
      }
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw IoError("read_csv: line " + std::to_string(lineno) +
                      ", field " + std::to_string(j + 1) + ": not a number: " + tok);
      }
      if (used != tok.size())
        throw IoError("read_csv: line " + std::to_string(lineno) +
                      ", field " + std::to_string(j + 1) + ": trailing junk: " + tok);
      if (!std::isfinite(v))
        throw NonFiniteInputError("read_csv: non-finite value at line " +
                                  std::to_string(lineno));
      vals[j] = v;
      m[j] = 1;
      ++seen;
    }
    if (seen == 0)
      throw AllMissingRowError(
          "read_csv: data row " + std::to_string(static_cast<long>(rows.size())) +
              " (line " + std::to_string(lineno) + ") has no observed cell",
          static_cast<long>(rows.size()));
    rows.push_back(std::move(vals));
    masks.push_back(std::move(m));
  }
  const long n = static_cast<long>(rows.size());
  out.values.resize(n, d);
  out.mask.resize(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) {
      out.values(i, j) = rows[i][j];
      out.mask(i, j) = masks[i][j];
    }
  return out;
}

void write_csv(const std::string& path, const DataMatrix& data, int precision) {
  std::ofstream outf(path);
  if (!outf) throw IoError("write_csv: cannot open " + path);
  outf.precision(precision);
  for (long j = 0; j < data.cols(); ++j) {
    if (j) outf << ',';
    outf << (data.column_names.empty() ? "v" + std::to_string(j + 1)
                                       : data.column_names[j]);
  }
  outf << '\n';
  for (long i = 0; i < data.rows(); ++i) {
    for (long j = 0; j < data.cols(); ++j) {
      if (j) outf << ',';
      if (data.observed(i, j))
        outf << data.values(i, j);
      else
        outf << "NA";
    }
    outf << '\n';
  }
  if (!outf) throw IoError("write_csv: failed writing " + path);
}

}  // namespace cellmr
