#include "dlearn/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace dlearn {

namespace {

double parse_number(const std::string& tok, std::size_t line) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError("line " + std::to_string(line) + ": '" + tok + "' is not a number");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

Matrix read_matrix(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("empty matrix file");
  long rows = 0, cols = 0;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> rows >> cols) || (hs >> extra) || rows < 1 || cols < 1) {
      throw ParseError("line 1: expected header 'd r' with positive integers");
    }
  }
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!next_line()) {
      throw ParseError("expected " + std::to_string(rows) + " rows, found " + std::to_string(i));
    }
    std::istringstream ls(line);
    std::string tok;
    long j = 0;
    while (ls >> tok) {
      if (j >= cols) break;
      m(i, j++) = parse_number(tok, lineno);
    }
    if (j != cols || (ls >> tok)) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(cols) + " values");
    }
  }
  if (next_line()) throw ParseError("line " + std::to_string(lineno) + ": trailing data after last row");
  return m;
}

void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_matrix(os, m);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

Matrix load_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open '" + path + "'");
  try {
    return read_matrix(is);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Vector load_vector(const std::string& path) {
  Matrix m = load_matrix(path);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw ParseError(path + ": expected a single column or row");
}

void write_codes(std::ostream& os, const std::vector<SparseCode>& codes) {
  for (const auto& c : codes) {
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (k) os << ' ';
      os << c.support[k] << ':' << format_double(c.values[k]);
    }
    os << '\n';
  }
}

std::vector<SparseCode> read_codes(std::istream& is) {
  std::vector<SparseCode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    SparseCode c;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) {
        throw ParseError("line " + std::to_string(lineno) + ": '" + tok + "' is not index:value");
      }
      const double idx = parse_number(tok.substr(0, colon), lineno);
      if (idx < 0 || idx != static_cast<double>(static_cast<Index>(idx))) {
        throw ParseError("line " + std::to_string(lineno) + ": bad index in '" + tok + "'");
      }
      if (!c.support.empty() && static_cast<Index>(idx) <= c.support.back()) {
        throw ParseError("line " + std::to_string(lineno) + ": indices must be strictly increasing");
      }
      c.support.push_back(static_cast<Index>(idx));
      c.values.push_back(parse_number(tok.substr(colon + 1), lineno));
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace dlearn
