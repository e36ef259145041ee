#pragma once

#include "dlearn/types.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dlearn {

/// Parse failure in one of the text formats; the message names the line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix text format: "d r" on the first line, then d lines of r numbers.
void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

/// A vector is a matrix file with a single column (or a single row).
Vector load_vector(const std::string& path);

/// One code per line as space-separated "index:value" pairs.
void write_codes(std::ostream& os, const std::vector<SparseCode>& codes);
std::vector<SparseCode> read_codes(std::istream& is);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace dlearn
