#include "dlearn/types.hpp"

namespace dlearn {

Vector SparseCode::dense(Index r) const {
  Vector out = Vector::Zero(r);
  for (std::size_t k = 0; k < support.size(); ++k) {
    if (support[k] < 0 || support[k] >= r) {
      throw InputError("sparse code index " + std::to_string(support[k]) +
                       " outside ambient dimension " + std::to_string(r));
    }
    out[support[k]] = values[k];
  }
  return out;
}

SparseCode SparseCode::from_dense(const Vector& w) {
  SparseCode code;
  for (Index i = 0; i < w.size(); ++i) {
    if (w[i] != 0.0) {
      code.support.push_back(i);
      code.values.push_back(w[i]);
    }
  }
  return code;
}

double inf_norm(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace dlearn
