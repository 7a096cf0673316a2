#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "brainmclip/alignment/rsa.hpp"
#include "brainmclip/core/matrix.hpp"

namespace brainmclip {

/// Real value with 9 significant digits, as used in every analysis CSV.
inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/**
 * Long-form `i,j,value` export of a square matrix. When labels are given they
 * replace the row/column indices (e.g. layer ids for a CKA heatmap).
 */
inline void write_pairs_csv(std::ostream& os, const Matrix& m, const std::vector<int>& labels = {}) {
  if (!labels.empty() && (labels.size() != m.rows() || labels.size() != m.cols())) {
    throw ShapeMismatch("write_pairs_csv: label count does not match matrix");
  }
  os << "i,j,value\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const long long li = labels.empty() ? static_cast<long long>(i) : labels[i];
      const long long lj = labels.empty() ? static_cast<long long>(j) : labels[j];
      os << li << ',' << lj << ',' << format_g9(m(i, j)) << '\n';
    }
  }
}

inline void write_rdm_csv(std::ostream& os, const Rdm& r) { write_pairs_csv(os, r.values()); }

inline void write_rsa_csv(std::ostream& os, const std::vector<RsaEntry>& table) {
  os << "region,layer,similarity\n";
  for (const auto& e : table) os << e.region << ',' << e.layer << ',' << format_g9(e.similarity) << '\n';
}

}  // namespace brainmclip
