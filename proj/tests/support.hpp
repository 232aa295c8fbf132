#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "prunerzero/layer.hpp"
#include "prunerzero/rng.hpp"

namespace pztest {

using prunerzero::MatrixF;
using prunerzero::Rng;

inline MatrixF normal_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  MatrixF m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(scale * rng.normal());
  return m;
}

inline MatrixF uniform_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  MatrixF m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<float>(lo + (hi - lo) * rng.uniform01());
  }
  return m;
}

inline prunerzero::LayerStats random_layer(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                           Eigen::Index samples = 16) {
  return {"layer", normal_matrix(rng, rows, cols), normal_matrix(rng, rows, cols),
          normal_matrix(rng, samples, cols)};
}

inline prunerzero::LayerStats positive_layer(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  return {"pos", uniform_matrix(rng, rows, cols, 0.1, 10.0), uniform_matrix(rng, rows, cols, 0.1, 10.0),
          uniform_matrix(rng, 8, cols, 0.1, 10.0)};
}

// Rows of the searched-metrics corpus: expression and reported perplexity.
inline std::vector<std::pair<std::string, double>> load_corpus() {
  std::vector<std::pair<std::string, double>> out;
  std::ifstream in(PZ_CORPUS_FILE);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    out.emplace_back(line.substr(0, tab), std::stod(line.substr(tab + 1)));
  }
  return out;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-30); }

}  // namespace pztest
