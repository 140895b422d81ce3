#include "glfeat/matching.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "glfeat/errors.hpp"

namespace glfeat::matching {

DistanceMatrix distance_matrix(const RowMatrix<float>& a, const RowMatrix<float>& b) {
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols()) {
    throw ShapeError("descriptor dimensions differ");
  }
  const RowMatrix<double> ad = a.cast<double>();
  const RowMatrix<double> bd = b.cast<double>();
  DistanceMatrix d = -2.0 * ad * bd.transpose();
  const Vector<double> na = ad.rowwise().squaredNorm();
  const Vector<double> nb = bd.rowwise().squaredNorm();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      // Near-coincident pairs lose precision in the expanded form.
      d(i, j) = d(i, j) < 1e-6 ? (ad.row(i) - bd.row(j)).norm() : std::sqrt(d(i, j));
    }
  }
  return d;
}

RowMatrix<double> match_prob_forward(const DistanceMatrix& d, double theta) {
  if (!(theta > 0.0)) throw ArgumentError("theta must be positive");
  RowMatrix<double> p = -theta * d;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    auto row = p.row(i);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return p;
}

RowMatrix<double> match_prob_reverse(const DistanceMatrix& d, double theta) {
  return match_prob_forward(d.transpose(), theta).transpose();
}

MatchDistributions match_distributions(const DistanceMatrix& d, double theta) {
  return {match_prob_forward(d, theta), match_prob_reverse(d, theta)};
}

RowMatrix<double> cycle_consistent_prob(const DistanceMatrix& d, double theta) {
  const auto p = match_distributions(d, theta);
  return p.forward.cwiseProduct(p.reverse);
}

namespace {

template <typename Get>
int draw(int n, Get prob, double u) {
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    acc += prob(k);
    if (u < acc) return k;
  }
  // Rounding left u above the accumulated mass: take the last supported entry.
  for (int k = n - 1; k >= 0; --k) {
    if (prob(k) > 0.0) return k;
  }
  return n - 1;
}

}  // namespace

MatchSet sample_matches(const MatchDistributions& p, const DistanceMatrix& d,
                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int na = static_cast<int>(p.forward.rows());
  const int nb = static_cast<int>(p.forward.cols());
  MatchSet out;
  if (na == 0 || nb == 0) return out;
  for (int i = 0; i < na; ++i) {
    const int j = draw(nb, [&](int k) { return p.forward(i, k); }, uniform(rng));
    const int back = draw(na, [&](int k) { return p.reverse(k, j); }, uniform(rng));
    if (back != i) continue;
    Match m;
    m.a = i;
    m.b = j;
    m.distance = d(i, j);
    m.log_prob = std::log(p.forward(i, j)) + std::log(p.reverse(i, j));
    out.matches.push_back(m);
  }
  return out;
}

MatchSet mutual_nn_match(const DistanceMatrix& d) {
  MatchSet out;
  const Eigen::Index na = d.rows();
  const Eigen::Index nb = d.cols();
  if (na == 0 || nb == 0) return out;
  // minCoeff reports the first minimum, i.e. the smaller index on ties.
  std::vector<Eigen::Index> col_best(nb);
  for (Eigen::Index j = 0; j < nb; ++j) d.col(j).minCoeff(&col_best[j]);
  for (Eigen::Index i = 0; i < na; ++i) {
    Eigen::Index j;
    d.row(i).minCoeff(&j);
    if (col_best[j] == i) {
      Match m;
      m.a = static_cast<int>(i);
      m.b = static_cast<int>(j);
      m.distance = d(i, j);
      out.matches.push_back(m);
    }
  }
  return out;
}

void write_match_dump(std::ostream& out, const MatchSet& matches) {
  for (const auto& m : matches.matches) {
    out << fmt::format("{} {} {:.9g}", m.a, m.b, m.distance);
    if (m.label) {
      out << (*m.label == geometry::MatchLabel::kCorrect ? " correct" : " incorrect");
    }
    out << '\n';
  }
}

MatchSet read_match_dump(std::istream& in) {
  MatchSet out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Match m;
    if (!(ss >> m.a >> m.b >> m.distance)) {
      throw DataError(fmt::format("match dump line {}: expected 'iA iB distance'", line_no));
    }
    std::string label;
    if (ss >> label) {
      if (label == "correct") {
        m.label = geometry::MatchLabel::kCorrect;
      } else if (label == "incorrect") {
        m.label = geometry::MatchLabel::kIncorrect;
      } else {
        throw DataError(fmt::format("match dump line {}: bad label '{}'", line_no, label));
      }
    }
    out.matches.push_back(m);
  }
  return out;
}

}  // namespace glfeat::matching
