#pragma once

#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glfeat/geometry.hpp"
#include "glfeat/tensor.hpp"

namespace glfeat::matching {

// NA x NB Euclidean distances between unit descriptors.
using DistanceMatrix = RowMatrix<double>;

struct Match {
  int a = 0;
  int b = 0;
  double distance = 0.0;
  std::optional<double> log_prob;
  std::optional<geometry::MatchLabel> label;
};

struct MatchSet {
  std::vector<Match> matches;

  int size() const { return static_cast<int>(matches.size()); }
  bool empty() const { return matches.empty(); }
};

// Rows of `a` and `b` are descriptors.
DistanceMatrix distance_matrix(const RowMatrix<float>& a, const RowMatrix<float>& b);

// softmax(-theta * d(i, :)) per row.
RowMatrix<double> match_prob_forward(const DistanceMatrix& d, double theta);

// P_{B->A}(i | d^T, j) laid out as NA x NB: every column sums to one.
RowMatrix<double> match_prob_reverse(const DistanceMatrix& d, double theta);

// Elementwise product of the forward and reverse match probabilities.
RowMatrix<double> cycle_consistent_prob(const DistanceMatrix& d, double theta);

struct MatchDistributions {
  RowMatrix<double> forward;  // rows sum to one
  RowMatrix<double> reverse;  // columns sum to one
};

MatchDistributions match_distributions(const DistanceMatrix& d, double theta);

// For every row i: j ~ forward(i, :), then i' ~ reverse(:, j); (i, j) is a
// match when i' == i, with log_prob = log forward(i, j) + log reverse(i, j).
MatchSet sample_matches(const MatchDistributions& p, const DistanceMatrix& d,
                        std::mt19937_64& rng);

// (i, j) with j the row argmin and i the column argmin; ties go to the
// smaller index.
MatchSet mutual_nn_match(const DistanceMatrix& d);

// One "iA iB distance [label]" line per match.
void write_match_dump(std::ostream& out, const MatchSet& matches);
MatchSet read_match_dump(std::istream& in);

}  // namespace glfeat::matching
