#pragma once

// Observability of an SLTIS: the unobservable subspace is the largest subspace
// contained in ker(C) and invariant under A and every An_j. It is found by
// saturating the row space of C * w over words w in the alphabet {A, An_1, ...}.

#include <cstddef>
#include <deque>
#include <vector>

#include "sphs/matrix_kernel.hpp"
#include "sphs/system_model.hpp"

namespace sphs {

struct ObservabilityOptions {
  /// Maximal word length; negative means d - 1.
  int max_word_length = -1;
  std::size_t word_cap = 100000;
};

struct ObservabilityMatrix {
  /// Stacked observability matrix, transposed: columns C^T, (C w)^T, ...
  Matrix columns;
  Eigen::Index rank = 0;
  /// Smallest retained singular value (distance to a rank drop).
  double margin = 0.0;
  /// Longest word length explored before saturation or the length limit.
  int iterations = 0;
  std::size_t words_examined = 0;
};

struct ObservabilityReport {
  bool observable = false;
  Eigen::Index unobservable_dim = 0;
  /// Orthonormal basis, one vector per column.
  Matrix unobservable_basis;
  int iterations = 0;
  Eigen::Index rank = 0;
  double margin = 0.0;
};

namespace detail {

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), bottom.cols());
  if (top.rows() > 0) out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace detail

/// Rows C w for words w up to the given length, keeping a word (and extending
/// it further) only when it raises the rank of the stacked matrix. Words that
/// add nothing cannot contribute through extensions either, since
/// row(C w a) lies in row(C w) a.
inline ObservabilityMatrix observability_matrix(const SLTIS& sys, const ObservabilityOptions& opts = {},
                                                const TolerancePolicy& tol = {}) {
  const Eigen::Index d = sys.state_dim();
  const int max_len = opts.max_word_length < 0 ? static_cast<int>(d) - 1 : opts.max_word_length;
  std::vector<const Matrix*> alphabet{&sys.A()};
  for (const auto& an : sys.noise_state()) alphabet.push_back(&an);

  ObservabilityMatrix out;
  Matrix stacked(0, d);
  auto try_add = [&](const Matrix& rows) {
    if (rows.rows() == 0) return false;
    Matrix candidate = detail::stack_rows(stacked, rows);
    const Eigen::Index r = rank_svd(candidate, tol);
    if (r <= out.rank) return false;
    stacked = std::move(candidate);
    out.rank = r;
    return true;
  };

  std::vector<Matrix> frontier;
  ++out.words_examined;
  if (try_add(sys.C())) frontier.push_back(sys.C());
  int length = 0;
  while (!frontier.empty() && length < max_len && out.rank < d) {
    ++length;
    std::vector<Matrix> next;
    for (const auto& prefix : frontier) {
      for (const Matrix* letter : alphabet) {
        if (++out.words_examined > opts.word_cap) {
          throw ResourceLimit("observability word count exceeded the cap of " + std::to_string(opts.word_cap));
        }
        Matrix rows = prefix * (*letter);
        if (try_add(rows)) next.push_back(std::move(rows));
      }
    }
    frontier = std::move(next);
  }
  out.iterations = length;
  out.columns = stacked.transpose();
  out.margin = rank_info(stacked, tol).smallest_retained;
  return out;
}

inline ObservabilityReport unobservable_subspace(const SLTIS& sys, const ObservabilityOptions& opts = {},
                                                 const TolerancePolicy& tol = {}) {
  const auto om = observability_matrix(sys, opts, tol);
  ObservabilityReport report;
  const Matrix stacked = om.columns.transpose();
  report.unobservable_basis =
      stacked.rows() == 0 ? Matrix(Matrix::Identity(sys.state_dim(), sys.state_dim())) : kernel_basis(stacked, tol);
  report.unobservable_dim = report.unobservable_basis.cols();
  report.observable = report.unobservable_dim == 0;
  report.iterations = om.iterations;
  report.rank = om.rank;
  report.margin = om.margin;
  return report;
}

}  // namespace sphs
