#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace nbglarma {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexSet = std::vector<int>;

/// Inconsistent dimensions, invalid option values, rank-deficient designs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite intermediate quantities; usually divergent parameters.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Observed counts Y_1..Y_n.
class CountSeries {
 public:
  CountSeries() = default;

  explicit CountSeries(std::vector<std::int64_t> counts) : counts_(std::move(counts)) {
    if (counts_.empty()) throw ConfigError("CountSeries: series must contain at least one count");
    values_.resize(static_cast<Eigen::Index>(counts_.size()));
    for (std::size_t t = 0; t < counts_.size(); ++t) {
      if (counts_[t] < 0) {
        throw ConfigError("CountSeries: negative count at t=" + std::to_string(t + 1));
      }
      values_[static_cast<Eigen::Index>(t)] = static_cast<double>(counts_[t]);
    }
  }

  [[nodiscard]] Eigen::Index size() const noexcept { return values_.size(); }
  [[nodiscard]] std::int64_t operator[](Eigen::Index t) const { return counts_[static_cast<std::size_t>(t)]; }
  [[nodiscard]] const std::vector<std::int64_t>& counts() const noexcept { return counts_; }
  /// Same counts as doubles, for the likelihood arithmetic.
  [[nodiscard]] const Vector& values() const noexcept { return values_; }

 private:
  std::vector<std::int64_t> counts_;
  Vector values_;
};

/// n x (p+1) covariates, column 0 identically one.
class DesignMatrix {
 public:
  DesignMatrix() = default;

  explicit DesignMatrix(Matrix x) : x_(std::move(x)) {
    if (x_.rows() < 1 || x_.cols() < 1) throw ConfigError("DesignMatrix: empty matrix");
    for (Eigen::Index t = 0; t < x_.rows(); ++t) {
      if (x_(t, 0) != 1.0) {
        throw ConfigError("DesignMatrix: column 0 must be the intercept (1.0), row " + std::to_string(t + 1));
      }
    }
    if (!x_.allFinite()) throw ConfigError("DesignMatrix: non-finite covariate value");
  }

  /// Prepends the intercept column to an n x p covariate block.
  static DesignMatrix with_intercept(const Matrix& covariates) {
    Matrix x(covariates.rows(), covariates.cols() + 1);
    x.col(0).setOnes();
    x.rightCols(covariates.cols()) = covariates;
    return DesignMatrix(std::move(x));
  }

  [[nodiscard]] Eigen::Index rows() const noexcept { return x_.rows(); }
  [[nodiscard]] Eigen::Index cols() const noexcept { return x_.cols(); }
  /// Number of covariates excluding the intercept.
  [[nodiscard]] Eigen::Index p() const noexcept { return x_.cols() - 1; }
  [[nodiscard]] const Matrix& matrix() const noexcept { return x_; }
  [[nodiscard]] auto row(Eigen::Index t) const { return x_.row(t); }

  /// Keeps the listed columns (in the given order).
  [[nodiscard]] DesignMatrix select_columns(const IndexSet& columns) const {
    Matrix out(x_.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t k = 0; k < columns.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = x_.col(columns[k]);
    return DesignMatrix(std::move(out));
  }

 private:
  Matrix x_;
};

/// beta (p+1), gamma (q >= 1) and the overdispersion alpha > 0.
struct GlarmaParams {
  Vector beta;
  Vector gamma;
  double alpha = 1.0;

  [[nodiscard]] Eigen::Index q() const noexcept { return gamma.size(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return beta.size() + gamma.size(); }

  /// Stacked delta = (beta', gamma').
  [[nodiscard]] Vector delta() const {
    Vector d(dim());
    d << beta, gamma;
    return d;
  }

  [[nodiscard]] static GlarmaParams from_delta(const Vector& delta, Eigen::Index q, double alpha) {
    GlarmaParams out;
    out.beta = delta.head(delta.size() - q);
    out.gamma = delta.tail(q);
    out.alpha = alpha;
    return out;
  }
};

/// Per-t linear predictor, score-type residuals and means.
struct GlarmaState {
  Vector w;
  Vector e;
  Vector mu;
};

inline void check_dimensions(const GlarmaParams& params, const CountSeries& y, const DesignMatrix& x) {
  if (y.size() != x.rows()) {
    throw ConfigError("dimension mismatch: " + std::to_string(y.size()) + " counts vs " +
                      std::to_string(x.rows()) + " design rows");
  }
  if (params.beta.size() != x.cols()) {
    throw ConfigError("dimension mismatch: beta has " + std::to_string(params.beta.size()) +
                      " entries, design has " + std::to_string(x.cols()) + " columns");
  }
  if (params.gamma.size() < 1) throw ConfigError("gamma must have at least one component (q >= 1)");
  if (!(params.alpha > 0.0) || !std::isfinite(params.alpha)) {
    throw ConfigError("alpha must be a positive finite number");
  }
}

}  // namespace nbglarma
