#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cbx/core_types.hpp"

namespace cbx {

struct LinearFit {
  double intercept = 0.0;
  Eigen::VectorXd coef;
  double lambda = 0.0;

  double predict(std::span<const double> x) const;
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const { return intercept + coef.dot(x); }
};

// argmin ||y - b - X beta||^2 + lambda ||beta||^2. Without an intercept this
// is the closed form (X'X + lambda I)^{-1} X'y; with one, X and y are centered
// first and the intercept is left unpenalized.
LinearFit fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, bool intercept = true);

struct LassoOptions {
  bool intercept = true;
  double tolerance = 1e-13;  // relative change in the objective scale
  double kkt_tolerance = 1e-9;  // absolute subgradient residual required to stop
  int max_sweeps = 100000;
};

// Coordinate descent on sum_t (y_t - b - x_t' beta)^2 + lambda sum_j |beta_j|
// with an unpenalized intercept b (when enabled). Deterministic given input
// order.
LinearFit fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                    const LassoOptions& options = {});

// Same objective from sufficient statistics: n, column sums, X'X, X'y.
// Used for bootstrap refits where the Gram matrix is cheaper than the rows.
struct GramStats {
  double n = 0.0;
  Eigen::VectorXd sum_x;
  Eigen::MatrixXd xtx;
  double sum_y = 0.0;
  Eigen::VectorXd xty;
  double yty = 0.0;

  explicit GramStats(int p = 0);
  void add(const Eigen::Ref<const Eigen::VectorXd>& x, double y, double weight = 1.0);
  static GramStats from_rows(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
};

LinearFit fit_lasso_gram(const GramStats& stats, double lambda, const LassoOptions& options = {},
                         const Eigen::VectorXd* warm_start = nullptr);

// Smallest lambda for which every coefficient is zero.
double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool intercept = true);

// K-fold CV over `grid_size` log-spaced values from lambda_max down to
// lambda_max * min_ratio; folds are contiguous blocks in input order.
double select_lasso_lambda_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int folds = 5,
                              int grid_size = 20, double min_ratio = 1e-3);

struct CrossFitOptions {
  int subset_size = 50;
  // Fixed ridge penalty on standardized features; nullopt selects it by
  // generalized cross-validation on the prior data.
  std::optional<double> ridge_lambda;
};

// Outcome models fit only on earlier subsets: rows in subset m are predicted
// by per-arm ridge fits on subsets 0..m-1 (subset 0 predicts 0).
class CrossFitMuHat {
 public:
  enum class Kind { Zero, Mean, Linear };
  struct ArmModel {
    Kind kind = Kind::Zero;
    double mean = 0.0;
    LinearFit fit;
  };

  int num_subsets() const noexcept { return static_cast<int>(models_.size()); }
  int subset_size() const noexcept { return subset_size_; }
  int subset_of(std::size_t row) const { return static_cast<int>(row / static_cast<std::size_t>(subset_size_)); }
  const ArmModel& model(int subset, ArmIndex arm) const { return models_.at(static_cast<std::size_t>(subset)).at(static_cast<std::size_t>(arm)); }

  double predict(std::size_t row, std::span<const double> x, ArmIndex arm) const;
  // n x |arms| predictions for the training rows.
  const Eigen::MatrixXd& predictions() const noexcept { return predictions_; }

 private:
  friend CrossFitMuHat fit_crossfit_mu(const Eigen::MatrixXd&, std::span<const ArmIndex>, const Eigen::VectorXd&,
                                       int, const CrossFitOptions&);
  int subset_size_ = 50;
  std::vector<std::vector<ArmModel>> models_;
  Eigen::MatrixXd predictions_;
};

CrossFitMuHat fit_crossfit_mu(const Eigen::MatrixXd& contexts, std::span<const ArmIndex> arms,
                              const Eigen::VectorXd& outcomes, int num_arms, const CrossFitOptions& options);

CrossFitMuHat fit_crossfit_mu(const ObservationLog& log, const CrossFitOptions& options);

}  // namespace cbx
