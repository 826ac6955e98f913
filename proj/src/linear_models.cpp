#include "cbx/linear_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cbx {

double LinearFit::predict(std::span<const double> x) const {
  if (static_cast<Eigen::Index>(x.size()) != coef.size()) throw std::invalid_argument("LinearFit: dimension mismatch");
  double v = intercept;
  for (Eigen::Index j = 0; j < coef.size(); ++j) v += coef(j) * x[static_cast<std::size_t>(j)];
  return v;
}

LinearFit fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, bool intercept) {
  if (X.rows() != y.size()) throw std::invalid_argument("fit_ridge: row mismatch");
  if (X.rows() == 0) throw std::invalid_argument("fit_ridge: no rows");
  if (!(lambda >= 0.0)) throw std::invalid_argument("fit_ridge: lambda must be >= 0");
  LinearFit fit;
  fit.lambda = lambda;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::RowVectorXd x_mean = Eigen::RowVectorXd::Zero(X.cols());
  double y_mean = 0.0;
  if (intercept) {
    x_mean = X.colwise().mean();
    y_mean = y.mean();
    const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
    A = Xc.transpose() * Xc;
    b = Xc.transpose() * (y.array() - y_mean).matrix();
  } else {
    A = X.transpose() * X;
    b = X.transpose() * y;
  }
  A.diagonal().array() += lambda;
  fit.coef = lambda > 0.0 ? Eigen::VectorXd(A.ldlt().solve(b)) : Eigen::VectorXd(A.completeOrthogonalDecomposition().solve(b));
  fit.intercept = intercept ? y_mean - x_mean.dot(fit.coef) : 0.0;
  return fit;
}

GramStats::GramStats(int p)
    : sum_x(Eigen::VectorXd::Zero(p)), xtx(Eigen::MatrixXd::Zero(p, p)), xty(Eigen::VectorXd::Zero(p)) {}

void GramStats::add(const Eigen::Ref<const Eigen::VectorXd>& x, double y, double weight) {
  n += weight;
  sum_x += weight * x;
  xtx.selfadjointView<Eigen::Lower>().rankUpdate(x, weight);
  sum_y += weight * y;
  xty += (weight * y) * x;
  yty += weight * y * y;
}

GramStats GramStats::from_rows(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  GramStats s(static_cast<int>(X.cols()));
  s.n = static_cast<double>(X.rows());
  s.sum_x = X.colwise().sum().transpose();
  s.xtx.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  s.sum_y = y.sum();
  s.xty = X.transpose() * y;
  s.yty = y.squaredNorm();
  return s;
}

namespace {

// Centered (or raw) normal equations for the lasso objective.
struct Normal {
  Eigen::MatrixXd C;
  Eigen::VectorXd c;
  double yy = 0.0;
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
};

Normal normal_equations(const GramStats& s, bool intercept) {
  Normal ne;
  const Eigen::MatrixXd full = s.xtx.selfadjointView<Eigen::Lower>();
  if (intercept && s.n > 0.0) {
    ne.x_mean = s.sum_x / s.n;
    ne.y_mean = s.sum_y / s.n;
    ne.C = full - s.n * ne.x_mean * ne.x_mean.transpose();
    ne.c = s.xty - s.n * ne.y_mean * ne.x_mean;
    ne.yy = s.yty - s.n * ne.y_mean * ne.y_mean;
  } else {
    ne.x_mean = Eigen::VectorXd::Zero(s.sum_x.size());
    ne.C = full;
    ne.c = s.xty;
    ne.yy = s.yty;
  }
  return ne;
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

Eigen::VectorXd coordinate_descent(const Normal& ne, double lambda, const LassoOptions& opt,
                                   Eigen::VectorXd beta) {
  const Eigen::Index p = ne.c.size();
  // grad = c - C beta is half the negative gradient of the squared loss.
  Eigen::VectorXd grad = ne.c - ne.C * beta;
  const double scale = std::max({ne.yy, ne.C.diagonal().maxCoeff(), 1e-300});
  const double half_lambda = 0.5 * lambda;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double cjj = ne.C(j, j);
      if (!(cjj > 1e-12 * scale)) {
        if (beta(j) != 0.0) {
          grad += ne.C.col(j) * beta(j);
          beta(j) = 0.0;
        }
        continue;
      }
      const double rho = grad(j) + cjj * beta(j);
      const double updated = soft_threshold(rho, half_lambda) / cjj;
      const double delta = updated - beta(j);
      if (delta != 0.0) {
        grad -= ne.C.col(j) * delta;
        beta(j) = updated;
        max_change = std::max(max_change, cjj * delta * delta);
      }
    }
    if (max_change > opt.tolerance * scale) continue;
    // stationarity of the subgradient, in units of the objective's gradient
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!(ne.C(j, j) > 1e-12 * scale)) continue;
      const double g = 2.0 * grad(j);
      worst = std::max(worst, beta(j) == 0.0 ? std::abs(g) - lambda
                                             : std::abs(g - (beta(j) > 0.0 ? lambda : -lambda)));
    }
    if (worst <= opt.kkt_tolerance) break;
  }
  return beta;
}

}  // namespace

LinearFit fit_lasso_gram(const GramStats& stats, double lambda, const LassoOptions& options,
                         const Eigen::VectorXd* warm_start) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("fit_lasso: lambda must be >= 0");
  if (stats.n <= 0.0) throw std::invalid_argument("fit_lasso: no rows");
  const Normal ne = normal_equations(stats, options.intercept);
  Eigen::VectorXd start = warm_start ? *warm_start : Eigen::VectorXd::Zero(ne.c.size());
  LinearFit fit;
  fit.lambda = lambda;
  fit.coef = coordinate_descent(ne, lambda, options, std::move(start));
  fit.intercept = options.intercept ? ne.y_mean - ne.x_mean.dot(fit.coef) : 0.0;
  return fit;
}

LinearFit fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, const LassoOptions& options) {
  if (X.rows() != y.size()) throw std::invalid_argument("fit_lasso: row mismatch");
  if (X.rows() == 0) throw std::invalid_argument("fit_lasso: need at least one row");
  if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("fit_lasso: non-finite input");
  return fit_lasso_gram(GramStats::from_rows(X, y), lambda, options);
}

double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool intercept) {
  const Normal ne = normal_equations(GramStats::from_rows(X, y), intercept);
  return ne.c.size() == 0 ? 0.0 : 2.0 * ne.c.cwiseAbs().maxCoeff();
}

double select_lasso_lambda_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int folds, int grid_size,
                              double min_ratio) {
  const Eigen::Index n = X.rows();
  if (folds < 2 || n < folds) throw std::invalid_argument("select_lasso_lambda_cv: need at least `folds` rows");
  const double lmax = lasso_lambda_max(X, y, true);
  if (!(lmax > 0.0)) return 0.0;
  std::vector<double> grid(static_cast<std::size_t>(grid_size));
  for (int i = 0; i < grid_size; ++i)
    grid[static_cast<std::size_t>(i)] =
        lmax * std::pow(min_ratio, grid_size == 1 ? 0.0 : static_cast<double>(i) / (grid_size - 1));

  const GramStats total = GramStats::from_rows(X, y);
  std::vector<double> sse(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    const Eigen::Index begin = f * n / folds;
    const Eigen::Index end = (f + 1) * n / folds;
    GramStats held = GramStats::from_rows(X.middleRows(begin, end - begin), y.segment(begin, end - begin));
    GramStats train = total;
    train.n -= held.n;
    train.sum_x -= held.sum_x;
    train.xtx -= held.xtx;
    train.sum_y -= held.sum_y;
    train.xty -= held.xty;
    train.yty -= held.yty;
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(X.cols());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      LinearFit fit = fit_lasso_gram(train, grid[g], LassoOptions{.tolerance = 1e-10}, &warm);
      warm = fit.coef;
      const Eigen::VectorXd resid =
          (y.segment(begin, end - begin).array() - fit.intercept).matrix() - X.middleRows(begin, end - begin) * fit.coef;
      sse[g] += resid.squaredNorm();
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (sse[g] < sse[best]) best = g;
  return grid[best];
}

namespace {

// Ridge on standardized features from sufficient statistics; the penalty is
// fixed or picked by generalized cross-validation.
LinearFit ridge_from_stats(const GramStats& s, std::optional<double> fixed_lambda) {
  const Normal ne = normal_equations(s, true);
  const Eigen::Index p = ne.c.size();
  LinearFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  std::vector<Eigen::Index> active;
  Eigen::VectorXd sd(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    sd(j) = std::sqrt(std::max(ne.C(j, j), 0.0) / s.n);
    if (sd(j) > 1e-10) active.push_back(j);
  }
  const auto a = static_cast<Eigen::Index>(active.size());
  if (a == 0) {
    fit.intercept = ne.y_mean;
    fit.lambda = fixed_lambda.value_or(0.0);
    return fit;
  }
  Eigen::MatrixXd G(a, a);
  Eigen::VectorXd g(a);
  for (Eigen::Index i = 0; i < a; ++i) {
    g(i) = ne.c(active[i]) / sd(active[i]);
    for (Eigen::Index k = 0; k < a; ++k) G(i, k) = ne.C(active[i], active[k]) / (sd(active[i]) * sd(active[k]));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd z = eig.eigenvectors().transpose() * g;
  const double ev_tol = 1e-10 * std::max(ev.maxCoeff(), 1.0);

  double lambda = 0.0;
  if (fixed_lambda) {
    lambda = *fixed_lambda;
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 24; ++i) {
      const double cand = s.n * std::pow(10.0, -4.0 + 0.25 * i);
      double rss = ne.yy;
      double df = 1.0;
      for (Eigen::Index k = 0; k < a; ++k) {
        if (ev(k) <= ev_tol) continue;
        const double shrink = cand / (ev(k) + cand);
        rss -= z(k) * z(k) / ev(k) * (1.0 - shrink * shrink);
        df += ev(k) / (ev(k) + cand);
      }
      const double resid_df = s.n - df;
      if (resid_df <= 0.5) continue;
      const double gcv = s.n * std::max(rss, 0.0) / (resid_df * resid_df);
      if (gcv < best) {
        best = gcv;
        lambda = cand;
      }
    }
  }
  Eigen::VectorXd inv(a);
  for (Eigen::Index k = 0; k < a; ++k) {
    const double d = ev(k) + lambda;
    inv(k) = (ev(k) <= ev_tol && lambda <= 0.0) || d <= 0.0 ? 0.0 : 1.0 / d;
  }
  const Eigen::VectorXd beta_std = eig.eigenvectors() * inv.cwiseProduct(z);
  for (Eigen::Index i = 0; i < a; ++i) fit.coef(active[i]) = beta_std(i) / sd(active[i]);
  fit.intercept = ne.y_mean - ne.x_mean.dot(fit.coef);
  fit.lambda = lambda;
  return fit;
}

}  // namespace

double CrossFitMuHat::predict(std::size_t row, std::span<const double> x, ArmIndex arm) const {
  const int m = subset_of(row);
  if (m >= num_subsets()) throw std::out_of_range("CrossFitMuHat: row beyond fitted subsets");
  const auto& mdl = model(m, arm);
  switch (mdl.kind) {
    case Kind::Zero: return 0.0;
    case Kind::Mean: return mdl.mean;
    case Kind::Linear: return mdl.fit.predict(x);
  }
  return 0.0;
}

CrossFitMuHat fit_crossfit_mu(const Eigen::MatrixXd& contexts, std::span<const ArmIndex> arms,
                              const Eigen::VectorXd& outcomes, int num_arms, const CrossFitOptions& options) {
  if (options.subset_size < 1) throw std::invalid_argument("fit_crossfit_mu: subset_size must be >= 1");
  const Eigen::Index n = contexts.rows();
  const int p = static_cast<int>(contexts.cols());
  if (static_cast<Eigen::Index>(arms.size()) != n || outcomes.size() != n)
    throw std::invalid_argument("fit_crossfit_mu: row mismatch");

  CrossFitMuHat out;
  out.subset_size_ = options.subset_size;
  const int subsets = static_cast<int>((n + options.subset_size - 1) / options.subset_size);
  out.models_.resize(static_cast<std::size_t>(subsets));
  out.predictions_.resize(n, num_arms);

  std::vector<GramStats> stats(static_cast<std::size_t>(num_arms), GramStats(p));
  for (int m = 0; m < subsets; ++m) {
    auto& models = out.models_[static_cast<std::size_t>(m)];
    models.resize(static_cast<std::size_t>(num_arms));
    for (int w = 0; w < num_arms; ++w) {
      const auto& s = stats[static_cast<std::size_t>(w)];
      auto& mdl = models[static_cast<std::size_t>(w)];
      if (s.n <= 0.0) {
        mdl.kind = CrossFitMuHat::Kind::Zero;
      } else if (s.n < p + 1) {
        mdl.kind = CrossFitMuHat::Kind::Mean;
        mdl.mean = s.sum_y / s.n;
      } else {
        mdl.kind = CrossFitMuHat::Kind::Linear;
        mdl.fit = ridge_from_stats(s, options.ridge_lambda);
      }
    }
    const Eigen::Index begin = static_cast<Eigen::Index>(m) * options.subset_size;
    const Eigen::Index end = std::min<Eigen::Index>(n, begin + options.subset_size);
    for (Eigen::Index i = begin; i < end; ++i) {
      const Eigen::VectorXd x = contexts.row(i).transpose();
      for (int w = 0; w < num_arms; ++w) {
        const auto& mdl = models[static_cast<std::size_t>(w)];
        double v = 0.0;
        if (mdl.kind == CrossFitMuHat::Kind::Mean) v = mdl.mean;
        if (mdl.kind == CrossFitMuHat::Kind::Linear) v = mdl.fit.predict(x);
        out.predictions_(i, w) = v;
      }
    }
    for (Eigen::Index i = begin; i < end; ++i) {
      const ArmIndex w = arms[static_cast<std::size_t>(i)];
      if (w < 0 || w >= num_arms) continue;  // rows of arms outside the modelled set
      stats[static_cast<std::size_t>(w)].add(contexts.row(i).transpose(), outcomes(i));
    }
  }
  return out;
}

CrossFitMuHat fit_crossfit_mu(const ObservationLog& log, const CrossFitOptions& options) {
  const auto arms = log.arm_column();
  return fit_crossfit_mu(log.contexts(), arms, log.outcomes(), log.arms().size(), options);
}

}  // namespace cbx
