#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace tscn {

using Labels = std::vector<std::uint32_t>;

// ---------------------------------------------------------------------------
// kNN accuracy
// ---------------------------------------------------------------------------

/// Fraction of test rows whose majority label among the k Euclidean-nearest
/// train rows matches their own. Distance ties go to the lower train index,
/// vote ties to the smaller class index.
template <typename T>
double knn_accuracy(const Matrix<T>& train, const Labels& ytrain, const Matrix<T>& test, const Labels& ytest,
                    std::size_t k, unsigned threads = 1) {
  if (train.rows() == 0 || test.rows() == 0) throw ValidationError("knn_accuracy: empty train or test set");
  if (train.rows() != ytrain.size() || test.rows() != ytest.size())
    throw ShapeError("knn_accuracy: label count does not match row count");
  if (train.cols() != test.cols())
    throw ShapeError("knn_accuracy: train rows have " + std::to_string(train.cols()) + " dims, test rows " +
                     std::to_string(test.cols()));
  if (k < 1 || k > train.rows())
    throw ValidationError("knn_accuracy: k = " + std::to_string(k) + " must be in [1, " +
                          std::to_string(train.rows()) + "]");
  const std::uint32_t classes = 1 + std::max(*std::max_element(ytrain.begin(), ytrain.end()),
                                             *std::max_element(ytest.begin(), ytest.end()));
  std::vector<char> correct(test.rows(), 0);
  parallel_for(test.rows(), threads, [&](std::size_t t) {
    std::vector<std::pair<T, std::size_t>> d(train.rows());
    for (std::size_t i = 0; i < train.rows(); ++i) {
      T s{0};
      for (std::size_t c = 0; c < train.cols(); ++c) {
        const T diff = train(i, c) - test(t, c);
        s += diff * diff;
      }
      d[i] = {s, i};
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> votes(classes, 0);
    for (std::size_t j = 0; j < k; ++j) ++votes[ytrain[d[j].second]];
    const auto winner = static_cast<std::uint32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    correct[t] = winner == ytest[t];
  });
  return static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / static_cast<double>(test.rows());
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeOptions {
  std::size_t iterations = 500;
  double step = 0.1;
  double grad_tol = 1e-6;
};

struct LinearModel {
  std::size_t classes = 0;
  std::vector<double> mean, scale;  // feature standardization (train statistics)
  Matrix<double> weights;           // classes x (features + 1), last column = bias
  std::size_t iterations_run = 0;

  std::uint32_t predict(std::span<const double> x) const {
    const std::size_t f = mean.size();
    std::uint32_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      double v = weights(c, f);
      for (std::size_t j = 0; j < f; ++j) v += weights(c, j) * (x[j] - mean[j]) * scale[j];
      if (v > best_v) {
        best_v = v;
        best = static_cast<std::uint32_t>(c);
      }
    }
    return best;
  }
};

/// Unregularized multinomial logistic regression on standardized features,
/// fitted by full-batch gradient descent on the mean softmax cross-entropy.
template <typename T>
LinearModel fit_logistic(const Matrix<T>& x, const Labels& y, std::size_t classes, const ProbeOptions& opt = {}) {
  const std::size_t n = x.rows(), f = x.cols();
  LinearModel m{classes, std::vector<double>(f, 0.0), std::vector<double>(f, 0.0), Matrix<double>(classes, f + 1), 0};
  for (std::size_t j = 0; j < f; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x(i, j);
    m.mean[j] = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x(i, j) - m.mean[j]) * (x(i, j) - m.mean[j]);
    const double sd = std::sqrt(v / static_cast<double>(n));
    m.scale[j] = sd > 1e-12 ? 1.0 / sd : 0.0;  // constant features carry no information
  }
  Matrix<double> xs(n, f + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) xs(i, j) = (x(i, j) - m.mean[j]) * m.scale[j];
    xs(i, f) = 1.0;
  }
  Matrix<double> grad(classes, f + 1);
  std::vector<double> p(classes);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes; ++c) {
        p[c] = kernels::dot(m.weights.row(c).data(), xs.row(i).data(), f + 1);
        mx = std::max(mx, p[c]);
      }
      double sum = 0.0;
      for (auto& v : p) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < classes; ++c) {
        const double r = p[c] / sum - (y[i] == c ? 1.0 : 0.0);
        double* g = grad.row(c).data();
        const double* xi = xs.row(i).data();
        for (std::size_t j = 0; j <= f; ++j) g[j] += r * xi[j];
      }
    }
    double gmax = 0.0;
    for (auto& g : grad.data()) gmax = std::max(gmax, std::abs(g /= static_cast<double>(n)));
    m.iterations_run = it + 1;
    if (gmax < opt.grad_tol) break;
    for (std::size_t i = 0; i < m.weights.size(); ++i) m.weights.data()[i] -= opt.step * grad.data()[i];
  }
  return m;
}

/// Test accuracy of a linear classifier fitted on (Htrain, ytrain).
template <typename T>
double linear_probe(const Matrix<T>& htrain, const Labels& ytrain, const Matrix<T>& htest, const Labels& ytest,
                    const ProbeOptions& opt = {}) {
  if (htrain.rows() == 0 || htest.rows() == 0) throw ValidationError("linear_probe: empty train or test set");
  if (htrain.rows() != ytrain.size() || htest.rows() != ytest.size())
    throw ShapeError("linear_probe: label count does not match row count");
  if (htrain.cols() != htest.cols()) throw ShapeError("linear_probe: train and test feature counts differ");
  if (std::all_of(ytrain.begin(), ytrain.end(), [&](auto v) { return v == ytrain.front(); }))
    throw ValidationError("linear_probe: training labels contain a single class");
  const std::size_t classes = 1 + std::max(*std::max_element(ytrain.begin(), ytrain.end()),
                                           *std::max_element(ytest.begin(), ytest.end()));
  const LinearModel model = fit_logistic(htrain, ytrain, classes, opt);
  std::size_t hits = 0;
  std::vector<double> row(htest.cols());
  for (std::size_t i = 0; i < htest.rows(); ++i) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = htest(i, j);
    hits += model.predict(row) == ytest[i];
  }
  return static_cast<double>(hits) / static_cast<double>(htest.rows());
}

// ---------------------------------------------------------------------------
// Spectrum and norms
// ---------------------------------------------------------------------------

/// Sample covariance (divisor n - 1) of the rows of z.
template <typename T>
Matrix<double> covariance(const Matrix<T>& z) {
  const std::size_t n = z.rows(), d = z.cols();
  if (n < 2) throw ValidationError("covariance: need at least 2 rows, got " + std::to_string(n));
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += z(i, c);
  for (auto& m : mean) m /= static_cast<double>(n);
  Matrix<double> centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) centered(i, c) = z(i, c) - mean[c];
  Matrix<double> cov(d, d);
  kernels::gemm_tn(centered.data().data(), centered.data().data(), cov.data().data(), d, n, d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      const double v = cov(a, b) / static_cast<double>(n - 1);
      cov(a, b) = cov(b, a) = v;
    }
  return cov;
}

/// Descending eigenvalues of the sample covariance. Round-off negatives are
/// clipped to zero.
template <typename T>
std::vector<double> covariance_spectrum(const Matrix<T>& z) {
  auto eig = sym_eig(covariance(z), 1e-10);
  for (auto& v : eig.values) v = std::max(v, 0.0);
  return eig.values;
}

/// Percentile with linear interpolation between closest ranks
/// (position q * (n - 1) in the sorted sample).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct NormQuartiles {
  std::uint32_t label = 0;
  std::size_t count = 0;
  double q25 = 0, q50 = 0, q75 = 0;
};

/// Quartiles of row L2 norms per class, ordered by class index.
template <typename T>
std::vector<NormQuartiles> class_norm_stats(const Matrix<T>& z, const Labels& labels) {
  if (labels.size() != z.rows()) throw ShapeError("class_norm_stats: label count does not match row count");
  std::map<std::uint32_t, std::vector<double>> norms;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (T v : z.row(i)) s += static_cast<double>(v) * static_cast<double>(v);
    norms[labels[i]].push_back(std::sqrt(s));
  }
  std::vector<NormQuartiles> out;
  for (const auto& [label, v] : norms)
    out.push_back({label, v.size(), percentile(v, 0.25), percentile(v, 0.5), percentile(v, 0.75)});
  return out;
}

// ---------------------------------------------------------------------------
// Clustering agreement
// ---------------------------------------------------------------------------

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double tol = 1e-8;  // stop when no centroid moves farther than this
};

/// Lloyd's algorithm with k-means++ seeding. Assignment ties go to the lower
/// cluster index; an emptied cluster keeps its previous centroid.
template <typename T>
Labels kmeans(const Matrix<T>& z, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  const std::size_t n = z.rows(), d = z.cols();
  if (k < 1 || k > n)
    throw ValidationError("kmeans: k = " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  RandomStream rng(seed, 0x6B6D);
  Matrix<double> centers(k, d);
  auto sq = [&](std::size_t i, const Matrix<double>& c, std::size_t j) {
    double s = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      const double diff = static_cast<double>(z(i, a)) - c(j, a);
      s += diff * diff;
    }
    return s;
  };
  auto set_center = [&](std::size_t j, std::size_t i) {
    for (std::size_t a = 0; a < d; ++a) centers(j, a) = z(i, a);
  };

  set_center(0, rng.below(n));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (dist[i] = std::min(dist[i], sq(i, centers, j - 1)));
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= dist[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    set_center(j, pick);
  }

  Labels assign(n, 0);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double s = sq(i, centers, j);
        if (s < best) {
          best = s;
          assign[i] = static_cast<std::uint32_t>(j);
        }
      }
    }
    Matrix<double> next(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t a = 0; a < d; ++a) next(assign[i], a) += z(i, a);
    }
    double moved = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double m = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        const double v = counts[j] ? next(j, a) / static_cast<double>(counts[j]) : centers(j, a);
        m += (v - centers(j, a)) * (v - centers(j, a));
        centers(j, a) = v;
      }
      moved = std::max(moved, std::sqrt(m));
    }
    if (moved < opt.tol) break;
  }
  return assign;
}

/// Adjusted Rand index from the contingency table:
/// (index - expected) / (max - expected). Returns 1 when both partitions are
/// trivial in the same way (denominator zero).
inline double adjusted_rand_index(const Labels& a, const Labels& b) {
  if (a.size() != b.size()) throw ShapeError("adjusted_rand_index: partitions have different lengths");
  const std::size_t n = a.size();
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> cells;
  std::map<std::uint32_t, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    cells[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& [key, v] : cells) index += c2(v);
  for (const auto& [key, v] : rows) sa += c2(v);
  for (const auto& [key, v] : cols) sb += c2(v);
  const double total = c2(static_cast<double>(n));
  const double expected = total > 0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalReport {
  std::map<std::size_t, double> knn_accuracy;  // by k
  double linear_accuracy = 0;
  double final_loss = 0;
  std::vector<double> spectrum;
  std::vector<NormQuartiles> norm_quartiles;
  double ari = 0;
};

} // namespace tscn
