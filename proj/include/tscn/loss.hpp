#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"

namespace tscn {

enum class KernelKind { Cosine, Gaussian, Cauchy };

/// Similarity kernel. Cosine uses exp(cos(z_i, z_k) / tau), Gaussian uses
/// exp(-|z_i - z_k|^2 / (2 tau)) on the rows as given, Cauchy uses
/// 1 / (1 + |z_i - z_k|^2) and ignores tau.
struct KernelSpec {
  KernelKind kind = KernelKind::Cauchy;
  double tau = 0.5;

  static KernelSpec cosine(double tau = 0.5) { return {KernelKind::Cosine, tau}; }
  static KernelSpec gaussian(double tau = 0.5) { return {KernelKind::Gaussian, tau}; }
  static KernelSpec cauchy() { return {KernelKind::Cauchy, 0.0}; }

  void validate() const {
    if (kind != KernelKind::Cauchy && !(tau > 0.0))
      throw ValidationError("KernelSpec: temperature must be positive, got " + std::to_string(tau));
  }

  friend bool operator==(const KernelSpec& a, const KernelSpec& b) {
    return a.kind == b.kind && (a.kind == KernelKind::Cauchy || a.tau == b.tau);
  }
};

inline std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::Cosine: return "cosine";
    case KernelKind::Gaussian: return "gaussian";
    case KernelKind::Cauchy: return "cauchy";
  }
  return "?";
}

inline KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "cosine") return KernelKind::Cosine;
  if (s == "gaussian") return KernelKind::Gaussian;
  if (s == "cauchy" || s == "euclidean") return KernelKind::Cauchy;
  throw ValidationError("unknown kernel '" + s + "' (expected cosine, gaussian or cauchy)");
}

/// Row index of the other view of the same source image.
constexpr std::size_t partner(std::size_t i) noexcept { return i ^ std::size_t{1}; }

/// 2b x d embedding of a batch; rows 2m and 2m+1 are the two views of image m.
template <typename T>
class PairedEmbedding {
public:
  explicit PairedEmbedding(Matrix<T> z) : z_(std::move(z)) {
    if (z_.rows() < 2 || z_.rows() % 2 != 0)
      throw ValidationError("PairedEmbedding: need an even number (>= 2) of rows, got " +
                            std::to_string(z_.rows()));
    for (std::size_t i = 0; i < z_.size(); ++i)
      if (!std::isfinite(z_.data()[i]))
        throw ValidationError("PairedEmbedding: non-finite entry in row " + std::to_string(i / z_.cols()));
  }

  const Matrix<T>& z() const noexcept { return z_; }
  std::size_t batch() const noexcept { return z_.rows() / 2; }

private:
  Matrix<T> z_;
};

template <typename T>
Matrix<T> pairwise_sq_dists(const Matrix<T>& z) {
  const std::size_t n = z.rows(), d = z.cols();
  Matrix<T> out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      T s{0};
      for (std::size_t c = 0; c < d; ++c) {
        const T diff = z(i, c) - z(j, c);
        s += diff * diff;
      }
      out(i, j) = out(j, i) = s;
    }
  }
  return out;
}

namespace detail {

template <typename T>
std::vector<T> row_norms(const Matrix<T>& z) {
  std::vector<T> norms(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    T s{0};
    for (T v : z.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (!(norms[i] > T{0}))
      throw ValidationError("cosine similarity: row " + std::to_string(i) + " has zero norm");
  }
  return norms;
}

} // namespace detail

template <typename T>
Matrix<T> cosine_sim_matrix(const Matrix<T>& z) {
  const auto norms = detail::row_norms(z);
  const std::size_t n = z.rows();
  Matrix<T> out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = T{1};
    for (std::size_t j = i + 1; j < n; ++j) {
      T s = kernels::dot(z.row(i).data(), z.row(j).data(), z.cols()) / (norms[i] * norms[j]);
      s = std::clamp(s, T{-1}, T{1});
      out(i, j) = out(j, i) = s;
    }
  }
  return out;
}

namespace detail {

/// Logits s_ik for the exponential kernels (diagonal unused).
template <typename T>
Matrix<T> logits(const Matrix<T>& z, const KernelSpec& k) {
  const T tau = static_cast<T>(k.tau);
  if (k.kind == KernelKind::Cosine) {
    Matrix<T> s = cosine_sim_matrix(z);
    for (auto& v : s.data()) v /= tau;
    return s;
  }
  Matrix<T> s = pairwise_sq_dists(z);
  for (auto& v : s.data()) v = -v / (T{2} * tau);
  return s;
}

/// Loss and dL/ds for the exponential kernels. G has zero diagonal.
template <typename T>
T logit_loss(const Matrix<T>& s, Matrix<T>* g) {
  const std::size_t n = s.rows();
  const T inv_n = T{1} / static_cast<T>(n);
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, s(i, k));
    T sum{0};
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) sum += std::exp(s(i, k) - mx);
    total += -s(i, partner(i)) + mx + std::log(sum);
    if (g) {
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        const T p = std::exp(s(i, k) - mx) / sum;
        (*g)(i, k) = inv_n * (p - (k == partner(i) ? T{1} : T{0}));
      }
    }
  }
  return total * inv_n;
}

/// Cauchy loss and dL/d(d^2_ik) (zero diagonal).
template <typename T>
T cauchy_loss(const Matrix<T>& d2, Matrix<T>* w) {
  const std::size_t n = d2.rows();
  const T inv_n = T{1} / static_cast<T>(n);
  T total{0};
  std::vector<T> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    T sum{0};
    for (std::size_t k = 0; k < n; ++k) {
      q[k] = k == i ? T{0} : T{1} / (T{1} + d2(i, k));
      sum += q[k];
    }
    total += std::log1p(d2(i, partner(i))) + std::log(sum);
    if (w) {
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        (*w)(i, k) = inv_n * ((k == partner(i) ? q[k] : T{0}) - q[k] * q[k] / sum);
      }
    }
  }
  return total * inv_n;
}

} // namespace detail

/// Batch InfoNCE loss: mean over all 2b anchors of
/// -log( k(i, partner(i)) / sum_{k != i} k(i, k) ).
template <typename T>
T infonce_loss(const PairedEmbedding<T>& pe, const KernelSpec& k) {
  k.validate();
  if (k.kind == KernelKind::Cauchy) return detail::cauchy_loss<T>(pairwise_sq_dists(pe.z()), nullptr);
  return detail::logit_loss<T>(detail::logits(pe.z(), k), nullptr);
}

template <typename T>
struct LossAndGrad {
  T loss;
  Matrix<T> grad;  // 2b x d
};

/// Loss together with its exact gradient with respect to z.
template <typename T>
LossAndGrad<T> infonce_loss_and_grad(const PairedEmbedding<T>& pe, const KernelSpec& k) {
  k.validate();
  const Matrix<T>& z = pe.z();
  const std::size_t n = z.rows(), d = z.cols();
  Matrix<T> grad(n, d);
  Matrix<T> coef(n, n);  // dL/d(pairwise quantity), zero diagonal
  T loss{};

  if (k.kind == KernelKind::Cauchy) {
    loss = detail::cauchy_loss(pairwise_sq_dists(z), &coef);
    // d(d2_ik)/dz_i = 2 (z_i - z_k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const T m = T{2} * (coef(i, j) + coef(j, i));
        for (std::size_t c = 0; c < d; ++c) grad(i, c) += m * (z(i, c) - z(j, c));
      }
    return {loss, std::move(grad)};
  }

  const T tau = static_cast<T>(k.tau);
  loss = detail::logit_loss(detail::logits(z, k), &coef);

  if (k.kind == KernelKind::Gaussian) {
    // s_ik = -|z_i - z_k|^2 / (2 tau)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const T m = -(coef(i, j) + coef(j, i)) / tau;
        for (std::size_t c = 0; c < d; ++c) grad(i, c) += m * (z(i, c) - z(j, c));
      }
    return {loss, std::move(grad)};
  }

  // Cosine: s_ik = u_i.u_k / tau with u = z / |z|
  const auto norms = detail::row_norms(z);
  std::vector<T> du(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(du.begin(), du.end(), T{0});
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const T m = (coef(i, j) + coef(j, i)) / (tau * norms[j]);
      for (std::size_t c = 0; c < d; ++c) du[c] += m * z(j, c);
    }
    // project out the radial component: (I - u u^T) du / |z_i|
    T radial{0};
    for (std::size_t c = 0; c < d; ++c) radial += du[c] * z(i, c) / norms[i];
    for (std::size_t c = 0; c < d; ++c) grad(i, c) = (du[c] - radial * z(i, c) / norms[i]) / norms[i];
  }
  return {loss, std::move(grad)};
}

template <typename T>
Matrix<T> infonce_grad(const PairedEmbedding<T>& pe, const KernelSpec& k) {
  return infonce_loss_and_grad(pe, k).grad;
}

/// Lower bound of the cosine loss for batch size b:
/// -1/tau + log(exp(1/tau) + (2b - 2) exp(-1/tau)).
inline double loss_lower_bound(std::size_t b, double tau) {
  if (b < 1) throw ValidationError("loss_lower_bound: batch size must be >= 1");
  if (!(tau > 0.0)) throw ValidationError("loss_lower_bound: tau must be positive");
  const double n_neg = 2.0 * static_cast<double>(b) - 2.0;
  // log(e^{1/tau} + n e^{-1/tau}) - 1/tau == log1p(n e^{-2/tau})
  return std::log1p(n_neg * std::exp(-2.0 / tau));
}

} // namespace tscn
