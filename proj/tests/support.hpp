#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "fsda/config.hpp"
#include "fsda/nn/params.hpp"

namespace fsda::test {

/// Directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fsda") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Central-difference derivative of f wrt *x.
inline double numeric_derivative(double* x, const std::function<double()>& f, double h = 1e-6) {
  const double saved = *x;
  *x = saved + h;
  const double fp = f();
  *x = saved - h;
  const double fm = f();
  *x = saved;
  return (fp - fm) / (2 * h);
}

/// |a - n| / max(|a|, |n|), with a floor so that two tiny values compare equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

template <typename Derived>
void fill_uniform(Eigen::DenseBase<Derived>& m, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.derived().data()[i] = static_cast<typename Derived::Scalar>(u(rng));
}

/// Largest relative error between analytic parameter gradients and central differences of
/// `loss`, probing up to `per_param` random entries of every parameter matching `prefix`.
inline double max_param_grad_error(nn::ParamStore<double>& store, const nn::Grads<double>& grads,
                                   const std::function<double()>& loss, std::mt19937_64& rng, int per_param = 4,
                                   const std::string& prefix = "") {
  double worst = 0.0;
  for (int i = 0; i < store.size(); ++i) {
    if (store.name(i).rfind(prefix, 0) != 0) continue;
    Mat<double>& v = store.value(i);
    const int n = static_cast<int>(v.size());
    for (int k = 0; k < std::min(per_param, n); ++k) {
      const int idx = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
      const double num = numeric_derivative(v.data() + idx, loss);
      worst = std::max(worst, relative_error(grads[i].data()[idx], num, 1e-6));
    }
  }
  return worst;
}

/// Same check for the gradient of `loss` with respect to a tensor input.
inline double max_input_grad_error(Tensor<double>& x, const Tensor<double>& dx, const std::function<double()>& loss,
                                   std::mt19937_64& rng, int probes = 12) {
  double worst = 0.0;
  const int n = static_cast<int>(x.data.size());
  for (int k = 0; k < std::min(probes, n); ++k) {
    const int idx = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    const double num = numeric_derivative(x.data.data() + idx, loss);
    worst = std::max(worst, relative_error(dx.data.data()[idx], num, 1e-6));
  }
  return worst;
}

inline Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  Tensor<double> t(c, h, w);
  fill_uniform(t.data, rng);
  return t;
}

/// A network small enough for double-precision finite differences.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.widths = {4, 6, 6};
  c.encoder.strides = {1, 2, 2};
  c.encoder.reduced_channels = 5;
  c.discriminator.ladder = {4, 4};
  c.head_channels = 6;
  return c;
}

}  // namespace fsda::test
