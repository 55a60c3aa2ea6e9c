#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fsda/tensor.hpp"

namespace fsda::nn {

/// Gradient buffers aligned index-for-index with a ParamStore.
template <typename S>
using Grads = std::vector<Mat<S>>;

/// Named parameter arrays. Layers keep indices into the store so forward passes can run
/// concurrently against one const store while each worker owns its gradient buffer.
template <typename S>
class ParamStore {
 public:
  int add(std::string name, Mat<S> value) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[i]; }
  const Mat<S>& value(int i) const { return values_[i]; }
  Mat<S>& value(int i) { return values_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<int> find(const std::string& name) const {
    for (int i = 0; i < size(); ++i) {
      if (names_[i] == name) return i;
    }
    return std::nullopt;
  }

  Grads<S> zero_grads() const {
    Grads<S> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.push_back(Mat<S>::Zero(v.rows(), v.cols()));
    return g;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  /// FNV-1a over the raw bytes of every parameter whose name starts with `prefix`.
  std::uint64_t hash(const std::string& prefix = "") const {
    std::uint64_t h = 1469598103934665603ULL;
    for (int i = 0; i < size(); ++i) {
      if (names_[i].rfind(prefix, 0) != 0) continue;
      const auto* bytes = reinterpret_cast<const unsigned char*>(values_[i].data());
      for (std::size_t b = 0; b < sizeof(S) * static_cast<std::size_t>(values_[i].size()); ++b) {
        h = (h ^ bytes[b]) * 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
};

template <typename S>
void add_into(Grads<S>& acc, const Grads<S>& g, S scale = S(1)) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * g[i];
}

template <typename S>
void zero(Grads<S>& g) {
  for (auto& m : g) m.setZero();
}

enum class Init { Zero, HeNormal, LeCunNormal, Normal002 };

template <typename S>
Mat<S> init_weights(int rows, int cols, int fan_in, Init init, std::mt19937_64& rng) {
  double std = 0.0;
  switch (init) {
    case Init::Zero:
      return Mat<S>::Zero(rows, cols);
    case Init::HeNormal:
      std = std::sqrt(2.0 / fan_in);
      break;
    case Init::LeCunNormal:
      std = std::sqrt(1.0 / fan_in);
      break;
    case Init::Normal002:
      std = 0.02;
      break;
  }
  std::normal_distribution<double> dist(0.0, std);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

}  // namespace fsda::nn
