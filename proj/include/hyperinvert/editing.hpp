#pragma once

#include <string>
#include <vector>

#include "hyperinvert/generator.hpp"
#include "hyperinvert/inversion.hpp"
#include "hyperinvert/modulation.hpp"

#ifdef HYPERINVERT_HAVE_EIGEN
#include <Eigen/Dense>
#endif

namespace hyperinvert {

template <class T>
struct EditDirection {
  std::string name;
  Tensor<T> vector;  // [latent_dim], unit norm
};

template <class T>
void validate_direction(const EditDirection<T>& d) {
  check_shape(d.vector.shape().size() == 1, "direction must be a vector");
  double nrm = 0;
  for (int64_t i = 0; i < d.vector.size(); ++i)
    nrm += static_cast<double>(d.vector[i]) * static_cast<double>(d.vector[i]);
  nrm = std::sqrt(nrm);
  check_shape(std::abs(nrm - 1.0) <= 1e-6, "direction " + d.name + " is not unit norm");
}

template <class T>
EditDirection<T> make_direction(std::string name, Tensor<T> v) {
  check_shape(v.shape().size() == 1, "direction must be a vector");
  double nrm = 0;
  for (int64_t i = 0; i < v.size(); ++i)
    nrm += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  nrm = std::sqrt(nrm);
  check_shape(nrm > 0, "direction must be nonzero");
  for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(static_cast<double>(v[i]) / nrm);
  return EditDirection<T>{std::move(name), std::move(v)};
}

// Synthesize with the latent shifted along a direction while keeping the
// offsets predicted for the unedited image fixed.
template <class T>
Tensor<T> apply_edit(const InversionResult<T>& result, const EditDirection<T>& dir, T strength,
                     Generator<T>& g) {
  validate_direction(dir);
  check_shape(dir.vector.shape()[0] == result.w.shape()[1],
              "direction length " + std::to_string(dir.vector.shape()[0]) +
                  " does not match latent dim " + std::to_string(result.w.shape()[1]));
  detail::InferenceGuard<T> gg(g);
  Tensor<T> w = result.w;
  int64_t n = w.shape()[0], d = w.shape()[1];
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) w[i * d + j] += strength * dir.vector[j];
  Var<T> wc = Var<T>::constant(std::move(w));
  if (result.offsets.empty()) return g.synthesize(wc).value();
  OffsetMap<T> offs = offsets_as_constants(result.offsets);
  return g.synthesize(wc, &offs).value();
}

template <class T>
struct PcaDirections {
  std::vector<EditDirection<T>> directions;
  std::vector<double> explained_variance;  // non-increasing
};

namespace detail {

// Symmetric eigendecomposition of the sample covariance; top n_components
// eigenpairs in descending eigenvalue order. Power iteration with deflation
// when Eigen is unavailable.
inline void top_eigenpairs(const std::vector<double>& cov, int64_t d, int64_t n_components,
                           std::vector<std::vector<double>>& vecs, std::vector<double>& vals) {
#ifdef HYPERINVERT_HAVE_EIGEN
  Eigen::MatrixXd C(d, d);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) C(i, j) = cov[static_cast<size_t>(i * d + j)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(C);
  check_config(solver.info() == Eigen::Success, "eigendecomposition failed");
  for (int64_t c = 0; c < n_components; ++c) {
    int64_t k = d - 1 - c;  // eigenvalues come back ascending
    vals.push_back(solver.eigenvalues()(k));
    std::vector<double> v(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(i)] = solver.eigenvectors()(i, k);
    vecs.push_back(std::move(v));
  }
#else
  std::vector<double> A = cov;
  Rng rng(0x70636131ULL);
  for (int64_t c = 0; c < n_components; ++c) {
    std::vector<double> v(static_cast<size_t>(d));
    for (auto& x : v) x = rng.normal();
    double lambda = 0;
    for (int iter = 0; iter < 1000; ++iter) {
      std::vector<double> av(static_cast<size_t>(d), 0.0);
      for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < d; ++j) av[i] += A[static_cast<size_t>(i * d + j)] * v[j];
      double nrm = 0;
      for (double x : av) nrm += x * x;
      nrm = std::sqrt(nrm);
      check_config(nrm > 1e-300, "power iteration collapsed");
      for (int64_t i = 0; i < d; ++i) av[i] /= nrm;
      double delta = 0;
      for (int64_t i = 0; i < d; ++i) delta = std::max(delta, std::abs(av[i] - v[i]));
      v = av;
      lambda = nrm;
      if (delta < 1e-12 && iter > 2) break;
    }
    vals.push_back(lambda);
    vecs.push_back(v);
    for (int64_t i = 0; i < d; ++i)
      for (int64_t j = 0; j < d; ++j) A[static_cast<size_t>(i * d + j)] -= lambda * v[i] * v[j];
  }
#endif
}

}  // namespace detail

// Principal components of mapped latents, as generic edit directions.
template <class T>
PcaDirections<T> discover_directions_pca(Generator<T>& g, int64_t n_samples, int64_t n_components,
                                         uint64_t seed) {
  int64_t d = g.spec().latent_dim;
  check_config(n_components >= 1 && n_components <= d,
               "n_components must be in [1, latent_dim]");
  check_config(n_samples >= n_components, "need at least as many samples as components");
  detail::InferenceGuard<T> gg(g);
  Rng rng(Rng::derive(seed, 0x706361ULL));
  Tensor<T> z = g.sample_latents(n_samples, rng);
  Tensor<T> w = g.map_latent(Var<T>::constant(std::move(z))).value();
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n_samples; ++i)
    for (int64_t j = 0; j < d; ++j) mean[j] += static_cast<double>(w[i * d + j]);
  for (auto& m : mean) m /= static_cast<double>(n_samples);
  std::vector<double> cov(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < n_samples; ++i)
    for (int64_t a = 0; a < d; ++a) {
      double xa = static_cast<double>(w[i * d + a]) - mean[a];
      for (int64_t b = a; b < d; ++b) {
        double xb = static_cast<double>(w[i * d + b]) - mean[b];
        cov[static_cast<size_t>(a * d + b)] += xa * xb;
      }
    }
  double denom = n_samples > 1 ? static_cast<double>(n_samples - 1) : 1.0;
  for (int64_t a = 0; a < d; ++a)
    for (int64_t b = a; b < d; ++b) {
      cov[static_cast<size_t>(a * d + b)] /= denom;
      cov[static_cast<size_t>(b * d + a)] = cov[static_cast<size_t>(a * d + b)];
    }
  std::vector<std::vector<double>> vecs;
  std::vector<double> vals;
  detail::top_eigenpairs(cov, d, n_components, vecs, vals);
  PcaDirections<T> out;
  for (int64_t c = 0; c < n_components; ++c) {
    std::vector<double>& v = vecs[static_cast<size_t>(c)];
    // Deterministic sign: largest-magnitude entry is positive.
    int64_t arg = 0;
    for (int64_t i = 1; i < d; ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0)
      for (auto& x : v) x = -x;
    Tensor<T> vt(Shape{d});
    for (int64_t i = 0; i < d; ++i) vt[i] = static_cast<T>(v[i]);
    out.directions.push_back(make_direction<T>("pc" + std::to_string(c + 1), std::move(vt)));
    out.explained_variance.push_back(std::max(0.0, vals[static_cast<size_t>(c)]));
  }
  return out;
}

template <class T>
void save_directions(const std::filesystem::path& path,
                     const std::vector<EditDirection<T>>& dirs) {
  json arr = json::array();
  for (const auto& d : dirs) {
    json vec = json::array();
    for (int64_t i = 0; i < d.vector.size(); ++i) vec.push_back(static_cast<double>(d.vector[i]));
    arr.push_back({{"name", d.name}, {"vector", vec}});
  }
  save_json(path, arr);
}

template <class T>
std::vector<EditDirection<T>> load_directions(const std::filesystem::path& path) {
  json arr = load_json(path);
  check_config(arr.is_array(), "directions file must hold an array");
  std::vector<EditDirection<T>> out;
  for (const auto& e : arr) {
    std::string name;
    std::vector<double> vec;
    try {
      name = e.at("name").get<std::string>();
      vec = e.at("vector").get<std::vector<double>>();
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("malformed direction entry: ") + ex.what());
    }
    Tensor<T> v(Shape{static_cast<int64_t>(vec.size())});
    for (size_t i = 0; i < vec.size(); ++i) v[static_cast<int64_t>(i)] = static_cast<T>(vec[i]);
    EditDirection<T> d{std::move(name), std::move(v)};
    validate_direction(d);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace hyperinvert
