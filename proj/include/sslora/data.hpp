#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "sslora/linalg.hpp"

namespace sslora {

// Synthetic multi-domain classification task: class means mu_c are shared
// across domains; domain i sees x = Q_i (mu_c + eps) + b_i with orthogonal
// Q_i, bias b_i and eps ~ N(0, sigma^2 I). Stored as plain CSV plus a JSON
// manifest. Everything here runs in double; training casts as needed.

struct DomainTransform {
  Eigen::MatrixXd Q;  // input_dim x input_dim, orthogonal
  Eigen::VectorXd b;  // input_dim
};

struct DomainDatasetSpec {
  int num_domains = 3;
  int num_classes = 5;
  int input_dim = 64;
  int n_train_per_class = 100;
  int n_val_per_class = 40;
  double noise_std = 0.35;
  double mean_scale = 1.0;  // class means drawn N(0, mean_scale^2 I)
  double bias_std = 0.3;    // domain bias drawn N(0, bias_std^2 I)
  std::uint64_t seed = 7;

  // Filled by plan() (or supplied explicitly, e.g. identity transforms).
  Eigen::MatrixXd class_means;            // input_dim x C
  std::vector<DomainTransform> transforms;
  bool planned() const {
    return class_means.size() > 0 &&
           transforms.size() == static_cast<std::size_t>(num_domains);
  }
};

/// Orthogonal matrix from the QR of a seeded gaussian, sign-fixed so the
/// factorization (and hence the draw) is unique.
inline Eigen::MatrixXd random_orthogonal(RandomSource& rng, Index n) {
  Eigen::MatrixXd g = gaussian_matrix<double>(rng, n, n, 1.0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

/// Draw class means and per-domain transforms from the seed. No-op when the
/// caller already supplied them.
inline void plan(DomainDatasetSpec& spec) {
  if (spec.planned()) return;
  RandomSource rng = seeded_rng(derive_seed(spec.seed, 0));
  spec.class_means =
      gaussian_matrix<double>(rng, spec.input_dim, spec.num_classes, spec.mean_scale);
  spec.transforms.clear();
  for (int i = 0; i < spec.num_domains; ++i) {
    DomainTransform t;
    t.Q = random_orthogonal(rng, spec.input_dim);
    t.b = gaussian_matrix<double>(rng, spec.input_dim, 1, spec.bias_std).col(0);
    spec.transforms.push_back(std::move(t));
  }
}

struct SplitData {
  Eigen::MatrixXd x;        // input_dim x N, one sample per column
  std::vector<int> labels;  // N

  Index size() const { return x.cols(); }
};

struct MultiDomainDataset {
  DomainDatasetSpec spec;
  std::vector<SplitData> train;  // per domain
  std::vector<SplitData> val;
};

inline MultiDomainDataset generate(DomainDatasetSpec spec) {
  if (spec.noise_std <= 0.0) throw ConfigError("generate: noise_std must be > 0");
  plan(spec);
  MultiDomainDataset ds;
  RandomSource rng = seeded_rng(derive_seed(spec.seed, 1));
  auto fill_split = [&](int domain, int per_class) {
    SplitData split;
    const Index n = static_cast<Index>(per_class) * spec.num_classes;
    split.x.resize(spec.input_dim, n);
    split.labels.resize(static_cast<std::size_t>(n));
    const DomainTransform& t = spec.transforms[static_cast<std::size_t>(domain)];
    Index col = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int i = 0; i < per_class; ++i, ++col) {
        Eigen::VectorXd eps =
            gaussian_matrix<double>(rng, spec.input_dim, 1, spec.noise_std).col(0);
        split.x.col(col) = t.Q * (spec.class_means.col(c) + eps) + t.b;
        split.labels[static_cast<std::size_t>(col)] = c;
      }
    }
    return split;
  };
  for (int d = 0; d < spec.num_domains; ++d) {
    ds.train.push_back(fill_split(d, spec.n_train_per_class));
    ds.val.push_back(fill_split(d, spec.n_val_per_class));
  }
  ds.spec = std::move(spec);
  return ds;
}

// --- persistence: manifest.json + domain{i}_{train|val}.csv ---------------

std::string dataset_manifest_json(const DomainDatasetSpec& spec);
void save_dataset(const MultiDomainDataset& ds, const std::string& dir);
MultiDomainDataset load_dataset(const std::string& dir);

/// One CSV split: header `domain,label,f0..f{n-1}`, 17-significant-digit
/// decimals (lossless for f64).
std::string split_to_csv(int domain, const SplitData& split);
SplitData split_from_csv(const std::string& text, int expect_domain, int input_dim,
                         int num_classes);

}  // namespace sslora
