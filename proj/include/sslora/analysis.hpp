#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "sslora/model.hpp"
#include "sslora/subspace.hpp"

namespace sslora {

/// Cumulative contribution curve of a learned adapter matrix (SVD, then
/// cumulative squared-singular-value energy), over k = 1..min(rows, cols).
template <class S>
ContributionCurve<S> adapter_curve(const MatrixX<S>& m) {
  if (m.size() == 0 || m.norm() == S(0))
    throw DegenerateInputError("adapter_curve: zero matrix");
  return contribution_curve<S>(svd(m).sigma);
}

/// sup_k |C_k - k/r|: zero for a basis that spreads energy evenly over all
/// r directions, large when the adapter collapses onto a few.
template <class S>
S linearity_gap(const ContributionCurve<S>& curve) {
  const Index r = curve.size();
  S gap = S(0);
  for (Index k = 0; k < r; ++k) {
    const S want = static_cast<S>(k + 1) / static_cast<S>(r);
    gap = std::max(gap, std::abs(curve.values[k] - want));
  }
  return gap;
}

struct AdapterReportRow {
  Index layer = 0;
  std::string adapter;  // "shared" or "dom{i}"
  Index k = 0;          // 1-based
  double c_k = 0.0;     // nan on degenerate (zero) adapters
  double gap = 0.0;     // nan on degenerate adapters
  double orth_residual = 0.0;
  bool degenerate = false;
};

struct PairRow {
  Index layer = 0;
  int i = 0;
  int j = 0;
  double distance = 0.0;  // ||B_i B_i^T - B_j B_j^T||_F
};

struct AdapterReport {
  std::vector<AdapterReportRow> rows;   // one per (layer, adapter, k)
  std::vector<PairRow> pairs;           // both-mode layers, i < j
  int degenerate_adapters = 0;
};

/// Curves are computed on B by default (the subspace carrier); use_delta_w
/// switches to the full update B A^T, truncated to the first r components.
template <class S>
AdapterReport report(const MultiDomainNet<S>& net, bool use_delta_w = false) {
  AdapterReport out;
  const Index rank = net.spec.rank;

  auto emit = [&](Index layer, const std::string& name, const LoraPair<S>& pair) {
    const MatrixX<S> carrier =
        use_delta_w ? MatrixX<S>(pair.B * pair.A.transpose()) : pair.B;
    const MatrixX<S> gram_residual =
        pair.B.transpose() * pair.B -
        MatrixX<S>::Identity(pair.rank(), pair.rank());
    const double residual = static_cast<double>(gram_residual.norm());

    std::vector<double> curve_values;
    double gap = std::numeric_limits<double>::quiet_NaN();
    bool degenerate = false;
    try {
      ContributionCurve<S> curve = adapter_curve(carrier);
      ContributionCurve<S> head;
      head.values = curve.values.head(std::min<Index>(rank, curve.size()));
      gap = static_cast<double>(linearity_gap(head));
      for (Index k = 0; k < head.size(); ++k)
        curve_values.push_back(static_cast<double>(head.values[k]));
    } catch (const DegenerateInputError&) {
      degenerate = true;
      ++out.degenerate_adapters;
    }

    for (Index k = 0; k < rank; ++k) {
      AdapterReportRow row;
      row.layer = layer;
      row.adapter = name;
      row.k = k + 1;
      row.degenerate = degenerate;
      row.c_k = !degenerate && k < static_cast<Index>(curve_values.size())
                    ? curve_values[static_cast<std::size_t>(k)]
                    : std::numeric_limits<double>::quiet_NaN();
      row.gap = degenerate ? std::numeric_limits<double>::quiet_NaN() : gap;
      row.orth_residual = residual;
      out.rows.push_back(std::move(row));
    }
  };

  for (Index l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layers[static_cast<std::size_t>(l)];
    emit(l, "shared", layer.shared);
    for (std::size_t j = 0; j < layer.specific.size(); ++j)
      emit(l, "dom" + std::to_string(j), layer.specific[j]);
    if (layer.mode == LayerMode::both) {
      for (std::size_t i = 0; i + 1 < layer.specific.size(); ++i) {
        for (std::size_t j = i + 1; j < layer.specific.size(); ++j) {
          const MatrixX<S> m =
              layer.specific[i].B * layer.specific[i].B.transpose() -
              layer.specific[j].B * layer.specific[j].B.transpose();
          out.pairs.push_back({l, static_cast<int>(i), static_cast<int>(j),
                               static_cast<double>(m.norm())});
        }
      }
    }
  }
  return out;
}

namespace detail_analysis {

inline std::string g17(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail_analysis

inline std::string report_csv(const AdapterReport& rep) {
  std::string out = "layer,adapter,k,C_k,linearity_gap,orth_residual\n";
  for (const auto& row : rep.rows) {
    out += std::to_string(row.layer) + "," + row.adapter + "," +
           std::to_string(row.k) + "," + detail_analysis::g17(row.c_k) + "," +
           detail_analysis::g17(row.gap) + "," +
           detail_analysis::g17(row.orth_residual) + "\n";
  }
  return out;
}

inline std::string pairs_csv(const AdapterReport& rep) {
  std::string out = "layer,i,j,distance\n";
  for (const auto& p : rep.pairs)
    out += std::to_string(p.layer) + "," + std::to_string(p.i) + "," +
           std::to_string(p.j) + "," + detail_analysis::g17(p.distance) + "\n";
  return out;
}

}  // namespace sslora
