#include "nngp/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nngp::geo {

LocationSet::LocationSet(Eigen::MatrixX2d coords) : coords_(std::move(coords)) {
  if (coords_.rows() < 1) throw std::invalid_argument("LocationSet: need n >= 1");
  std::set<std::pair<double, double>> seen;
  for (int i = 0; i < coords_.rows(); ++i) {
    if (!seen.insert({coords_(i, 0), coords_(i, 1)}).second) {
      throw std::invalid_argument("LocationSet: coincident locations at id " +
                                  std::to_string(i));
    }
  }
}

OrderStrategy parse_order_strategy(const std::string& name) {
  if (name == "by_x") return OrderStrategy::by_x;
  if (name == "by_y") return OrderStrategy::by_y;
  if (name == "by_coord_sum") return OrderStrategy::by_coord_sum;
  if (name == "given") return OrderStrategy::given;
  throw std::invalid_argument("unknown ordering strategy: " + name);
}

std::string to_string(OrderStrategy s) {
  switch (s) {
    case OrderStrategy::by_x: return "by_x";
    case OrderStrategy::by_y: return "by_y";
    case OrderStrategy::by_coord_sum: return "by_coord_sum";
    case OrderStrategy::given: return "given";
  }
  return "?";
}

NeighborScheme parse_neighbor_scheme(const std::string& name) {
  if (name == "nearest") return NeighborScheme::nearest;
  if (name == "stein_alt") return NeighborScheme::stein_alt;
  throw std::invalid_argument("unknown neighbor scheme: " + name);
}

Ordering order_locations(const LocationSet& locs, OrderStrategy strategy) {
  const int n = locs.size();
  Ordering ord;
  ord.strategy = strategy;
  ord.permutation.resize(n);
  std::iota(ord.permutation.begin(), ord.permutation.end(), 0);
  if (strategy != OrderStrategy::given) {
    auto key = [&](int id) -> double {
      const auto p = locs.point(id);
      switch (strategy) {
        case OrderStrategy::by_x: return p.x();
        case OrderStrategy::by_y: return p.y();
        default: return p.x() + p.y();
      }
    };
    std::sort(ord.permutation.begin(), ord.permutation.end(), [&](int a, int b) {
      const double ka = key(a), kb = key(b);
      if (ka != kb) return ka < kb;
      return a < b;  // tie-break: original id ascending
    });
  }
  ord.position.resize(n);
  for (int p = 0; p < n; ++p) ord.position[ord.permutation[p]] = p;
  return ord;
}

Ordering given_ordering(int n) {
  Ordering ord;
  ord.strategy = OrderStrategy::given;
  ord.permutation.resize(n);
  std::iota(ord.permutation.begin(), ord.permutation.end(), 0);
  ord.position = ord.permutation;
  return ord;
}

namespace {

// Predecessor ranks by distance from node i, ties by ordered position.
std::vector<int> ranked_predecessors(const LocationSet& ordered, int i) {
  std::vector<int> idx(i);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double da = ordered.distance(i, a), db = ordered.distance(i, b);
    if (da != db) return da < db;
    return a < b;
  });
  return idx;
}

std::vector<int> pick_stein_alt(const std::vector<int>& ranked, int i, int m) {
  // m' nearest plus m-m' spread-out predecessors at the published rank
  // formula; colliding ranks fall back to the nearest unused ones.
  const int mprime = static_cast<int>(std::ceil(0.75 * m));
  std::vector<char> used(ranked.size(), 0);
  std::vector<int> chosen;
  chosen.reserve(m);
  for (int r = 0; r < mprime; ++r) {
    chosen.push_back(ranked[r]);
    used[r] = 1;
  }
  for (int l = 1; l <= m - mprime; ++l) {
    // 1-based rank m + floor(l*(i-m-1)/(m-m')), node index i is 1-based here
    const long long rank1 = m + (static_cast<long long>(l) * (i - m - 1)) / (m - mprime);
    int r = static_cast<int>(rank1 - 1);
    r = std::min(r, static_cast<int>(ranked.size()) - 1);
    while (r >= 0 && used[r]) --r;
    if (r < 0) {
      r = 0;
      while (r < static_cast<int>(ranked.size()) && used[r]) ++r;
    }
    chosen.push_back(ranked[r]);
    used[r] = 1;
  }
  return chosen;
}

}  // namespace

NeighborDag build_neighbor_dag(const LocationSet& locs, const Ordering& ordering,
                               int m, NeighborScheme scheme) {
  if (m < 1) throw std::invalid_argument("build_neighbor_dag: m >= 1 required");
  const int n = locs.size();
  NeighborDag dag;
  dag.m = m;
  dag.scheme = scheme;
  dag.to_original = ordering.permutation;
  Eigen::MatrixX2d oc(n, 2);
  for (int p = 0; p < n; ++p) oc.row(p) = locs.point(ordering.permutation[p]);
  dag.ordered = LocationSet(std::move(oc));
  dag.neighbors.resize(n);
  dag.reverse.resize(n);
  for (int i = 0; i < n; ++i) {
    const int mi = std::min(m, i);
    if (mi == 0) continue;
    auto ranked = ranked_predecessors(dag.ordered, i);
    std::vector<int> chosen;
    // The rank formula only applies past the warm-up region; earlier nodes
    // fall back to plain nearest neighbors, as does i-1 <= m.
    if (scheme == NeighborScheme::stein_alt && i > m) {
      chosen = pick_stein_alt(ranked, i + 1, m);
    } else {
      chosen.assign(ranked.begin(), ranked.begin() + mi);
    }
    std::sort(chosen.begin(), chosen.end());
    dag.neighbors[i] = std::move(chosen);
    for (int slot = 0; slot < static_cast<int>(dag.neighbors[i].size()); ++slot) {
      dag.reverse[dag.neighbors[i][slot]].push_back({i, slot});
    }
  }
  return dag;
}

std::vector<int> neighbors_for_query(const LocationSet& ref, const Eigen::Vector2d& u,
                                     int m) {
  const int n = ref.size();
  if (m > n) throw std::invalid_argument("neighbors_for_query: m exceeds |ref|");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) {
    d[i] = (ref.point(i) - u).norm();
    if (d[i] == 0.0) {
      throw std::invalid_argument("neighbors_for_query: query coincides with reference id " +
                                  std::to_string(i));
    }
  }
  std::partial_sort(idx.begin(), idx.begin() + m, idx.end(), [&](int a, int b) {
    if (d[a] != d[b]) return d[a] < d[b];
    return a < b;
  });
  idx.resize(m);
  return idx;
}

std::string dag_to_text(const NeighborDag& dag) {
  std::ostringstream os;
  for (int i = 0; i < dag.size(); ++i) {
    os << dag.to_original[i] << ":";
    for (size_t j = 0; j < dag.neighbors[i].size(); ++j) {
      os << (j ? "," : " ") << dag.to_original[dag.neighbors[i][j]];
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace nngp::geo
