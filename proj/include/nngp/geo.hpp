#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace nngp::geo {

// Planar point set with stable integer ids 0..n-1. Coincident points are
// rejected at construction since they make neighbor covariances singular.
class LocationSet {
 public:
  LocationSet() = default;
  explicit LocationSet(Eigen::MatrixX2d coords);

  int size() const { return static_cast<int>(coords_.rows()); }
  Eigen::Vector2d point(int id) const { return coords_.row(id); }
  const Eigen::MatrixX2d& coords() const { return coords_; }

  double distance(int i, int j) const {
    return (coords_.row(i) - coords_.row(j)).norm();
  }

 private:
  Eigen::MatrixX2d coords_;
};

enum class OrderStrategy { by_x, by_y, by_coord_sum, given };

OrderStrategy parse_order_strategy(const std::string& name);
std::string to_string(OrderStrategy s);

// A total order on a LocationSet. permutation[p] is the original id of the
// location at ordered position p; position[id] inverts it.
struct Ordering {
  OrderStrategy strategy = OrderStrategy::by_coord_sum;
  std::vector<int> permutation;
  std::vector<int> position;
};

// Ties are broken by original id ascending.
Ordering order_locations(const LocationSet& locs, OrderStrategy strategy);

// Identity permutation wrapped as strategy=given.
Ordering given_ordering(int n);

enum class NeighborScheme { nearest, stein_alt };

NeighborScheme parse_neighbor_scheme(const std::string& name);

// Neighbor DAG over an ordered location set. All indices are ordered
// positions: neighbors[i] lists positions < i, ascending, |N(i)| = min(m, i).
// reverse[j] holds (i, slot) for every i with neighbors[i][slot] == j;
// dependents at query locations are tracked separately by the samplers.
struct NeighborDag {
  int m = 0;
  NeighborScheme scheme = NeighborScheme::nearest;
  LocationSet ordered;           // coords in DAG order
  std::vector<int> to_original;  // position -> original id
  std::vector<std::vector<int>> neighbors;
  std::vector<std::vector<std::pair<int, int>>> reverse;

  int size() const { return ordered.size(); }
};

NeighborDag build_neighbor_dag(const LocationSet& locs, const Ordering& ordering,
                               int m, NeighborScheme scheme = NeighborScheme::nearest);

// Exact m-nearest reference locations for a query point u, ties by id
// ascending. Throws if u coincides with a reference location.
std::vector<int> neighbors_for_query(const LocationSet& ref, const Eigen::Vector2d& u,
                                     int m);

// Diagnostic text format: one line per node, "id: n1,n2,..." in original ids.
std::string dag_to_text(const NeighborDag& dag);

}  // namespace nngp::geo
