#pragma once

#include <vector>

#include <Eigen/Dense>

namespace ips {

/// Minimum-cost perfect assignment of a square cost matrix (Hungarian method
/// with potentials, O(n^3)). Returns col[i], the column assigned to row i.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost);

/// Maximum total-weight assignment.
std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weight);

}  // namespace ips
