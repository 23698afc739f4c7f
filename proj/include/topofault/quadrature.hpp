#pragma once

#include <functional>
#include <memory>
#include <vector>

namespace topofault::quad {

/// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    explicit GaussLegendre(int n);

    /// Shared immutable rule for n nodes; thread-safe.
    static std::shared_ptr<const GaussLegendre> cached(int n);

    double integrate(const std::function<double(double)>& f, double a, double b) const;
};

/// Panel-splitting Gauss-Legendre: a panel is accepted when the whole-panel rule and the
/// two-half rule agree within `abs_tol`, otherwise both halves are refined (down to `max_depth`).
double adaptive_integrate(const std::function<double(double)>& f, double a, double b, int nodes,
                          double abs_tol = 1e-14, int max_depth = 12);

}  // namespace topofault::quad
