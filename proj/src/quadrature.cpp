#include "topofault/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "topofault/errors.hpp"

namespace topofault::quad {

GaussLegendre::GaussLegendre(int n) : nodes(n), weights(n) {
    if (n < 1) throw InvalidInput("Gauss-Legendre rule needs at least one node");
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        // Chebyshev-style initial guess, then Newton on P_n.
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) < 1e-15) break;
        }
        if (n == 1) pp = 1.0;  // P_1' = 1 at the single node z = 0
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
    if (n == 1) {
        nodes[0] = 0.0;
        weights[0] = 2.0;
    }
}

std::shared_ptr<const GaussLegendre> GaussLegendre::cached(int n) {
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const GaussLegendre>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_shared<const GaussLegendre>(n);
    return slot;
}

double GaussLegendre::integrate(const std::function<double(double)>& f, double a, double b) const {
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(mid + half * nodes[i]);
    return s * half;
}

namespace {

double refine(const GaussLegendre& rule, const std::function<double(double)>& f, double a, double b, double whole,
              double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double left = rule.integrate(f, a, m);
    const double right = rule.integrate(f, m, b);
    if (depth <= 0 || std::abs(left + right - whole) <= tol) return left + right;
    return refine(rule, f, a, m, left, 0.5 * tol, depth - 1) + refine(rule, f, m, b, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_integrate(const std::function<double(double)>& f, double a, double b, int nodes, double abs_tol,
                          int max_depth) {
    const auto rule = GaussLegendre::cached(nodes);
    return refine(*rule, f, a, b, rule->integrate(f, a, b), abs_tol, max_depth);
}

}  // namespace topofault::quad
