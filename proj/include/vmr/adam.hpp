#pragma once

#include <cmath>
#include <vector>

namespace vmr {

/// Adaptive-moment gradient descent over a flat parameter vector.
struct AdamOptimizer {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::vector<double> m, v;
    long step_count = 0;

    explicit AdamOptimizer(size_t n = 0, double lr_ = 1e-2)
        : lr(lr_), m(n, 0.0), v(n, 0.0) {}

    void reset(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        step_count = 0;
    }

    /// In-place update; mask (optional) freezes parameters where false.
    void step(std::vector<double>& params, const std::vector<double>& grads,
              const std::vector<char>* active = nullptr) {
        ++step_count;
        double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            if (active && !(*active)[i]) continue;
            double g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            double mhat = m[i] / c1;
            double vhat = v[i] / c2;
            params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

}  // namespace vmr
