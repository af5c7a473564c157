#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mplt/tensor.hpp"

namespace mplt {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    std::size_t elements_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Error per element is |g_ad - g_fd| / max(1, |g_fd|).
///
/// `f` rebuilds the graph from the current values of `params` on every call.
/// `max_per_tensor` caps the number of probed elements per tensor (0 = all);
/// probed elements are spread evenly across the tensor.
template <typename Real, typename F>
GradCheckResult grad_check(F&& f, std::vector<Parameter<Real>>& params, Real step = Real(1e-5),
                           std::size_t max_per_tensor = 0) {
    for (auto& p : params) p.value.zero_grad();
    Tensor<Real> loss = f();
    loss.backward();

    GradCheckResult result;
    for (auto& p : params) {
        auto values = p.value.mutable_data();
        std::vector<Real> analytic(values.size(), Real(0));
        if (p.value.has_grad()) std::copy(p.value.grad().begin(), p.value.grad().end(), analytic.begin());

        const std::size_t n = values.size();
        const std::size_t probes = max_per_tensor == 0 ? n : std::min(n, max_per_tensor);
        for (std::size_t q = 0; q < probes; ++q) {
            const std::size_t i = probes == n ? q : (q * n) / probes;
            const Real saved = values[i];
            Real plus, minus;
            {
                NoGradGuard guard;
                values[i] = saved + step;
                plus = f().item();
                values[i] = saved - step;
                minus = f().item();
                values[i] = saved;
            }
            const double fd = static_cast<double>((plus - minus) / (Real(2) * step));
            const double err = std::abs(static_cast<double>(analytic[i]) - fd) / std::max(1.0, std::abs(fd));
            ++result.elements_checked;
            if (err > result.max_rel_error || result.worst_tensor.empty()) {
                if (err >= result.max_rel_error) {
                    result.max_rel_error = err;
                    result.worst_tensor = p.name;
                    result.worst_index = i;
                }
            }
        }
    }
    for (auto& p : params) p.value.zero_grad();
    return result;
}

}  // namespace mplt
