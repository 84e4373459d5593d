#include "amid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "amid/errors.hpp"

namespace amid::diff {

double grad_check(const std::function<Tensor()>& f, std::span<Parameter* const> params,
                  double step) {
    for (Parameter* p : params) p->zero_grad();
    Tensor loss = f();
    if (loss.size() != 1) throw UsageError("grad_check: function must return a scalar");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) {
        const auto g = p->grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter* p = params[k];
        if (!p->trainable()) continue;
        auto vals = p->values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            const double up = f().scalar_value();
            vals[i] = saved - step;
            const double down = f().scalar_value();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[k][i];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace amid::diff
