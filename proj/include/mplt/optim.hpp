#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mplt/tensor.hpp"

namespace mplt {

/// AdamW with decoupled weight decay. Each parameter belongs to a group whose
/// learning rate is chosen by `group_of(name)`.
template <typename Real = double>
class AdamW {
public:
    struct Options {
        std::vector<double> group_lr{1e-3};
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-4;
    };

    AdamW(std::vector<Parameter<Real>>& params, Options options,
          std::function<std::size_t(const std::string&)> group_of = [](const std::string&) { return 0; })
        : params_(params), options_(std::move(options)) {
        for (const auto& p : params_) {
            first_.emplace_back(p.value.size(), 0.0);
            second_.emplace_back(p.value.size(), 0.0);
            group_.push_back(group_of(p.name));
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].value;
            if (!p.has_grad()) continue;
            const double lr = options_.group_lr.at(group_[i]);
            auto v = p.mutable_data();
            auto g = p.grad();
            for (std::size_t k = 0; k < v.size(); ++k) {
                const double gk = static_cast<double>(g[k]);
                first_[i][k] = options_.beta1 * first_[i][k] + (1 - options_.beta1) * gk;
                second_[i][k] = options_.beta2 * second_[i][k] + (1 - options_.beta2) * gk * gk;
                const double update = (first_[i][k] / c1) / (std::sqrt(second_[i][k] / c2) + options_.eps);
                const double decayed = static_cast<double>(v[k]) * (1 - lr * options_.weight_decay);
                v[k] = static_cast<Real>(decayed - lr * update);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

private:
    std::vector<Parameter<Real>>& params_;
    Options options_;
    std::vector<std::vector<double>> first_, second_;
    std::vector<std::size_t> group_;
    std::size_t t_ = 0;
};

}  // namespace mplt
