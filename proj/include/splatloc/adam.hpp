#pragma once

#include <Eigen/Core>
#include <cmath>

namespace splatloc {

/// Adam over a flat parameter vector with a per-entry learning rate.
class Adam {
public:
    Adam(Eigen::VectorXd learning_rates, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : lr_(std::move(learning_rates)),
          beta1_(beta1),
          beta2_(beta2),
          epsilon_(epsilon),
          m_(Eigen::VectorXd::Zero(lr_.size())),
          v_(Eigen::VectorXd::Zero(lr_.size())) {}

    Adam(Eigen::Index size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : Adam(Eigen::VectorXd::Constant(size, learning_rate), beta1, beta2, epsilon) {}

    void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (Eigen::Index i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= lr_[i] * mhat / (std::sqrt(vhat) + epsilon_);
        }
    }

    long steps() const { return t_; }

private:
    Eigen::VectorXd lr_;
    double beta1_, beta2_, epsilon_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

}  // namespace splatloc
