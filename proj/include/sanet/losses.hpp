#pragma once

#include <vector>

#include "sanet/network.hpp"

namespace sanet::loss {

struct LossOptions {
    double jaccard_eps = 1e-5;
    double focal_gamma = 2.0;
    /// Probabilities are clamped to [clamp, 1 - clamp] inside the focal log.
    double focal_clamp = 1e-7;
};

/// Soft generalised Jaccard distance, summed over channels:
///   sum_c 1 - (sum p*g + eps) / (sum (p + g - p*g) + eps)
template <typename T>
nn::Var<T> jaccard_loss(const nn::Var<T>& pred, const Tensor<T>& target, double eps = 1e-5);

/// Voxel-wise focal loss -(1 - p_t)^gamma * log(p_t), averaged over voxels and channels.
template <typename T>
nn::Var<T> focal_loss(const nn::Var<T>& pred, const Tensor<T>& target, double gamma = 2.0, double clamp = 1e-7);

struct HeadLoss {
    double jaccard = 0.0;
    double focal = 0.0;
};

template <typename T>
struct LossTerms {
    double jaccard = 0.0;  ///< mean over heads
    double focal = 0.0;    ///< mean over heads
    std::vector<HeadLoss> per_head;  ///< main head first, then the deep-supervision heads
    nn::Var<T> total;      ///< uniform mean over heads of jaccard + focal; differentiable

    [[nodiscard]] double value() const { return static_cast<double>(total.value()[0]); }
};

/// Composite loss over the main head and every deep-supervision head.
template <typename T>
LossTerms<T> total_loss(const nn::ModelOutput<T>& output, const Tensor<T>& target, const LossOptions& opts = {});

/// Loss of a bare probability map (used for sliding-window validation).
template <typename T>
double composite_loss(const Tensor<T>& probabilities, const Tensor<T>& target, const LossOptions& opts = {});

}  // namespace sanet::loss
