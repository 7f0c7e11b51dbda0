#pragma once

#include <torch/torch.h>

#include <memory>

namespace gangeal {

/// Principal directions of a latent pool.
struct LatentBasis {
    torch::Tensor mean;         // [D]
    torch::Tensor directions;   // [N_max, D], orthonormal rows
    torch::Tensor eigenvalues;  // [N_max], nonincreasing

    int64_t dim() const { return mean.size(0); }
    int64_t size() const { return directions.size(0); }
};

/// PCA of a pool [M, D] (M >= 2) by eigendecomposition of the sample covariance.
/// Each direction is signed so that its largest-magnitude entry is positive.
LatentBasis fit_pca(const torch::Tensor& pool);

/// c = mean + sum_i alpha_i d_i over the first N directions.
class TargetLatent {
public:
    TargetLatent(std::shared_ptr<const LatentBasis> basis, int64_t n);
    TargetLatent(std::shared_ptr<const LatentBasis> basis, torch::Tensor coefficients);

    int64_t count() const { return coefficients_.size(0); }
    torch::Tensor& coefficients() { return coefficients_; }
    const torch::Tensor& coefficients() const { return coefficients_; }
    const LatentBasis& basis() const { return *basis_; }
    std::shared_ptr<const LatentBasis> basis_ptr() const { return basis_; }

    /// [1, D]; differentiable in the coefficients.
    torch::Tensor materialize() const;

    /// Coefficients of the projection of w onto the first N directions.
    static torch::Tensor project(const LatentBasis& basis, const torch::Tensor& w, int64_t n);

private:
    std::shared_ptr<const LatentBasis> basis_;
    torch::Tensor coefficients_;
};

} // namespace gangeal
