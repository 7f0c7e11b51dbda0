#include "gangeal/latent.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace gangeal {

LatentBasis fit_pca(const torch::Tensor& pool) {
    if (pool.dim() != 2 || pool.size(0) < 2) {
        throw std::invalid_argument("fit_pca: need a pool of at least two latents");
    }
    auto x = pool.detach().to(torch::kFloat64).contiguous();
    const int64_t m = x.size(0), d = x.size(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> data(
        x.data_ptr<double>(), m, d);
    const Eigen::RowVectorXd mean = data.colwise().mean();
    const Eigen::MatrixXd centered = data.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw std::runtime_error("fit_pca: eigendecomposition failed");
    }

    LatentBasis basis;
    basis.mean = torch::empty({d}, torch::kFloat64);
    basis.directions = torch::empty({d, d}, torch::kFloat64);
    basis.eigenvalues = torch::empty({d}, torch::kFloat64);
    auto ma = basis.mean.accessor<double, 1>();
    auto da = basis.directions.accessor<double, 2>();
    auto ea = basis.eigenvalues.accessor<double, 1>();
    for (int64_t j = 0; j < d; ++j) ma[j] = mean(j);
    for (int64_t k = 0; k < d; ++k) {
        const int64_t src = d - 1 - k;  // solver returns ascending eigenvalues
        Eigen::VectorXd v = eig.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        for (int64_t j = 0; j < d; ++j) da[k][j] = v(j);
        ea[k] = std::max(0.0, eig.eigenvalues()(src));
    }
    basis.mean = basis.mean.to(torch::kFloat32);
    basis.directions = basis.directions.to(torch::kFloat32);
    basis.eigenvalues = basis.eigenvalues.to(torch::kFloat32);
    return basis;
}

TargetLatent::TargetLatent(std::shared_ptr<const LatentBasis> basis, int64_t n)
    : TargetLatent(basis, torch::zeros({n}, torch::kFloat32)) {}

TargetLatent::TargetLatent(std::shared_ptr<const LatentBasis> basis, torch::Tensor coefficients)
    : basis_(std::move(basis)), coefficients_(std::move(coefficients)) {
    if (!basis_) {
        throw std::invalid_argument("TargetLatent: missing basis");
    }
    if (coefficients_.dim() != 1 || coefficients_.size(0) > basis_->size()) {
        throw std::invalid_argument("TargetLatent: coefficient count exceeds the basis size");
    }
}

torch::Tensor TargetLatent::materialize() const {
    const auto& b = *basis_;
    auto mean = b.mean.to(coefficients_.scalar_type()).unsqueeze(0);
    if (count() == 0) return mean;
    auto dirs = b.directions.slice(0, 0, count()).to(coefficients_.scalar_type());
    return mean + torch::matmul(coefficients_.unsqueeze(0), dirs);
}

torch::Tensor TargetLatent::project(const LatentBasis& basis, const torch::Tensor& w, int64_t n) {
    if (n < 0 || n > basis.size()) {
        throw std::invalid_argument("project: coefficient count out of range");
    }
    auto centered = w.detach().reshape({-1}).to(torch::kFloat32) - basis.mean;
    if (n == 0) return torch::zeros({0}, torch::kFloat32);
    return torch::matmul(basis.directions.slice(0, 0, n), centered);
}

} // namespace gangeal
