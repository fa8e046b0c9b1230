// SPDX-License-Identifier: Apache-2.0
#include "matdiff/objectives.hpp"

#include "matdiff/errors.hpp"

namespace matdiff {

namespace {

torch::Tensor as_batch(const torch::Tensor& x, const char* what) {
    if (x.dim() == 3) {
        return x.unsqueeze(0);
    }
    if (x.dim() != 4) {
        throw InvalidArgument(std::string(what) + ": expected [C,H,W] or [B,C,H,W]");
    }
    return x;
}

torch::Tensor check_mask(const torch::Tensor& mask, const torch::Tensor& ref, const char* what) {
    auto m = as_batch(mask, what);
    if (m.size(0) != ref.size(0) || m.size(1) != 1 || m.size(2) != ref.size(2) || m.size(3) != ref.size(3)) {
        throw InvalidArgument(std::string(what) + ": mask must be [B,1,H,W] matching the images");
    }
    return m.to(ref.dtype());
}

bool all_finite(const torch::Tensor& x) { return torch::isfinite(x).all().item<bool>(); }

} // namespace

torch::Tensor mse_loss(const torch::Tensor& pred, const torch::Tensor& target,
                       const std::optional<torch::Tensor>& mask) {
    if (pred.sizes() != target.sizes()) {
        throw InvalidArgument("mse_loss: prediction and target shapes differ");
    }
    const auto p = as_batch(pred, "mse_loss");
    const auto sq = (p - as_batch(target, "mse_loss")).pow(2);
    if (!mask) {
        return sq.mean();
    }
    const auto m = check_mask(*mask, p, "mse_loss");
    const auto count = m.sum();
    if (count.item<double>() == 0.0) {
        throw InvalidArgument("mse_loss: mask is empty");
    }
    return (sq * m).sum() / (count * p.size(1));
}

torch::Tensor gm_loss(const torch::Tensor& pred, const torch::Tensor& target,
                      const std::optional<torch::Tensor>& mask) {
    if (pred.sizes() != target.sizes()) {
        throw InvalidArgument("gm_loss: prediction and target shapes differ");
    }
    const auto p = as_batch(pred, "gm_loss");
    const int64_t h = p.size(2);
    const int64_t w = p.size(3);
    if (h < 2 || w < 2) {
        throw InvalidArgument("gm_loss: H and W must be at least 2");
    }
    const auto d = p - as_batch(target, "gm_loss");
    auto gx = (d.slice(3, 1, w) - d.slice(3, 0, w - 1)).abs();
    auto gy = (d.slice(2, 1, h) - d.slice(2, 0, h - 1)).abs();
    if (!mask) {
        return (gx.sum() + gy.sum()) / static_cast<double>(p.size(0) * h * w);
    }
    const auto m = check_mask(*mask, p, "gm_loss");
    const auto count = m.sum();
    if (count.item<double>() == 0.0) {
        throw InvalidArgument("gm_loss: mask is empty");
    }
    const auto mx = m.slice(3, 1, w) * m.slice(3, 0, w - 1);
    const auto my = m.slice(2, 1, h) * m.slice(2, 0, h - 1);
    return ((gx * mx).sum() + (gy * my).sum()) / count;
}

LossBreakdown total_loss(const torch::Tensor& pred_albedo, const torch::Tensor& gt_albedo,
                         const torch::Tensor& pred_rm, const torch::Tensor& gt_rm,
                         const std::optional<torch::Tensor>& mask, const LossWeights& weights) {
    if (!all_finite(pred_albedo) || !all_finite(gt_albedo)) {
        throw NumericError("mse_albedo", "total_loss: non-finite value in albedo inputs");
    }
    if (!all_finite(pred_rm) || !all_finite(gt_rm)) {
        throw NumericError("mse_rm", "total_loss: non-finite value in roughness/metallic inputs");
    }
    LossBreakdown out;
    out.mse_albedo = mse_loss(pred_albedo, gt_albedo, mask);
    out.mse_rm = mse_loss(pred_rm, gt_rm, mask);
    out.gm_rm = gm_loss(pred_rm, gt_rm, mask);
    for (const auto& [name, value] : {std::pair{"mse_albedo", out.mse_albedo}, std::pair{"mse_rm", out.mse_rm},
                                      std::pair{"gm_rm", out.gm_rm}}) {
        if (!all_finite(value)) {
            throw NumericError(name, std::string("total_loss: ") + name + " is not finite");
        }
    }
    out.total = out.mse_albedo + out.mse_rm;
    if (weights.use_gm) {
        out.total = out.total + out.gm_rm;
    }
    return out;
}

} // namespace matdiff
