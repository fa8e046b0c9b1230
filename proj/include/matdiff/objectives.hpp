// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include <torch/torch.h>

namespace matdiff {

// All losses take images as [C,H,W] or batches [B,C,H,W]; masks are [1,H,W] / [B,1,H,W]
// with values in {0,1}. They return 0-dim tensors so training can backpropagate through them.

/// Mean squared difference over masked pixels and all channels. Throws InvalidArgument on a
/// shape mismatch or an all-zero mask.
torch::Tensor mse_loss(const torch::Tensor& pred, const torch::Tensor& target,
                       const std::optional<torch::Tensor>& mask = std::nullopt);

/// Gradient matching: with D = pred - target, (sum |dx D| + sum |dy D|) / N using forward
/// differences over valid positions, summed over channels. N = H*W per image. With a mask,
/// a difference counts only when both of its pixels are foreground and N is the foreground
/// pixel count. Throws InvalidArgument when H or W < 2.
torch::Tensor gm_loss(const torch::Tensor& pred, const torch::Tensor& target,
                      const std::optional<torch::Tensor>& mask = std::nullopt);

struct LossBreakdown {
    torch::Tensor mse_albedo;
    torch::Tensor mse_rm;
    torch::Tensor gm_rm;
    torch::Tensor total; ///< mse_albedo + mse_rm + gm_rm
};

struct LossWeights {
    bool use_gm = true; ///< false drops gm_rm from the total (the "without gradient matching" ablation)
};

/// Unit-weight sum of the three terms. Throws NumericError naming the term when an input or a
/// result is not finite.
LossBreakdown total_loss(const torch::Tensor& pred_albedo, const torch::Tensor& gt_albedo,
                         const torch::Tensor& pred_rm, const torch::Tensor& gt_rm,
                         const std::optional<torch::Tensor>& mask = std::nullopt,
                         const LossWeights& weights = {});

} // namespace matdiff
