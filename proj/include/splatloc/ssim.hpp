#pragma once

#include "splatloc/image.hpp"

namespace splatloc {

/// Gaussian-windowed SSIM over the valid region (windows fully inside the image),
/// averaged over positions and channels. Inputs are on a [0,1] dynamic range.
struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

double ssim(const Image& a, const Image& b, const SsimParams& params = {});

/// SSIM(a, b) and, when `grad_b` is non-null, its gradient with respect to b.
double ssim_with_gradient(const Image& a, const Image& b, Image* grad_b, const SsimParams& params = {});

}  // namespace splatloc
