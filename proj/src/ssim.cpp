#include "splatloc/ssim.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "splatloc/errors.hpp"

namespace splatloc {

namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(size);
    const double half = 0.5 * (size - 1);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double x = i - half;
        k[i] = std::exp(-0.5 * x * x / (sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Single-channel plane, row-major.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
    double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
    double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
};

// Separable correlation keeping only positions where the window fits.
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    Plane tmp(in.w - n + 1, in.h);
    for (int r = 0; r < in.h; ++r)
        for (int c = 0; c < tmp.w; ++c) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * in(r, c + i);
            tmp(r, c) = s;
        }
    Plane out(tmp.w, in.h - n + 1);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * tmp(r + i, c);
            out(r, c) = s;
        }
    return out;
}

// Adjoint of filter_valid: scatters a valid-size plane back to full size.
Plane filter_valid_adjoint(const Plane& in, const std::vector<double>& k, int w, int h) {
    const int n = static_cast<int>(k.size());
    Plane tmp(in.w, h);
    for (int r = 0; r < in.h; ++r)
        for (int c = 0; c < in.w; ++c)
            for (int i = 0; i < n; ++i) tmp(r + i, c) += k[i] * in(r, c);
    Plane out(w, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < in.w; ++c)
            for (int i = 0; i < n; ++i) out(r, c + i) += k[i] * tmp(r, c);
    return out;
}

Plane channel(const Image& img, int ch) {
    Plane p(img.width(), img.height());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) p(r, c) = img.at(r, c, ch);
    return p;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p(a.w, a.h);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

}  // namespace

double ssim_with_gradient(const Image& a, const Image& b, Image* grad_b, const SsimParams& params) {
    require_same_shape(a, b, "ssim");
    if (params.window < 1 || params.window % 2 == 0 || !(params.sigma > 0.0)) {
        throw InvalidInput("ssim window must be odd and positive with sigma > 0");
    }
    if (a.width() < params.window || a.height() < params.window || a.channels() < 1) {
        throw InvalidInput("image smaller than the ssim window (" + std::to_string(params.window) + ")");
    }
    const auto k = gaussian_kernel(params.window, params.sigma);
    const int w = a.width(), h = a.height();
    const int mw = w - params.window + 1, mh = h - params.window + 1;
    const double count = static_cast<double>(mw) * mh * a.channels();
    if (grad_b) *grad_b = Image(w, h, a.channels());

    double total = 0.0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        const Plane x = channel(a, ch), y = channel(b, ch);
        const Plane mx = filter_valid(x, k), my = filter_valid(y, k);
        const Plane mxx = filter_valid(product(x, x), k), myy = filter_valid(product(y, y), k);
        const Plane mxy = filter_valid(product(x, y), k);
        Plane g_mu(mw, mh), g_yy(mw, mh), g_xy(mw, mh);
        for (std::size_t i = 0; i < mx.v.size(); ++i) {
            const double ux = mx.v[i], uy = my.v[i];
            const double vx = mxx.v[i] - ux * ux, vy = myy.v[i] - uy * uy, cxy = mxy.v[i] - ux * uy;
            const double a1 = 2.0 * ux * uy + params.c1, a2 = 2.0 * cxy + params.c2;
            const double b1 = ux * ux + uy * uy + params.c1, b2 = vx + vy + params.c2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (grad_b) {
                // Partials with respect to mean(y), E[y^2] and E[xy], scaled for the mean.
                const double inv = 1.0 / (b1 * b2 * count);
                g_mu.v[i] = (2.0 * ux * a2 - 2.0 * ux * a1) * inv - s / count * (2.0 * uy / b1 - 2.0 * uy / b2);
                g_yy.v[i] = -s / (b2 * count);
                g_xy.v[i] = 2.0 * a1 * inv;
            }
        }
        if (grad_b) {
            const Plane t_mu = filter_valid_adjoint(g_mu, k, w, h);
            const Plane t_yy = filter_valid_adjoint(g_yy, k, w, h);
            const Plane t_xy = filter_valid_adjoint(g_xy, k, w, h);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    grad_b->at(r, c, ch) = t_mu(r, c) + 2.0 * y(r, c) * t_yy(r, c) + x(r, c) * t_xy(r, c);
        }
    }
    return total / count;
}

double ssim(const Image& a, const Image& b, const SsimParams& params) {
    return ssim_with_gradient(a, b, nullptr, params);
}

}  // namespace splatloc
