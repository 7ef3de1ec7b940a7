#include "ufi/ops.hpp"

#include <stdexcept>
#include <string>

namespace ufi {

namespace {

torch::Tensor to_nchw(const torch::Tensor& x, int64_t& ndim) {
    ndim = x.dim();
    switch (ndim) {
        case 2:
            return x.unsqueeze(0).unsqueeze(0);
        case 3:
            return x.unsqueeze(0);
        case 4:
            return x;
        default:
            throw std::invalid_argument("expected a 2-D, 3-D or 4-D tensor, got " +
                                        std::to_string(ndim) + "-D");
    }
}

torch::Tensor from_nchw(const torch::Tensor& x, int64_t ndim) {
    if (ndim == 2) return x.squeeze(0).squeeze(0);
    if (ndim == 3) return x.squeeze(0);
    return x;
}

void check_divisible(int64_t h, int64_t w, int64_t s) {
    if (s < 1) throw std::invalid_argument("block size must be >= 1");
    if (h % s != 0)
        throw std::invalid_argument("height " + std::to_string(h) +
                                    " not divisible by factor " + std::to_string(s));
    if (w % s != 0)
        throw std::invalid_argument("width " + std::to_string(w) +
                                    " not divisible by factor " + std::to_string(s));
}

}  // namespace

torch::Tensor sum_pool(const torch::Tensor& x, int64_t s) {
    int64_t ndim;
    auto t = to_nchw(x, ndim).contiguous();
    const int64_t n = t.size(0), c = t.size(1), h = t.size(2), w = t.size(3);
    check_divisible(h, w, s);
    if (s == 1) return x;
    auto pooled = t.view({n, c, h / s, s, w / s, s}).sum({3, 5});
    return from_nchw(pooled, ndim);
}

torch::Tensor nn_upsample(const torch::Tensor& x, int64_t s) {
    if (s < 1) throw std::invalid_argument("upsampling factor must be >= 1");
    if (s == 1) return x;
    return x.repeat_interleave(s, -2).repeat_interleave(s, -1);
}

torch::Tensor n2_normalize(const torch::Tensor& x, int64_t s, double eps) {
    int64_t ndim;
    auto t = to_nchw(x, ndim);
    check_divisible(t.size(2), t.size(3), s);
    if (t.lt(0).any().item<bool>()) {
        throw std::invalid_argument(
            "n2_normalize requires non-negative input; apply a non-negativity "
            "activation first");
    }
    auto denom = nn_upsample(sum_pool(t, s), s) + eps;
    return from_nchw(t / denom, ndim);
}

torch::Tensor distributional_upsample(const torch::Tensor& coarse,
                                      const torch::Tensor& dist, int64_t s) {
    int64_t cnd, dnd;
    auto c = to_nchw(coarse, cnd);
    auto d = to_nchw(dist, dnd);
    if (c.size(2) * s != d.size(2) || c.size(3) * s != d.size(3)) {
        throw std::invalid_argument(
            "distribution dims (" + std::to_string(d.size(2)) + "x" +
            std::to_string(d.size(3)) + ") must equal coarse dims x " +
            std::to_string(s));
    }
    return from_nchw(nn_upsample(c, s) * d, dnd);
}

torch::Tensor structural_loss(const torch::Tensor& coarse,
                              const torch::Tensor& fine_pred, int64_t n) {
    int64_t cnd, fnd;
    auto c = to_nchw(coarse, cnd);
    auto f = to_nchw(fine_pred, fnd);
    if (c.size(2) * n != f.size(2) || c.size(3) * n != f.size(3)) {
        throw std::invalid_argument("fine dims must equal coarse dims x " +
                                    std::to_string(n));
    }
    return (c - sum_pool(f, n)).abs().sum();
}

GradCheckReport n2_normalize_grad_check(int64_t height, int64_t width,
                                        int64_t s, double eps, uint64_t seed) {
    torch::NoGradGuard no_grad_outer;
    auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto base = torch::rand({height, width}, gen, opts) + 0.1;
    auto weights = torch::randn({height, width}, gen, opts);

    auto functional = [&](const torch::Tensor& v) {
        return (weights * n2_normalize(v, s, eps)).sum();
    };

    torch::Tensor analytic;
    {
        torch::AutoGradMode enable_grad(true);
        auto x = base.clone().requires_grad_(true);
        functional(x).backward();
        analytic = x.grad().clone();
    }

    const double step = 1e-5;
    auto fd = torch::zeros_like(base);
    auto flat = base.view({-1});
    auto fd_flat = fd.view({-1});
    for (int64_t i = 0; i < flat.numel(); ++i) {
        const double orig = flat[i].item<double>();
        flat[i] = orig + step;
        const double up = functional(base).item<double>();
        flat[i] = orig - step;
        const double down = functional(base).item<double>();
        flat[i] = orig;
        fd_flat[i] = (up - down) / (2.0 * step);
    }

    GradCheckReport report;
    report.max_abs_error = (analytic - fd).abs().max().item<double>();
    const double scale = std::max(fd.abs().max().item<double>(), 1e-12);
    report.max_rel_error = report.max_abs_error / scale;
    return report;
}

}  // namespace ufi
