#include "wproj/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "wproj/errors.hpp"

namespace wproj {

MassVector::MassVector(GridShape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
        throw ShapeError("MassVector: expected " + std::to_string(shape_.size()) + " values, got " +
                         std::to_string(values_.size()));
    }
    for (double v : values_) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ParameterError("MassVector: entries must be finite and non-negative");
        }
    }
    mass_.resize(shape_.channels);
    for (std::size_t c = 0; c < shape_.channels; ++c) {
        auto ch = channel(c);
        mass_[c] = std::accumulate(ch.begin(), ch.end(), 0.0);
    }
}

MassVector::MassVector(std::size_t height, std::size_t width, std::vector<double> values)
    : MassVector(GridShape{1, height, width}, std::move(values)) {}

std::span<const double> MassVector::channel(std::size_t c) const {
    if (c >= shape_.channels) throw ShapeError("MassVector: channel index out of range");
    return std::span<const double>(values_).subspan(c * shape_.pixels(), shape_.pixels());
}

double MassVector::total_mass() const noexcept {
    return std::accumulate(mass_.begin(), mass_.end(), 0.0);
}

double LocalCostKernel::max_cost() const noexcept {
    return *std::max_element(costs_.begin(), costs_.end());
}

LocalCostKernel build_cost_kernel(std::size_t k, double p) {
    if (k == 0 || k % 2 == 0) {
        throw ParameterError("build_cost_kernel: window size must be odd and positive, got " + std::to_string(k));
    }
    if (!(p > 0.0) || !std::isfinite(p)) {
        throw ParameterError("build_cost_kernel: exponent p must be positive");
    }
    LocalCostKernel kernel;
    kernel.k_ = k;
    kernel.p_ = p;
    kernel.costs_.assign(k * k, 0.0);
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    for (std::ptrdiff_t di = -r; di <= r; ++di) {
        for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
            const double sq = static_cast<double>(di * di + dj * dj);
            // p == 1 and p == 2 are the common cases; keep them exact.
            double cost = 0.0;
            if (sq > 0.0) {
                if (p == 2.0) cost = sq;
                else if (p == 1.0) cost = std::sqrt(sq);
                else cost = std::pow(sq, p / 2.0);
            }
            kernel.costs_[static_cast<std::size_t>((di + r) * static_cast<std::ptrdiff_t>(k) + dj + r)] = cost;
        }
    }
    return kernel;
}

bool is_point_symmetric(std::span<const double> kernel, std::size_t k) {
    if (kernel.size() != k * k) return false;
    for (std::size_t a = 0; a < k * k; ++a) {
        if (kernel[a] != kernel[k * k - 1 - a]) return false;
    }
    return true;
}

namespace {

void check_local_shapes(std::span<const double> kernel, std::size_t k, std::size_t height,
                        std::size_t width, std::span<const double> u) {
    if (k == 0 || k % 2 == 0 || kernel.size() != k * k) {
        throw ShapeError("local_matvec: kernel must be k x k with odd k");
    }
    if (u.size() != height * width) {
        throw ShapeError("local_matvec: vector length " + std::to_string(u.size()) +
                         " does not match a " + std::to_string(height) + "x" + std::to_string(width) + " grid");
    }
}

// sign = +1 gathers u(i + d), sign = -1 gathers u(i - d).
std::vector<double> windowed_sum(std::span<const double> kernel, std::size_t k, std::size_t height,
                                 std::size_t width, std::span<const double> u, std::ptrdiff_t sign) {
    check_local_shapes(kernel, k, height, width, u);
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    const auto kk = static_cast<std::ptrdiff_t>(k);
    std::vector<double> out(u.size(), 0.0);
    for (std::ptrdiff_t i = 0; i < h; ++i) {
        for (std::ptrdiff_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (std::ptrdiff_t di = -r; di <= r; ++di) {
                const std::ptrdiff_t ii = i + sign * di;
                if (ii < 0 || ii >= h) continue;
                for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                    const std::ptrdiff_t jj = j + sign * dj;
                    if (jj < 0 || jj >= w) continue;
                    acc += kernel[static_cast<std::size_t>((di + r) * kk + dj + r)] *
                           u[static_cast<std::size_t>(ii * w + jj)];
                }
            }
            out[static_cast<std::size_t>(i * w + j)] = acc;
        }
    }
    return out;
}

}  // namespace

std::vector<double> local_matvec(std::span<const double> kernel, std::size_t k, std::size_t height,
                                 std::size_t width, std::span<const double> u) {
    return windowed_sum(kernel, k, height, width, u, +1);
}

std::vector<double> local_matvec_transposed(std::span<const double> kernel, std::size_t k,
                                            std::size_t height, std::size_t width,
                                            std::span<const double> u) {
    return windowed_sum(kernel, k, height, width, u, -1);
}

std::pair<MassVector, std::vector<double>> normalize_to_unit_mass(const MassVector& img) {
    const auto& shape = img.shape();
    std::vector<double> scale(shape.channels);
    std::vector<double> values(img.values().begin(), img.values().end());
    for (std::size_t c = 0; c < shape.channels; ++c) {
        const double mass = img.total_mass(c);
        if (!(mass > 0.0)) {
            throw ParameterError("normalize_to_unit_mass: channel " + std::to_string(c) + " has zero mass");
        }
        scale[c] = mass;
        for (std::size_t i = 0; i < shape.pixels(); ++i) values[c * shape.pixels() + i] /= mass;
    }
    return {MassVector(shape, std::move(values)), std::move(scale)};
}

MassVector rescale(const MassVector& img, std::span<const double> scale) {
    const auto& shape = img.shape();
    if (scale.size() != shape.channels) throw ShapeError("rescale: one scale per channel expected");
    std::vector<double> values(img.values().begin(), img.values().end());
    for (std::size_t c = 0; c < shape.channels; ++c) {
        for (std::size_t i = 0; i < shape.pixels(); ++i) values[c * shape.pixels() + i] *= scale[c];
    }
    return MassVector(shape, std::move(values));
}

}  // namespace wproj
