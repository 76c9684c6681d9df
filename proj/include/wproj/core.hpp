#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace wproj {

/// Shape of a multi-channel pixel grid. Values are laid out channel-major,
/// then row-major: index = (c * height + row) * width + col.
struct GridShape {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t pixels() const noexcept { return height * width; }
    std::size_t size() const noexcept { return channels * height * width; }

    friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Non-negative histogram over a pixel grid with cached per-channel mass.
class MassVector {
public:
    MassVector() = default;

    /// Throws ParameterError on negative or non-finite entries and ShapeError
    /// when the value count does not match the shape.
    MassVector(GridShape shape, std::vector<double> values);

    /// Single channel convenience constructor.
    MassVector(std::size_t height, std::size_t width, std::vector<double> values);

    const GridShape& shape() const noexcept { return shape_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> channel(std::size_t c) const;
    double total_mass(std::size_t c) const { return mass_.at(c); }
    double total_mass() const noexcept;

    double operator[](std::size_t i) const noexcept { return values_[i]; }
    std::size_t size() const noexcept { return values_.size(); }

private:
    GridShape shape_{};
    std::vector<double> values_;
    std::vector<double> mass_;
};

/// k x k window of transport costs, cost(di, dj) = (di^2 + dj^2)^(p/2).
class LocalCostKernel {
public:
    std::size_t size() const noexcept { return k_; }
    std::ptrdiff_t radius() const noexcept { return static_cast<std::ptrdiff_t>(k_ / 2); }
    double exponent() const noexcept { return p_; }

    /// Cost of moving mass by (di, dj); both offsets within [-radius, radius].
    double at(std::ptrdiff_t di, std::ptrdiff_t dj) const noexcept {
        return costs_[static_cast<std::size_t>((di + radius()) * static_cast<std::ptrdiff_t>(k_) + dj + radius())];
    }

    /// Row-major k*k costs.
    std::span<const double> costs() const noexcept { return costs_; }
    double max_cost() const noexcept;

    friend LocalCostKernel build_cost_kernel(std::size_t k, double p);

private:
    std::size_t k_ = 1;
    double p_ = 1.0;
    std::vector<double> costs_{0.0};
};

/// Throws ParameterError for even or zero k and non-positive p.
LocalCostKernel build_cost_kernel(std::size_t k, double p);

/// True when the k x k row-major kernel is invariant under offset negation.
bool is_point_symmetric(std::span<const double> kernel, std::size_t k);

/// out(i) = sum over in-image offsets d of kernel(d) * u(i + d).
/// Windows are clipped at the image border. `kernel` is k x k row-major.
std::vector<double> local_matvec(std::span<const double> kernel, std::size_t k,
                                 std::size_t height, std::size_t width,
                                 std::span<const double> u);

/// out(j) = sum over in-image offsets d of kernel(d) * u(j - d), i.e. u^T K.
std::vector<double> local_matvec_transposed(std::span<const double> kernel, std::size_t k,
                                            std::size_t height, std::size_t width,
                                            std::span<const double> u);

/// Scales each channel to unit mass. Returns the per-channel scale such that
/// original = normalized * scale. Throws ParameterError on an all-zero channel.
std::pair<MassVector, std::vector<double>> normalize_to_unit_mass(const MassVector& img);

/// Inverse of normalize_to_unit_mass.
MassVector rescale(const MassVector& img, std::span<const double> scale);

}  // namespace wproj
