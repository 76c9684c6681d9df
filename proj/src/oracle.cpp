#include "wproj/oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "wproj/errors.hpp"

namespace wproj::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t square_side(std::size_t count, const char* what) {
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(count))));
    if (n * n != count) throw ShapeError(std::string(what) + ": cost matrix is not square");
    return n;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
}

}  // namespace

std::vector<double> dense_grid_cost(std::size_t height, std::size_t width, double p) {
    if (!(p > 0.0)) throw ParameterError("dense_grid_cost: p must be positive");
    const std::size_t n = height * width;
    std::vector<double> c(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            const double dr = static_cast<double>(a / width) - static_cast<double>(b / width);
            const double dc = static_cast<double>(a % width) - static_cast<double>(b % width);
            const double sq = dr * dr + dc * dc;
            c[a * n + b] = sq == 0.0 ? 0.0 : (p == 1.0 ? std::sqrt(sq) : (p == 2.0 ? sq : std::pow(sq, p / 2.0)));
        }
    }
    return c;
}

std::vector<double> dense_local_cost(std::size_t height, std::size_t width, const LocalCostKernel& kernel,
                                     double outside) {
    const std::size_t n = height * width;
    const auto r = kernel.radius();
    std::vector<double> c(n * n, outside);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            const auto dr = static_cast<std::ptrdiff_t>(b / width) - static_cast<std::ptrdiff_t>(a / width);
            const auto dc = static_cast<std::ptrdiff_t>(b % width) - static_cast<std::ptrdiff_t>(a % width);
            if (std::abs(dr) <= r && std::abs(dc) <= r) c[a * n + b] = kernel.at(dr, dc);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Transportation problem by successive shortest paths.

TransportSolution solve_transport(std::span<const double> source, std::span<const double> target,
                                  std::span<const double> cost) {
    const std::size_t n = source.size();
    const std::size_t m = target.size();
    if (cost.size() != n * m) throw ShapeError("solve_transport: cost must be n x m");
    for (double v : source) {
        if (!(v >= 0.0)) throw ParameterError("solve_transport: negative source mass");
    }
    for (double v : target) {
        if (!(v >= 0.0)) throw ParameterError("solve_transport: negative target mass");
    }
    for (double v : cost) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("solve_transport: costs must be finite and >= 0");
    }
    const double supply_total = std::accumulate(source.begin(), source.end(), 0.0);
    const double demand_total = std::accumulate(target.begin(), target.end(), 0.0);
    const double scale = std::max(1.0, std::max(supply_total, demand_total));
    if (std::abs(supply_total - demand_total) > 1e-9 * scale) {
        throw ParameterError("solve_transport: total masses differ");
    }

    std::vector<double> supply(source.begin(), source.end());
    std::vector<double> demand(target.begin(), target.end());
    std::vector<double> flow(n * m, 0.0);
    // Potentials p over sources [0, n) and targets [n, n + m); reduced cost of
    // i -> j is C_ij + p_i - p_j >= 0, and zero wherever flow is positive.
    std::vector<double> pot(n + m, 0.0);
    std::vector<double> dist(n + m);
    std::vector<std::ptrdiff_t> parent(n + m);
    std::vector<char> done(n + m);
    const double eps_mass = 1e-15 * scale;

    auto remaining = [eps_mass](const std::vector<double>& v) {
        return std::any_of(v.begin(), v.end(), [eps_mass](double e) { return e > eps_mass; });
    };

    std::size_t guard = 0;
    const std::size_t max_augment = 50 * (n + m) * (n + m) + 100;
    while (remaining(supply) && remaining(demand)) {
        if (++guard > max_augment) throw SolverError("solve_transport: augmentation limit reached");
        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(parent.begin(), parent.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (supply[i] > eps_mass) dist[i] = 0.0;
        }
        // Dense Dijkstra.
        std::ptrdiff_t sink = -1;
        double sink_dist = kInf;
        for (;;) {
            std::ptrdiff_t best = -1;
            double best_d = kInf;
            for (std::size_t v = 0; v < n + m; ++v) {
                if (!done[v] && dist[v] < best_d) {
                    best_d = dist[v];
                    best = static_cast<std::ptrdiff_t>(v);
                }
            }
            if (best < 0) break;
            const auto b = static_cast<std::size_t>(best);
            done[b] = 1;
            if (b >= n) {
                const std::size_t j = b - n;
                if (demand[j] > eps_mass) {
                    sink = best;
                    sink_dist = best_d;
                    break;
                }
                // Reverse arcs j -> i along positive flow.
                for (std::size_t i = 0; i < n; ++i) {
                    if (done[i] || flow[i * m + j] <= 0.0) continue;
                    const double rc = std::max(0.0, -(cost[i * m + j] + pot[i] - pot[b]));
                    if (best_d + rc < dist[i]) {
                        dist[i] = best_d + rc;
                        parent[i] = best;
                    }
                }
            } else {
                for (std::size_t j = 0; j < m; ++j) {
                    const std::size_t t = n + j;
                    if (done[t]) continue;
                    const double rc = std::max(0.0, cost[b * m + j] + pot[b] - pot[t]);
                    if (best_d + rc < dist[t]) {
                        dist[t] = best_d + rc;
                        parent[t] = best;
                    }
                }
            }
        }
        if (sink < 0) throw SolverError("solve_transport: no augmenting path");
        for (std::size_t v = 0; v < n + m; ++v) pot[v] += std::min(dist[v], sink_dist);

        // Bottleneck along the path.
        double delta = demand[static_cast<std::size_t>(sink) - n];
        std::ptrdiff_t v = sink;
        while (parent[static_cast<std::size_t>(v)] >= 0) {
            const auto u = parent[static_cast<std::size_t>(v)];
            if (static_cast<std::size_t>(u) >= n) {
                // Reverse arc target u -> source v consumes flow on (v, u).
                delta = std::min(delta, flow[static_cast<std::size_t>(v) * m + static_cast<std::size_t>(u) - n]);
            }
            v = u;
        }
        delta = std::min(delta, supply[static_cast<std::size_t>(v)]);
        const auto origin = static_cast<std::size_t>(v);

        v = sink;
        while (parent[static_cast<std::size_t>(v)] >= 0) {
            const auto u = parent[static_cast<std::size_t>(v)];
            if (static_cast<std::size_t>(u) < n) {
                flow[static_cast<std::size_t>(u) * m + static_cast<std::size_t>(v) - n] += delta;
            } else {
                double& f = flow[static_cast<std::size_t>(v) * m + static_cast<std::size_t>(u) - n];
                f = (f - delta <= 1e-300) ? 0.0 : f - delta;
            }
            v = u;
        }
        supply[origin] -= delta;
        demand[static_cast<std::size_t>(sink) - n] -= delta;
    }

    TransportSolution sol;
    sol.plan = std::move(flow);
    sol.source_potential.resize(n);
    sol.target_potential.resize(m);
    for (std::size_t i = 0; i < n; ++i) sol.source_potential[i] = -pot[i];
    for (std::size_t j = 0; j < m; ++j) sol.target_potential[j] = pot[n + j];
    // Shift so that the smallest target potential is zero; the dual is invariant.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) sol.cost += sol.plan[i * m + j] * cost[i * m + j];
    }
    double dual = 0.0;
    for (std::size_t i = 0; i < n; ++i) dual += source[i] * sol.source_potential[i];
    for (std::size_t j = 0; j < m; ++j) dual += target[j] * sol.target_potential[j];
    sol.dual_value = dual;

    const double cost_scale = std::max(1.0, max_abs(cost));
    double violation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            violation = std::max(violation,
                                 sol.source_potential[i] + sol.target_potential[j] - cost[i * m + j]);
        }
    }
    if (violation > 1e-9 * cost_scale) throw SolverError("solve_transport: dual certificate infeasible");
    // The gap bound covers the tolerated mass mismatch times the potential range.
    const double pot_range = std::max(max_abs(sol.source_potential), max_abs(sol.target_potential));
    if (std::abs(sol.cost - sol.dual_value) >
        1e-10 * cost_scale * scale + 2.0 * pot_range * std::abs(supply_total - demand_total) + 1e-12) {
        throw SolverError("solve_transport: duality gap too large");
    }
    return sol;
}

double exact_ot_distance(std::span<const double> x, std::span<const double> y, std::span<const double> cost) {
    if (x.size() != y.size()) throw ShapeError("exact_ot_distance: size mismatch");
    if (cost.size() != x.size() * x.size()) throw ShapeError("exact_ot_distance: cost must be n x n");
    if (x.size() > 256) throw ParameterError("exact_ot_distance: the oracle supports at most 256 pixels");
    return solve_transport(x, y, cost).cost;
}

double exact_ot_distance(const MassVector& x, const MassVector& y, std::span<const double> cost) {
    if (!(x.shape() == y.shape())) throw ShapeError("exact_ot_distance: shape mismatch");
    return exact_ot_distance(x.values(), y.values(), cost);
}

// ---------------------------------------------------------------------------
// Primal-dual interior point method for
//   min 0.5 |w - P pi|^2 [if quadratic] + lin^T pi
//   s.t. row sums of pi = a, [column sums = b], [<C, pi> + s = eps], pi, s >= 0
// where P maps a plan to its column sums.

double QpCertificate::kkt_residual() const {
    return std::max({primal_residual, dual_residual, complementarity});
}

namespace {

struct TransportProgram {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> a;
    bool has_columns = false;
    std::vector<double> b;
    bool has_budget = false;
    double eps = 0.0;
    std::vector<double> cost;
    std::vector<double> lin;
    bool quadratic = false;
    std::vector<double> w;
};

struct IpmSolution {
    std::vector<double> u;  // plan entries, then the budget slack
    std::vector<double> y;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    QpCertificate cert;
};

class TransportIpm {
public:
    explicit TransportIpm(const TransportProgram& prog) : p_(prog) {
        nplan_ = p_.n * p_.m;
        nvar_ = nplan_ + (p_.has_budget ? 1 : 0);
        ncol_rows_ = p_.has_columns ? p_.m - 1 : 0;  // the last column constraint is implied
        nrows_ = p_.n + ncol_rows_ + (p_.has_budget ? 1 : 0);
        rhs_.assign(nrows_, 0.0);
        for (std::size_t i = 0; i < p_.n; ++i) rhs_[i] = p_.a[i];
        for (std::size_t j = 0; j < ncol_rows_; ++j) rhs_[p_.n + j] = p_.b[j];
        if (p_.has_budget) rhs_[nrows_ - 1] = p_.eps;
        q_.assign(nvar_, 0.0);
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) {
                double v = p_.lin.empty() ? 0.0 : p_.lin[i * p_.m + j];
                if (p_.quadratic) v -= p_.w[j];
                q_[i * p_.m + j] = v;
            }
        }
    }

    IpmSolution solve() {
        const double mass = std::accumulate(p_.a.begin(), p_.a.end(), 0.0);
        std::vector<double> u(nvar_), s(nvar_, 1.0), y(nrows_, 0.0);
        for (std::size_t k = 0; k < nplan_; ++k) u[k] = std::max(mass, 1e-3) / static_cast<double>(nplan_);
        if (p_.has_budget) u[nplan_] = std::max(p_.eps, 1e-2);

        const double b_scale = 1.0 + max_abs(rhs_);
        const double q_scale = 1.0 + max_abs(q_);
        std::vector<double> rp(nrows_), rd(nvar_), d(nvar_), t(nvar_), r1(nvar_);
        std::vector<double> du(nvar_), ds(nvar_), dy(nrows_), du_aff(nvar_), ds_aff(nvar_);
        IpmSolution best;
        double best_kkt = kInf;

        const std::size_t max_iter = 200;
        std::size_t iter = 0;
        for (; iter < max_iter; ++iter) {
            residuals(u, s, y, rp, rd);
            const double mu = dot(u, s) / static_cast<double>(nvar_);
            QpCertificate cert;
            cert.primal_residual = max_abs(rp);
            cert.dual_residual = max_abs(rd);
            for (std::size_t k = 0; k < nvar_; ++k) cert.complementarity = std::max(cert.complementarity, u[k] * s[k]);
            cert.iterations = iter;
            if (cert.kkt_residual() < best_kkt) {
                best_kkt = cert.kkt_residual();
                best = finish(u, s, y, cert);
            }
            if (cert.primal_residual <= 1e-12 * b_scale && cert.dual_residual <= 1e-12 * q_scale && mu <= 1e-14) break;

            for (std::size_t k = 0; k < nvar_; ++k) d[k] = s[k] / u[k];
            factor(d);

            // Predictor.
            for (std::size_t k = 0; k < nvar_; ++k) t[k] = -u[k] * s[k];
            newton(d, rp, rd, t, u, r1, du_aff, dy, ds_aff);
            const double a_aff = std::min(max_step(u, du_aff), max_step(s, ds_aff));
            double mu_aff = 0.0;
            for (std::size_t k = 0; k < nvar_; ++k) mu_aff += (u[k] + a_aff * du_aff[k]) * (s[k] + a_aff * ds_aff[k]);
            mu_aff /= static_cast<double>(nvar_);
            const double sigma = std::pow(mu_aff / mu, 3.0);

            // Corrector.
            for (std::size_t k = 0; k < nvar_; ++k) t[k] = -u[k] * s[k] + sigma * mu - du_aff[k] * ds_aff[k];
            newton(d, rp, rd, t, u, r1, du, dy, ds);
            const double step = std::min(1.0, 0.995 * std::min(max_step(u, du), max_step(s, ds)));
            for (std::size_t k = 0; k < nvar_; ++k) {
                u[k] = std::max(u[k] + step * du[k], 1e-300);
                s[k] = std::max(s[k] + step * ds[k], 1e-300);
            }
            for (std::size_t r = 0; r < nrows_; ++r) y[r] += step * dy[r];
        }
        residuals(u, s, y, rp, rd);
        QpCertificate cert;
        cert.primal_residual = max_abs(rp);
        cert.dual_residual = max_abs(rd);
        for (std::size_t k = 0; k < nvar_; ++k) cert.complementarity = std::max(cert.complementarity, u[k] * s[k]);
        cert.iterations = iter;
        if (cert.kkt_residual() <= best_kkt) best = finish(u, s, y, cert);
        return best;
    }

private:
    static double dot(const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
        return acc;
    }

    static double max_step(const std::vector<double>& v, const std::vector<double>& dv) {
        double step = kInf;
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (dv[k] < 0.0) step = std::min(step, -v[k] / dv[k]);
        }
        return std::min(step, 1.0);
    }

    // Rows touched by plan variable (i, j) and their coefficients.
    template <class F>
    void for_rows(std::size_t i, std::size_t j, F&& f) const {
        f(i, 1.0);
        if (j < ncol_rows_) f(p_.n + j, 1.0);
        if (p_.has_budget) f(nrows_ - 1, p_.cost[i * p_.m + j]);
    }

    void apply_a(const std::vector<double>& u, std::vector<double>& out) const {
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) {
                const double v = u[i * p_.m + j];
                for_rows(i, j, [&](std::size_t r, double c) { out[r] += c * v; });
            }
        }
        if (p_.has_budget) out[nrows_ - 1] += u[nplan_];
    }

    void apply_at(const std::vector<double>& y, std::vector<double>& out) const {
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) {
                double acc = 0.0;
                for_rows(i, j, [&](std::size_t r, double c) { acc += c * y[r]; });
                out[i * p_.m + j] = acc;
            }
        }
        if (p_.has_budget) out[nplan_] = y[nrows_ - 1];
    }

    std::vector<double> column_sums(const std::vector<double>& u) const {
        std::vector<double> cs(p_.m, 0.0);
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) cs[j] += u[i * p_.m + j];
        }
        return cs;
    }

    void apply_q(const std::vector<double>& u, std::vector<double>& out) const {
        std::fill(out.begin(), out.end(), 0.0);
        if (!p_.quadratic) return;
        const auto cs = column_sums(u);
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) out[i * p_.m + j] = cs[j];
        }
    }

    void residuals(const std::vector<double>& u, const std::vector<double>& s, const std::vector<double>& y,
                   std::vector<double>& rp, std::vector<double>& rd) const {
        apply_a(u, rp);
        for (std::size_t r = 0; r < nrows_; ++r) rp[r] = rhs_[r] - rp[r];
        std::vector<double> aty(nvar_), qu(nvar_);
        apply_at(y, aty);
        apply_q(u, qu);
        for (std::size_t k = 0; k < nvar_; ++k) rd[k] = qu[k] + q_[k] - aty[k] - s[k];
    }

    // Builds the Schur complement A (Q + D)^-1 A^T. Q + D is diagonal plus a
    // column-sum Gram term whose inverse follows from Woodbury with a diagonal core.
    void factor(const std::vector<double>& d) {
        inv_d_.resize(nvar_);
        for (std::size_t k = 0; k < nvar_; ++k) inv_d_[k] = 1.0 / d[k];
        core_.assign(p_.m, 0.0);
        if (p_.quadratic) {
            for (std::size_t j = 0; j < p_.m; ++j) {
                double acc = 1.0;
                for (std::size_t i = 0; i < p_.n; ++i) acc += inv_d_[i * p_.m + j];
                core_[j] = 1.0 / acc;
            }
        }
        Eigen::MatrixXd schur = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nrows_), static_cast<Eigen::Index>(nrows_));
        Eigen::MatrixXd e = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nrows_), static_cast<Eigen::Index>(p_.m));
        std::size_t rows[3];
        double coef[3];
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) {
                const double id = inv_d_[i * p_.m + j];
                std::size_t cnt = 0;
                for_rows(i, j, [&](std::size_t r, double c) {
                    rows[cnt] = r;
                    coef[cnt] = c;
                    ++cnt;
                });
                for (std::size_t a = 0; a < cnt; ++a) {
                    for (std::size_t b = 0; b < cnt; ++b) {
                        schur(static_cast<Eigen::Index>(rows[a]), static_cast<Eigen::Index>(rows[b])) += coef[a] * coef[b] * id;
                    }
                    if (p_.quadratic) e(static_cast<Eigen::Index>(rows[a]), static_cast<Eigen::Index>(j)) += coef[a] * id;
                }
            }
        }
        if (p_.has_budget) schur(static_cast<Eigen::Index>(nrows_ - 1), static_cast<Eigen::Index>(nrows_ - 1)) += inv_d_[nplan_];
        if (p_.quadratic) {
            Eigen::VectorXd core = Eigen::Map<const Eigen::VectorXd>(core_.data(), static_cast<Eigen::Index>(p_.m));
            schur -= e * core.asDiagonal() * e.transpose();
        }
        const double reg = 1e-15 * std::max(1.0, schur.diagonal().cwiseAbs().maxCoeff());
        schur.diagonal().array() += reg;
        ldlt_.compute(schur);
    }

    void apply_h(std::vector<double>& z) const {
        for (std::size_t k = 0; k < nvar_; ++k) z[k] *= inv_d_[k];
        if (!p_.quadratic) return;
        auto c = column_sums(z);
        for (std::size_t j = 0; j < p_.m; ++j) c[j] *= core_[j];
        for (std::size_t i = 0; i < p_.n; ++i) {
            for (std::size_t j = 0; j < p_.m; ++j) z[i * p_.m + j] -= inv_d_[i * p_.m + j] * c[j];
        }
    }

    // Solves the Newton system with complementarity target t:
    //   (Q + D) du - A^T dy = -rd + t / u,  A du = rp,  ds = (t - s * du) / u.
    void newton(const std::vector<double>& d, const std::vector<double>& rp, const std::vector<double>& rd,
                const std::vector<double>& t, const std::vector<double>& u, std::vector<double>& r1,
                std::vector<double>& du, std::vector<double>& dy, std::vector<double>& ds) const {
        for (std::size_t k = 0; k < nvar_; ++k) r1[k] = -rd[k] + t[k] / u[k];
        std::vector<double> h_r1 = r1;
        apply_h(h_r1);
        std::vector<double> a_h_r1(nrows_);
        apply_a(h_r1, a_h_r1);
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(nrows_));
        for (std::size_t r = 0; r < nrows_; ++r) rhs(static_cast<Eigen::Index>(r)) = rp[r] - a_h_r1[r];
        const Eigen::VectorXd sol = ldlt_.solve(rhs);
        for (std::size_t r = 0; r < nrows_; ++r) dy[r] = sol(static_cast<Eigen::Index>(r));
        std::vector<double> aty(nvar_);
        apply_at(dy, aty);
        for (std::size_t k = 0; k < nvar_; ++k) du[k] = r1[k] + aty[k];
        apply_h(du);
        for (std::size_t k = 0; k < nvar_; ++k) ds[k] = t[k] / u[k] - d[k] * du[k];
    }

    IpmSolution finish(const std::vector<double>& u, const std::vector<double>& s, const std::vector<double>& y,
                       const QpCertificate& cert) const {
        IpmSolution out;
        out.u = u;
        out.y = y;
        out.cert = cert;
        std::vector<double> qu(nvar_);
        apply_q(u, qu);
        const double quad = 0.5 * dot(u, qu);
        const double half_ww = p_.quadratic ? 0.5 * std::inner_product(p_.w.begin(), p_.w.end(), p_.w.begin(), 0.0) : 0.0;
        out.primal_objective = quad + dot(q_, u) + half_ww;
        out.dual_objective = dot(rhs_, y) - quad + half_ww;
        out.cert.duality_gap = std::abs(out.primal_objective - out.dual_objective);
        (void)s;
        return out;
    }

    const TransportProgram& p_;
    std::size_t nplan_ = 0, nvar_ = 0, ncol_rows_ = 0, nrows_ = 0;
    std::vector<double> rhs_, q_, inv_d_, core_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

constexpr double kKktContract = 1e-8;

bool off_diagonal_positive(std::span<const double> cost, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j && !(cost[i * n + j] > 0.0)) return false;
        }
    }
    return true;
}

}  // namespace

BallProjection exact_ball_projection(std::span<const double> w, std::span<const double> x, double eps,
                                     std::span<const double> cost) {
    const std::size_t n = square_side(cost.size(), "exact_ball_projection");
    if (w.size() != n || x.size() != n) throw ShapeError("exact_ball_projection: size mismatch");
    if (n > 64) throw ParameterError("exact_ball_projection: the oracle supports at most 64 pixels");
    if (!(eps >= 0.0)) throw ParameterError("exact_ball_projection: eps must be non-negative");
    for (double v : x) {
        if (!(v >= 0.0)) throw ParameterError("exact_ball_projection: x must be non-negative");
    }

    BallProjection out;
    if (eps == 0.0 && off_diagonal_positive(cost, n)) {
        // The ball is the single point x.
        out.z.assign(x.begin(), x.end());
        out.plan.assign(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            out.plan[i * n + i] = x[i];
            out.objective += 0.5 * (w[i] - x[i]) * (w[i] - x[i]);
        }
        return out;
    }

    TransportProgram prog;
    prog.n = prog.m = n;
    prog.a.assign(x.begin(), x.end());
    prog.has_budget = true;
    prog.eps = eps;
    prog.cost.assign(cost.begin(), cost.end());
    prog.quadratic = true;
    prog.w.assign(w.begin(), w.end());
    TransportIpm ipm(prog);
    const IpmSolution sol = ipm.solve();
    if (sol.cert.kkt_residual() > kKktContract) {
        throw SolverError("exact_ball_projection: KKT residual " + std::to_string(sol.cert.kkt_residual()) +
                          " above contract");
    }
    out.plan.assign(sol.u.begin(), sol.u.begin() + static_cast<std::ptrdiff_t>(n * n));
    out.z.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.z[j] += out.plan[i * n + j];
            out.transport_cost += out.plan[i * n + j] * cost[i * n + j];
        }
    }
    for (std::size_t j = 0; j < n; ++j) out.objective += 0.5 * (w[j] - out.z[j]) * (w[j] - out.z[j]);
    out.certificate = sol.cert;
    return out;
}

SupportValue exact_support_function(std::span<const double> x, std::span<const double> y, double eps,
                                    std::span<const double> cost) {
    const std::size_t n = square_side(cost.size(), "exact_support_function");
    if (y.size() != n || x.size() != n) throw ShapeError("exact_support_function: size mismatch");
    if (n > 64) throw ParameterError("exact_support_function: the oracle supports at most 64 pixels");
    if (!(eps >= 0.0)) throw ParameterError("exact_support_function: eps must be non-negative");

    SupportValue out;
    if (eps == 0.0 && off_diagonal_positive(cost, n)) {
        out.z.assign(x.begin(), x.end());
        for (std::size_t i = 0; i < n; ++i) out.value -= x[i] * y[i];
        out.dual_value = out.value;
        return out;
    }

    // min sum_ij pi_ij y_j over the ball, negated.
    TransportProgram prog;
    prog.n = prog.m = n;
    prog.a.assign(x.begin(), x.end());
    prog.has_budget = true;
    prog.eps = eps;
    prog.cost.assign(cost.begin(), cost.end());
    prog.lin.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) prog.lin[i * n + j] = y[j];
    }
    TransportIpm ipm(prog);
    const IpmSolution sol = ipm.solve();
    if (sol.cert.kkt_residual() > kKktContract || sol.cert.duality_gap > kKktContract) {
        throw SolverError("exact_support_function: optimality certificate not reached");
    }
    out.z.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.z[j] += sol.u[i * n + j];
    }
    out.value = -sol.primal_objective;
    out.dual_value = -sol.dual_objective;
    out.certificate = sol.cert;
    return out;
}

}  // namespace wproj::oracle
