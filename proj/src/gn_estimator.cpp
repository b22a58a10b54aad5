#include "gridnse/gn_estimator.hpp"

#include "gridnse/errors.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace gridnse {

void build_normal_system(const Eigen::SparseMatrix<double>& jacobian,
                         const Eigen::VectorXd& weights, const Eigen::VectorXd& residual,
                         Eigen::SparseMatrix<double>& gain, Eigen::VectorXd& rhs) {
    // G as (sqrtW J)^T (sqrtW J), then symmetrized so G == G^T holds exactly
    // in floating point as well.
    Eigen::SparseMatrix<double> scaled_j = jacobian;
    for (int k = 0; k < scaled_j.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(scaled_j, k); it; ++it)
            it.valueRef() *= std::sqrt(weights[it.row()]);
    const Eigen::SparseMatrix<double> product =
        Eigen::SparseMatrix<double>(scaled_j.transpose()) * scaled_j;
    gain = 0.5 * (product + Eigen::SparseMatrix<double>(product.transpose()));
    rhs = jacobian.transpose() * (weights.asDiagonal() * residual);
}

double condition_estimate(const Eigen::SparseMatrix<double>& gain) {
    const int n = static_cast<int>(gain.rows());
    if (n == 0) return 0.0;
    const double inf = std::numeric_limits<double>::infinity();

    // Deterministic pseudo-random start vector.
    Eigen::VectorXd v(n);
    std::uint64_t s = 0x243f6a8885a308d3ULL;
    for (int i = 0; i < n; ++i) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        v[i] = static_cast<double>(s >> 11) * 0x1.0p-53 - 0.5;
    }
    v.normalize();

    double lambda_max = 0.0;
    for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd w = gain * v;
        const double norm = w.norm();
        if (!(norm > 0.0) || !w.allFinite()) return inf;
        w /= norm;
        const double estimate = v.dot(gain * v);
        if (it > 10 && std::abs(estimate - lambda_max) <= 1e-10 * std::abs(estimate)) {
            lambda_max = estimate;
            break;
        }
        lambda_max = estimate;
        v = w;
    }

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(gain);
    if (solver.info() != Eigen::Success) return inf;
    s = 0x13198a2e03707344ULL;
    for (int i = 0; i < n; ++i) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        v[i] = static_cast<double>(s >> 11) * 0x1.0p-53 - 0.5;
    }
    v.normalize();
    double lambda_min = 0.0;
    for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd w = solver.solve(v);
        const double norm = w.norm();
        if (!(norm > 0.0) || !w.allFinite()) return inf;
        w /= norm;
        const double estimate = w.dot(gain * w);
        if (it > 10 && std::abs(estimate - lambda_min) <= 1e-10 * std::abs(estimate)) {
            lambda_min = estimate;
            break;
        }
        lambda_min = estimate;
        v = w;
    }
    if (!(lambda_min > 0.0)) return inf;
    return lambda_max / lambda_min;
}

namespace {

bool has_absolute_angle_reference(const MeasurementSet& ms) {
    for (const Measurement& m : ms.items)
        if (is_angle_kind(m.kind)) return true;
    return false;
}

// Drops one column (the pinned reference angle) from a sparse matrix.
Eigen::SparseMatrix<double> drop_column(const Eigen::SparseMatrix<double>& a, int col) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(a.nonZeros()));
    for (int k = 0; k < a.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
            if (it.col() == col) continue;
            triplets.emplace_back(it.row(), it.col() > col ? it.col() - 1 : it.col(), it.value());
        }
    Eigen::SparseMatrix<double> out(a.rows(), a.cols() - 1);
    out.setFromTriplets(triplets.begin(), triplets.end());
    return out;
}

} // namespace

std::optional<StateVector> try_gn_solve(const PowerSystem& sys, const MeasurementSet& ms,
                                        const GnSettings& settings, GnReport& report) {
    if (ms.items.empty()) throw ValidationError("gn_solve needs a nonempty measurement set");
    ms.validate(sys);
    const int n = sys.bus_count();
    const int ref = sys.reference_bus();
    const bool pin_reference = !has_absolute_angle_reference(ms);
    const int pinned_col = n + ref;

    report = GnReport{};
    StateVector x = settings.warm_start ? *settings.warm_start : StateVector::flat(n);
    if (pin_reference) x.va[ref] = 0.0;

    Eigen::VectorXd z(ms.size());
    for (int i = 0; i < ms.size(); ++i) z[i] = ms.items[static_cast<std::size_t>(i)].value;

    // Objective pieces. Angle residuals are circular: a measurement of -3.1
    // rad against an h of +3.1 rad is a 0.08 rad mismatch, not -6.2. The
    // "stable" part excludes current-angle rows, which are discontinuous
    // near |I| = 0 (the clamp zeroes them at a flat start and they snap on
    // with arbitrary angles at any nonzero current); acceptance may fall
    // back to it so the first step can leave the flat start at all.
    auto ssr_parts = [&](const StateVector& state, double& total, double& stable) {
        total = stable = 0.0;
        for (int i = 0; i < ms.size(); ++i) {
            const Measurement& m = ms.items[static_cast<std::size_t>(i)];
            double r = z[i] - eval_h(sys, state, m);
            if (is_angle_kind(m.kind)) r = wrap_angle(r);
            const double cost = r * r / m.variance;
            total += cost;
            if (m.kind != MeasurementKind::pmu_current_angle) stable += cost;
        }
    };

    // Gauss-Newton direction with a Levenberg-Marquardt safeguard: the
    // normal matrix is scaled to unit diagonal, a ridge lambda*I is added in
    // the scaled coordinates, and lambda adapts so each accepted step stays
    // inside the region where the linearization is trustworthy. Near the
    // minimum lambda collapses and the iteration is plain Gauss-Newton.
    double lambda = 1e-3;
    Eigen::SparseMatrix<double> gain;
    Eigen::VectorXd rhs;
    double current_total = 0.0, current_stable = 0.0;
    ssr_parts(x, current_total, current_stable);

    for (int iter = 1; iter <= settings.max_iter; ++iter) {
        report.iterations = iter;
        StackedMeasurements stacked = stack(sys, x, ms);
        Eigen::VectorXd residual = z - stacked.h;
        for (int i = 0; i < ms.size(); ++i)
            if (is_angle_kind(ms.items[static_cast<std::size_t>(i)].kind))
                residual[i] = wrap_angle(residual[i]);
        report.final_residual_norm =
            std::sqrt((stacked.weights.array() * residual.array().square()).mean());

        Eigen::SparseMatrix<double> jac =
            pin_reference ? drop_column(stacked.jacobian, pinned_col) : stacked.jacobian;
        build_normal_system(jac, stacked.weights, residual, gain, rhs);

        const int dim = static_cast<int>(gain.rows());
        Eigen::VectorXd scale(dim);
        bool deficient = false;
        for (int i = 0; i < dim; ++i) {
            const double d = gain.coeff(i, i);
            if (!(d > 0.0)) deficient = true;
            scale[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
        }
        Eigen::SparseMatrix<double> scaled =
            scale.asDiagonal() * gain * scale.asDiagonal();
        if (!deficient) {
            // A vanishing pivot of the unit-diagonal-scaled matrix marks a
            // state direction with no measurement information at this
            // iterate (expected at a flat start where current-magnitude
            // rows vanish). Such iterations still run, ridge-damped; only a
            // deficiency that persists at the accepted stopping iterate is
            // reported as unobservable.
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> probe(scaled);
            deficient =
                probe.info() != Eigen::Success || probe.vectorD().minCoeff() <= 1e-10;
        }

        bool accepted = false;
        double accepted_step_norm = 0.0;
        for (int attempt = 0; attempt < 16 && !accepted; ++attempt) {
            Eigen::SparseMatrix<double> damped = scaled;
            for (int i = 0; i < dim; ++i) damped.coeffRef(i, i) += lambda;
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
            if (solver.info() != Eigen::Success) {
                lambda = std::min(lambda * 4.0, 1e8);
                continue;
            }
            const Eigen::VectorXd step =
                scale.asDiagonal() * solver.solve(scale.asDiagonal() * rhs);
            if (!step.allFinite()) {
                lambda = std::min(lambda * 4.0, 1e8);
                continue;
            }
            double step_norm = 0.0;
            for (Eigen::Index i = 0; i < step.size(); ++i)
                step_norm = std::max(step_norm, std::abs(step[i]));

            // Stationary point: a near-Newton direction has collapsed.
            if (step_norm <= settings.tol_increment && lambda <= 1e-3) {
                if (deficient) {
                    report.failure = "unobservable";
                    report.condition_estimate = std::numeric_limits<double>::infinity();
                    return std::nullopt;
                }
                if ((x.vm.array() <= 0.0).any()) {
                    report.failure = "divergence";
                    return std::nullopt;
                }
                for (int bus = 0; bus < n; ++bus) x.va[bus] = wrap_angle(x.va[bus]);
                if (pin_reference) x.va[ref] = 0.0;
                report.converged = true;
                if (settings.estimate_condition)
                    report.condition_estimate = condition_estimate(gain);
                return x;
            }

            StateVector trial = x;
            int col = 0;
            for (int full = 0; full < 2 * n; ++full) {
                if (pin_reference && full == pinned_col) continue;
                const double delta = step[col++];
                if (full < n)
                    trial.vm[full] += delta;
                else
                    trial.va[full - n] += delta;
            }
            double total = 0.0, stable = 0.0;
            bool improves = false;
            if (trial.vm.allFinite() && trial.va.allFinite()) {
                ssr_parts(trial, total, stable);
                improves = std::isfinite(total) &&
                           (total < current_total || stable < current_stable);
            }
            if (improves) {
                if (std::getenv("GRIDNSE_DEBUG_GN"))
                    std::fprintf(stderr, "it%d step=%.3g lambda=%.2g ssr=%.6g rms=%.4g\n", iter,
                                 step_norm, lambda, total, report.final_residual_norm);
                x = trial;
                current_total = total;
                current_stable = stable;
                accepted = true;
                accepted_step_norm = step_norm;
                lambda = std::max(lambda / 3.0, 1e-12);
            } else {
                lambda = std::min(lambda * 4.0, 1e8);
            }
        }
        if (!accepted) {
            report.failure = "divergence";
            return std::nullopt;
        }
        if (!x.vm.allFinite() || !x.va.allFinite() || x.vm.lpNorm<Eigen::Infinity>() > 1e3) {
            report.failure = "divergence";
            return std::nullopt;
        }
        if (accepted_step_norm <= settings.tol_increment && lambda <= 1e-3) {
            if (deficient) {
                report.failure = "unobservable";
                report.condition_estimate = std::numeric_limits<double>::infinity();
                return std::nullopt;
            }
            if ((x.vm.array() <= 0.0).any()) {
                report.failure = "divergence";
                return std::nullopt;
            }
            for (int bus = 0; bus < n; ++bus) x.va[bus] = wrap_angle(x.va[bus]);
            if (pin_reference) x.va[ref] = 0.0;
            report.converged = true;
            if (settings.estimate_condition) report.condition_estimate = condition_estimate(gain);
            return x;
        }
    }
    report.failure = "divergence";
    return std::nullopt;
}

std::pair<StateVector, GnReport> gn_solve(const PowerSystem& sys, const MeasurementSet& ms,
                                          const GnSettings& settings) {
    GnReport report;
    auto solution = try_gn_solve(sys, ms, settings, report);
    if (!solution) {
        if (report.failure == "unobservable")
            throw UnobservableError("gain matrix factorization failed even with damping");
        throw DivergenceError("gauss-newton did not converge in " +
                                  std::to_string(report.iterations) + " iterations",
                              report.final_residual_norm);
    }
    return {std::move(*solution), report};
}

std::string serialize_solution(const StateVector& x, const GnReport& report) {
    std::ostringstream out;
    out << "bus,V,theta\n";
    char buf[96];
    for (int bus = 0; bus < x.size(); ++bus) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", bus, x.vm[bus], x.va[bus]);
        out << buf;
    }
    out << "{ \"converged\": " << (report.converged ? "true" : "false")
        << ", \"iterations\": " << report.iterations
        << ", \"residual_rms\": " << report.final_residual_norm
        << ", \"condition_estimate\": " << report.condition_estimate << " }\n";
    return out.str();
}

} // namespace gridnse
