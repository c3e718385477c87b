// SPDX-License-Identifier: Apache-2.0
#include "histost/domains/cluster.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "histost/common/errors.hpp"
#include "histost/common/rng.hpp"

namespace histost::dom {

using ad::Tensor;

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Tensor plus_plus_seed(const Tensor& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows(), d = x.cols();
    Tensor c(Tensor::Shape{k, d});
    auto place = [&](std::size_t slot, std::size_t i) { std::copy_n(x.row(i).begin(), d, c.row(slot).begin()); };
    place(0, uniform_index(rng, n));
    std::vector<double> best(n);
    for (std::size_t i = 0; i < n; ++i) best[i] = sq_dist(x.row(i), c.row(0));
    for (std::size_t j = 1; j < k; ++j) {
        double total = 0.0;
        for (double v : best) total += v;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = uniform01(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += best[i];
                if (acc > r && best[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = uniform_index(rng, n);
        }
        place(j, pick);
        for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], sq_dist(x.row(i), c.row(j)));
    }
    return c;
}

double assign(const Tensor& x, const Tensor& c, Labels& labels, std::vector<double>& dist) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t j = 0; j < c.rows(); ++j) {
            const double d = sq_dist(x.row(i), c.row(j));
            if (d < best) {
                best = d;
                arg = static_cast<int>(j);
            }
        }
        labels[i] = arg;
        dist[i] = best;
        inertia += best;
    }
    return inertia;
}

struct Run {
    Labels labels;
    Tensor centroids;
    double inertia;
};

Run lloyd(const Tensor& x, std::size_t k, Rng& rng, const KMeansOptions& o) {
    const std::size_t n = x.rows(), d = x.cols();
    Tensor c = plus_plus_seed(x, k, rng);
    Labels labels(n, 0);
    std::vector<double> dist(n);
    double inertia = assign(x, c, labels, dist);
    for (std::size_t it = 0; it < o.max_iter; ++it) {
        Tensor next(Tensor::Shape{k, d});
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto l = static_cast<std::size_t>(labels[i]);
            ++count[l];
            auto row = next.row(l);
            const auto xi = x.row(i);
            for (std::size_t f = 0; f < d; ++f) row[f] += xi[f];
        }
        std::vector<std::uint8_t> taken(n, 0);
        for (std::size_t j = 0; j < k; ++j) {
            if (count[j] == 0) {
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (!taken[i] && dist[i] > far_d) {
                        far_d = dist[i];
                        far = i;
                    }
                taken[far] = 1;
                std::copy_n(x.row(far).begin(), d, next.row(j).begin());
                continue;
            }
            for (auto& v : next.row(j)) v /= static_cast<double>(count[j]);
        }
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) shift = std::max(shift, std::sqrt(sq_dist(c.row(j), next.row(j))));
        c = std::move(next);
        inertia = assign(x, c, labels, dist);
        if (shift < o.tol) break;
    }
    return {std::move(labels), std::move(c), inertia};
}

}  // namespace

ClusterResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
    HISTOST_REQUIRE(x.ndim() == 2, "kmeans: expected a matrix");
    HISTOST_REQUIRE(k >= 1 && k <= x.rows(), "kmeans: need 1 <= k <= n, got k=" + std::to_string(k) + " n=" +
                                                 std::to_string(x.rows()));
    HISTOST_REQUIRE(options.n_init >= 1, "kmeans: n_init must be >= 1");
    ClusterResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < options.n_init; ++r) {
        Rng rng = make_rng(seed, "kmeans", r);
        Run run = lloyd(x, k, rng, options);
        if (run.inertia < best.inertia) {
            best.labels = std::move(run.labels);
            best.centroids = std::move(run.centroids);
            best.inertia = run.inertia;
        }
    }
    best.k = k;
    best.seed = seed;
    best.n_init = options.n_init;
    return best;
}

Tensor standardize_columns(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    Tensor out(Tensor::Shape{n, d});
    for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += x.at(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
        var /= static_cast<double>(n);
        const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t i = 0; i < n; ++i) out.at(i, j) = (x.at(i, j) - mu) * inv;
    }
    return out;
}

Tensor pca_project(const Tensor& x, std::size_t components) {
    HISTOST_REQUIRE(x.ndim() == 2 && x.rows() >= 2, "pca_project: need a matrix with >= 2 rows");
    const std::size_t n = x.rows(), d = x.cols();
    components = std::min(components, d);
    Eigen::MatrixXd m(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) m(i, j) = x.at(i, j);
    m.rowwise() -= m.colwise().mean();
    const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("pca_project: eigendecomposition failed");
    // Eigenvalues ascend; take the last `components` columns in reverse.
    Eigen::MatrixXd axes(d, components);
    for (std::size_t c = 0; c < components; ++c) {
        Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        axes.col(static_cast<Eigen::Index>(c)) = v;
    }
    const Eigen::MatrixXd p = m * axes;
    Tensor out(Tensor::Shape{n, components});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < components; ++c) out.at(i, c) = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    return out;
}

}  // namespace histost::dom
