#include "midol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "midol/infodecomp.hpp"

namespace midol {

double routing_purity(std::span<const Assignment> assignments) {
    if (assignments.empty()) throw std::invalid_argument("routing_purity: no assignments");
    std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
    for (const auto& a : assignments) ++counts[a.modality][a.expert];
    double total = 0.0;
    for (const auto& [modality, per_expert] : counts) {
        std::size_t n = 0, best = 0;
        for (const auto& [expert, c] : per_expert) {
            n += c;
            best = std::max(best, c);
        }
        total += static_cast<double>(best) / static_cast<double>(n);
    }
    return total / static_cast<double>(counts.size());
}

double expert_load_entropy(std::span<const Assignment> assignments, std::size_t experts) {
    if (assignments.empty()) throw std::invalid_argument("expert_load_entropy: no assignments");
    std::vector<double> hist(experts, 0.0);
    for (const auto& a : assignments) {
        if (a.expert >= experts)
            throw std::invalid_argument("expert_load_entropy: expert index out of range");
        hist[a.expert] += 1.0;
    }
    for (double& h : hist) h /= static_cast<double>(assignments.size());
    return info::entropy(hist);
}

RoutingReport routing_report(std::span<const Assignment> assignments, std::size_t experts) {
    RoutingReport r;
    r.purity = routing_purity(assignments);
    r.load_entropy = expert_load_entropy(assignments, experts);
    std::vector<std::size_t> load(experts, 0);
    for (const auto& a : assignments) ++load[a.expert];
    r.max_expert_share = static_cast<double>(*std::max_element(load.begin(), load.end())) /
                         static_cast<double>(assignments.size());
    r.collapse_flag = r.max_expert_share > kCollapseThreshold;
    return r;
}

double linear_probe(const DenseArray& train_x, std::span<const std::size_t> train_y,
                    const DenseArray& test_x, std::span<const std::size_t> test_y,
                    const ProbeOptions& options) {
    const std::size_t n = train_x.rows(), d = train_x.cols();
    if (train_y.size() != n || test_y.size() != test_x.rows() || test_x.cols() != d)
        throw std::invalid_argument("linear_probe: feature / label shapes disagree");
    if (test_y.empty()) throw std::invalid_argument("linear_probe: empty test split");
    const std::size_t classes =
        1 + std::max(*std::max_element(train_y.begin(), train_y.end()),
                     *std::max_element(test_y.begin(), test_y.end()));
    std::vector<std::size_t> seen(train_y.begin(), train_y.end());
    std::sort(seen.begin(), seen.end());
    if (std::unique(seen.begin(), seen.end()) - seen.begin() < 2)
        throw std::invalid_argument("linear_probe: train split holds a single class");

    // Whiten with the train split's mean and covariance; directions with
    // negligible variance are dropped.
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const Mat> raw(train_x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const Eigen::RowVectorXd mu = raw.colwise().mean();
    const Mat centered = raw.rowwise() - mu;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < eig.eigenvalues().size(); ++k)
        if (top > 0.0 && eig.eigenvalues()(k) > 1e-12 * top) keep.push_back(k);
    Eigen::MatrixXd proj(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
        proj.col(static_cast<Eigen::Index>(j)) =
            eig.eigenvectors().col(keep[j]) / std::sqrt(eig.eigenvalues()(keep[j]));
    auto whiten = [&](const DenseArray& x) {
        const Eigen::Map<const Mat> m(x.data().data(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(d));
        const Mat z = (m.rowwise() - mu) * proj;
        DenseArray out = DenseArray::matrix(x.rows(), keep.size());
        std::copy(z.data(), z.data() + z.size(), out.data().begin());
        return out;
    };
    const DenseArray xtr = whiten(train_x);
    const DenseArray xte = whiten(test_x);
    const std::size_t dw = keep.size();

    DenseArray w = DenseArray::matrix(dw, classes);
    std::vector<double> bias(classes, 0.0);
    DenseArray gw = DenseArray::matrix(dw, classes);
    std::vector<double> gb(classes);
    std::vector<double> p(classes);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        gw.fill(0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double mx = -INFINITY;
            for (std::size_t k = 0; k < classes; ++k) {
                double z = bias[k];
                for (std::size_t c = 0; c < dw; ++c) z += xtr(r, c) * w(c, k);
                p[k] = z;
                mx = std::max(mx, z);
            }
            double total = 0.0;
            for (double& v : p) {
                v = std::exp(v - mx);
                total += v;
            }
            for (std::size_t k = 0; k < classes; ++k) {
                const double err = p[k] / total - (train_y[r] == k ? 1.0 : 0.0);
                gb[k] += err;
                for (std::size_t c = 0; c < dw; ++c) gw(c, k) += err * xtr(r, c);
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.learning_rate * gw[i] * inv_n;
        for (std::size_t k = 0; k < classes; ++k) bias[k] -= options.learning_rate * gb[k] * inv_n;
    }

    std::size_t correct = 0;
    for (std::size_t r = 0; r < xte.rows(); ++r) {
        std::size_t best = 0;
        double best_z = -INFINITY;
        for (std::size_t k = 0; k < classes; ++k) {
            double z = bias[k];
            for (std::size_t c = 0; c < dw; ++c) z += xte(r, c) * w(c, k);
            if (z > best_z) {
                best_z = z;
                best = k;
            }
        }
        if (best == test_y[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(xte.rows());
}

void write_embeddings_csv(const std::filesystem::path& path, std::span<const EmbeddingRow> rows,
                          const DenseArray* embeddings, std::size_t width) {
    if (embeddings && (embeddings->rows() != rows.size() || embeddings->cols() != width))
        throw std::invalid_argument("write_embeddings_csv: embedding shape does not match rows");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << "sample_id,modality,subcluster,selected_expert";
    for (std::size_t c = 0; c < width; ++c) f << ",e_" << c;
    f << '\n';
    char buf[32];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        f << i << ',' << rows[i].modality << ',' << rows[i].subcluster << ',' << rows[i].expert;
        for (std::size_t c = 0; c < width; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", (*embeddings)(i, c));
            f << ',' << buf;
        }
        f << '\n';
    }
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace midol
