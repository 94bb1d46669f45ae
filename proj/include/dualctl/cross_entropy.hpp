#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "dualctl/gaussian.hpp"
#include "dualctl/rng.hpp"
#include "dualctl/text.hpp"

namespace dualctl {

// Search-hyperparameter layout: [k_action, k_state, depth, explore_c].
using CeVector = Eigen::Vector4d;
using CeIntVector = Eigen::Vector4i;
using CeObjective = std::function<double(const CeIntVector&)>;

struct CeConfig {
    CeVector init_mean{20.0, 20.0, 10.0, 20.0};
    Eigen::Matrix4d init_cov =
        CeVector(64.0, 64.0, 16.0, 81.0).asDiagonal().toDenseMatrix();
    int population = 50;
    int elites = 10;
    int max_iters = 25;
    double eig_threshold = 3.0;  // stop once the fit has collapsed this far
    int trials_per_sample = 5;   // closed-loop trials behind one objective call

    void validate() const {
        if (population < 1) throw ConfigError("population must be >= 1");
        if (elites < 1) throw ConfigError("elites must be >= 1");
        if (elites > population) throw ConfigError("elites must be <= population");
        if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
        if (!(eig_threshold >= 0.0)) throw ConfigError("eig_threshold must be >= 0");
        if (trials_per_sample < 1) throw ConfigError("trials_per_sample must be >= 1");
    }
};

struct CeIterate {
    int iteration = 0;
    double best = 0.0;     // best objective seen so far, nondecreasing
    double mean = 0.0;     // population mean objective this iteration
    double eig_max = 0.0;  // largest eigenvalue of the refit covariance
};

struct CeResult {
    CeVector mean = CeVector::Zero();
    Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
    std::vector<CeIterate> history;
};

// Round half away from zero, then force the minimum legal value of 1.
inline CeIntVector integerize(const CeVector& v) {
    CeIntVector out;
    for (int i = 0; i < 4; ++i) {
        out[i] = std::max(1, static_cast<int>(std::llround(v[i])));
    }
    return out;
}

// Plain cross-entropy loop: sample, score integerized candidates, refit the
// Gaussian to the elite fraction with maximum-likelihood moments plus a small
// ridge. Stops at the iteration cap or once the fit covariance collapses.
inline CeResult ce_optimize(const CeObjective& objective, const CeConfig& cfg, Rng& rng) {
    cfg.validate();

    CeResult result;
    result.mean = cfg.init_mean;
    result.cov = cfg.init_cov;
    double best_so_far = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        const Gaussian fit{Vector(result.mean), Matrix(result.cov)};
        std::vector<CeVector> samples;
        std::vector<double> scores;
        samples.reserve(cfg.population);
        scores.reserve(cfg.population);
        double score_sum = 0.0;
        for (int i = 0; i < cfg.population; ++i) {
            const CeVector x(sample_mvn(fit, rng));
            const double score = objective(integerize(x));
            samples.push_back(x);
            scores.push_back(score);
            score_sum += score;
            best_so_far = std::max(best_so_far, score);
        }

        // elite selection; equal scores keep sample order
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&scores](int a, int b) { return scores[a] > scores[b]; });

        CeVector elite_mean = CeVector::Zero();
        for (int e = 0; e < cfg.elites; ++e) elite_mean += samples[order[e]];
        elite_mean /= cfg.elites;
        Eigen::Matrix4d elite_cov = Eigen::Matrix4d::Zero();
        for (int e = 0; e < cfg.elites; ++e) {
            const CeVector d = samples[order[e]] - elite_mean;
            elite_cov += d * d.transpose();
        }
        elite_cov /= cfg.elites;
        elite_cov += 1e-6 * Eigen::Matrix4d::Identity();

        result.mean = elite_mean;
        result.cov = elite_cov;

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(elite_cov, Eigen::EigenvaluesOnly);
        const double eig_max = es.eigenvalues().maxCoeff();

        CeIterate record;
        record.iteration = iter;
        record.best = best_so_far;
        record.mean = score_sum / cfg.population;
        record.eig_max = eig_max;
        result.history.push_back(record);

        if (eig_max < cfg.eig_threshold) break;
    }
    return result;
}

}  // namespace dualctl
