#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tdm/cdr.hpp"
#include "tdm/errors.hpp"
#include "tdm/rng.hpp"

// Preference inference: realized-trips matrix from user profiles and a
// regularized latent-factor model fitted to it. Visit frequencies are the
// only preference signal (no ratings), so absent cells enter the loss as
// implicit zeros with unit confidence and observed counts get confidence
// 1 + w0 * count.

namespace tdm {

struct TripEntry {
    int user = 0;
    int location = 0;
    double value = 0;  // realized trips p_uj, >= 0
};

struct LocationIndex {
    std::vector<std::string> ids;       // column order
    std::map<std::string, int> pos;

    static LocationIndex build(std::span<const std::string> location_ids) {
        LocationIndex idx;
        for (const std::string& id : location_ids) {
            if (idx.pos.emplace(id, int(idx.ids.size())).second) idx.ids.push_back(id);
        }
        return idx;
    }
    int size() const { return int(ids.size()); }
};

struct RealizedTrips {
    int n_users = 0;
    int n_locations = 0;
    std::vector<TripEntry> entries;     // sorted by (user, location), unique
    std::vector<std::string> user_ids;  // row order

    double value(int user, int location) const {
        auto it = std::lower_bound(entries.begin(), entries.end(), std::pair{user, location},
                                   [](const TripEntry& e, const std::pair<int, int>& k) {
                                       return std::pair{e.user, e.location} < k;
                                   });
        if (it != entries.end() && it->user == user && it->location == location) return it->value;
        return 0.0;
    }

    double total() const {
        double s = 0;
        for (const TripEntry& e : entries) s += e.value;
        return s;
    }
};

// ---------------------------------------------------------------------------
// build_matrix
// ---------------------------------------------------------------------------

/// p_uj = UserProfile.visit_counts resolved through `resolve` (identity for
/// tower resolution; merged-group or node lookup otherwise) and summed per
/// column. Rows are ordered by user_id. Unknown resolved locations throw.
inline RealizedTrips build_matrix(
    std::span<const UserProfile> profiles, const LocationIndex& locations,
    const std::function<std::string(const std::string&)>& resolve = {}) {
    std::vector<const UserProfile*> order;
    order.reserve(profiles.size());
    for (const UserProfile& p : profiles) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const UserProfile* a, const UserProfile* b) { return a->user_id < b->user_id; });

    RealizedTrips m;
    m.n_users = int(order.size());
    m.n_locations = locations.size();
    for (int u = 0; u < m.n_users; ++u) {
        const UserProfile& p = *order[std::size_t(u)];
        m.user_ids.push_back(p.user_id);
        std::map<int, double> cols;
        for (const auto& [loc, count] : p.visit_counts) {
            if (count < 0) throw DomainError("negative visit count for user " + p.user_id);
            const std::string resolved = resolve ? resolve(loc) : loc;
            auto it = locations.pos.find(resolved);
            if (it == locations.pos.end())
                throw DomainError("unknown location: " + resolved);
            cols[it->second] += double(count);
        }
        for (const auto& [j, v] : cols)
            if (v != 0) m.entries.push_back({u, j, v});
    }
    return m;
}

// ---------------------------------------------------------------------------
// Latent-factor model
// ---------------------------------------------------------------------------

struct MfHyperparams {
    int k = 16;
    double lambda = 0.1;        // L2 regularization
    int epochs = 200;
    double learning_rate = 0.1; // initial step; adapted by backtracking
    double w0 = 1.0;            // confidence weight: c_uj = 1 + w0 * p_uj
    /// Treat absent cells as target 0 with unit confidence. Disable to train
    /// on the listed entries only (e.g. held-out evaluation splits).
    bool include_unobserved = true;
};

struct PreferenceModel {
    int k = 0;
    int n_users = 0;
    int n_locations = 0;
    std::vector<double> user_factors;  // n_users x k, row-major (U)
    std::vector<double> loc_factors;   // n_locations x k, row-major (L)
    std::vector<std::string> user_ids;
    std::vector<std::string> location_ids;
    std::vector<std::vector<int>> visited;  // per user, sorted columns with p_uj > 0
    MfHyperparams hyper;
    std::uint64_t seed = 0;
    std::vector<double> epoch_loss;

    /// dot(U_u, L_j)
    double predict(int user, int location) const {
        if (user < 0 || user >= n_users) throw DomainError("predict: user out of index");
        if (location < 0 || location >= n_locations) throw DomainError("predict: location out of index");
        const double* u = user_factors.data() + std::size_t(user) * std::size_t(k);
        const double* l = loc_factors.data() + std::size_t(location) * std::size_t(k);
        double s = 0;
        for (int f = 0; f < k; ++f) s += u[f] * l[f];
        return s;
    }

    bool has_visited(int user, int location) const {
        const auto& v = visited.at(std::size_t(user));
        return std::binary_search(v.begin(), v.end(), location);
    }
};

namespace detail {

/// Dense target/confidence views of the sparse matrix. Cells absent from the
/// entry list have p = 0, c = 1 when include_unobserved; otherwise weight 0.
struct MfProblem {
    int n_users, n_locations, k;
    std::vector<double> p;  // dense n_users x n_locations
    std::vector<double> c;  // confidence weights, same shape
    double lambda;

    MfProblem(const RealizedTrips& m, const MfHyperparams& h)
        : n_users(m.n_users), n_locations(m.n_locations), k(h.k), lambda(h.lambda) {
        const std::size_t cells = std::size_t(n_users) * std::size_t(n_locations);
        if (cells > 50'000'000) throw SizeError("dense factorization grid too large");
        p.assign(cells, 0.0);
        c.assign(cells, h.include_unobserved ? 1.0 : 0.0);
        for (const TripEntry& e : m.entries) {
            const std::size_t at = std::size_t(e.user) * std::size_t(n_locations) + std::size_t(e.location);
            p[at] = e.value;
            c[at] = 1.0 + h.w0 * e.value;
        }
    }
};

}  // namespace detail

/// Confidence-weighted squared error plus L2 penalty:
/// sum c_uj (p_uj - U_u . L_j)^2 + lambda (|U|^2 + |L|^2).
inline double mf_loss(const RealizedTrips& m, std::span<const double> user_factors,
                      std::span<const double> loc_factors, const MfHyperparams& hyper) {
    const detail::MfProblem prob(m, hyper);
    double loss = 0;
    for (int u = 0; u < prob.n_users; ++u) {
        const double* uf = user_factors.data() + std::size_t(u) * std::size_t(prob.k);
        for (int j = 0; j < prob.n_locations; ++j) {
            const std::size_t at = std::size_t(u) * std::size_t(prob.n_locations) + std::size_t(j);
            if (prob.c[at] == 0) continue;
            const double* lf = loc_factors.data() + std::size_t(j) * std::size_t(prob.k);
            double pred = 0;
            for (int f = 0; f < prob.k; ++f) pred += uf[f] * lf[f];
            const double e = prob.p[at] - pred;
            loss += prob.c[at] * e * e;
        }
    }
    double sq = 0;
    for (double v : user_factors) sq += v * v;
    for (double v : loc_factors) sq += v * v;
    return loss + hyper.lambda * sq;
}

/// Analytic gradient of mf_loss w.r.t. both factor matrices.
inline void mf_gradient(const RealizedTrips& m, std::span<const double> user_factors,
                        std::span<const double> loc_factors, const MfHyperparams& hyper,
                        std::span<double> grad_user, std::span<double> grad_loc) {
    const detail::MfProblem prob(m, hyper);
    for (std::size_t i = 0; i < grad_user.size(); ++i)
        grad_user[i] = 2.0 * hyper.lambda * user_factors[i];
    for (std::size_t i = 0; i < grad_loc.size(); ++i)
        grad_loc[i] = 2.0 * hyper.lambda * loc_factors[i];
    for (int u = 0; u < prob.n_users; ++u) {
        const double* uf = user_factors.data() + std::size_t(u) * std::size_t(prob.k);
        double* gu = grad_user.data() + std::size_t(u) * std::size_t(prob.k);
        for (int j = 0; j < prob.n_locations; ++j) {
            const std::size_t at = std::size_t(u) * std::size_t(prob.n_locations) + std::size_t(j);
            if (prob.c[at] == 0) continue;
            const double* lf = loc_factors.data() + std::size_t(j) * std::size_t(prob.k);
            double* gl = grad_loc.data() + std::size_t(j) * std::size_t(prob.k);
            double pred = 0;
            for (int f = 0; f < prob.k; ++f) pred += uf[f] * lf[f];
            const double coef = -2.0 * prob.c[at] * (prob.p[at] - pred);
            for (int f = 0; f < prob.k; ++f) {
                gu[f] += coef * lf[f];
                gl[f] += coef * uf[f];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

/// Full-batch gradient descent over all weighted cells. One epoch is one
/// gradient step accepted through backtracking (halve the step until the loss
/// decreases), so the per-epoch training loss is non-increasing by
/// construction. Deterministic given the seed.
inline PreferenceModel fit(const RealizedTrips& m, const MfHyperparams& hyper, std::uint64_t seed) {
    if (hyper.k < 1) throw DomainError("fit: k must be >= 1");
    if (hyper.k > std::min(m.n_users, m.n_locations))
        throw DomainError("fit: k must be <= min(|users|, |locations|)");
    if (hyper.lambda < 0) throw DomainError("fit: lambda must be >= 0");

    PreferenceModel model;
    model.k = hyper.k;
    model.n_users = m.n_users;
    model.n_locations = m.n_locations;
    model.user_ids = m.user_ids;
    model.hyper = hyper;
    model.seed = seed;
    model.visited.assign(std::size_t(m.n_users), {});
    for (const TripEntry& e : m.entries)
        if (e.value > 0) model.visited[std::size_t(e.user)].push_back(e.location);

    Rng rng = Rng(seed).substream("mf-init");
    model.user_factors.resize(std::size_t(m.n_users) * std::size_t(hyper.k));
    model.loc_factors.resize(std::size_t(m.n_locations) * std::size_t(hyper.k));
    for (double& v : model.user_factors) v = rng.uniform(-0.01, 0.01);
    for (double& v : model.loc_factors) v = rng.uniform(-0.01, 0.01);

    auto& u = model.user_factors;
    auto& l = model.loc_factors;
    std::vector<double> gu(u.size()), gl(l.size());
    std::vector<double> tu(u.size()), tl(l.size());

    double loss = mf_loss(m, u, l, hyper);
    if (!std::isfinite(loss)) throw TrainingError("fit: non-finite initial loss");
    double step = hyper.learning_rate;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        mf_gradient(m, u, l, hyper, gu, gl);
        double gnorm2 = 0;
        for (double g : gu) gnorm2 += g * g;
        for (double g : gl) gnorm2 += g * g;
        if (gnorm2 == 0) {
            model.epoch_loss.push_back(loss);
            continue;
        }
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            for (std::size_t i = 0; i < u.size(); ++i) tu[i] = u[i] - step * gu[i];
            for (std::size_t i = 0; i < l.size(); ++i) tl[i] = l[i] - step * gl[i];
            const double trial = mf_loss(m, tu, tl, hyper);
            if (!std::isfinite(trial))
                throw TrainingError("fit: non-finite loss; decrease learning_rate");
            if (trial <= loss - 1e-4 * step * gnorm2) {
                u.swap(tu);
                l.swap(tl);
                loss = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        model.epoch_loss.push_back(loss);
        if (!accepted) break;  // step underflow: converged
        step = std::min(step * 1.5, hyper.learning_rate * 16.0);
    }
    return model;
}

// ---------------------------------------------------------------------------
// top_candidates
// ---------------------------------------------------------------------------

/// Top-n locations by predicted score, descending; ties broken by ascending
/// location index. Optionally excludes locations the user already visited.
inline std::vector<std::pair<int, double>> top_candidates(const PreferenceModel& model, int user,
                                                          int n, bool exclude_visited) {
    if (n < 1) throw DomainError("top_candidates: n must be >= 1");
    std::vector<std::pair<int, double>> scored;
    scored.reserve(std::size_t(model.n_locations));
    for (int j = 0; j < model.n_locations; ++j) {
        if (exclude_visited && model.has_visited(user, j)) continue;
        scored.emplace_back(j, model.predict(user, j));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (int(scored.size()) > n) scored.resize(std::size_t(n));
    return scored;
}

}  // namespace tdm
