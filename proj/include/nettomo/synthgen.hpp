#pragma once

// Synthetic topologies, routing, traffic, masks and observations.

#include <nettomo/core.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

namespace nettomo {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Matrix gaussian_matrix(Index rows, Index cols, double stddev, Rng &rng) {
    std::normal_distribution<double> nd(0.0, stddev);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
    return m;
}

struct GeoGraphParams {
    int n = 30;
    double d_c = 0.35;
    std::uint64_t seed = 0;
};

struct BurstParams {
    double gamma_f = 50.0;
    double theta = 0.999;
    double sigma_n = 0.005;
    double alpha = 0.98;
    double nu = 0.03;
    std::vector<int> anomalous_flows;

    void validate() const {
        if (!(std::abs(theta) < 1.0))
            throw InvalidArgument("BurstParams: |theta| must be < 1");
        if (sigma_n < 0.0) throw InvalidArgument("BurstParams: sigma_n < 0");
        if (alpha < 0.0 || alpha > 1.0 || nu < 0.0 || nu > 1.0)
            throw InvalidArgument("BurstParams: alpha and nu must lie in [0,1]");
    }
};

/// Nodes uniform in the unit square; a link pair joins nodes closer than d_c.
inline Topology gen_geometric_graph(const GeoGraphParams &p) {
    if (p.n < 2) throw InvalidArgument("gen_geometric_graph: n must be >= 2");
    if (p.d_c < 0.0) throw InvalidArgument("gen_geometric_graph: d_c < 0");
    Rng rng(mix_seed(p.seed, 0));
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<std::pair<double, double>> coords(p.n);
    for (auto &c : coords) {
        c.first = ud(rng);
        c.second = ud(rng);
    }
    std::vector<Link> links;
    for (int i = 0; i < p.n; ++i)
        for (int j = i + 1; j < p.n; ++j) {
            const double dx = coords[i].first - coords[j].first;
            const double dy = coords[i].second - coords[j].second;
            if (std::hypot(dx, dy) < p.d_c) {
                links.push_back({i, j});
                links.push_back({j, i});
            }
        }
    return Topology(p.n, std::move(links), std::move(coords));
}

/// F distinct ordered (origin, destination) pairs, origin != destination.
inline std::vector<OdPair> random_od_pairs(int node_count, Index flows,
                                           std::uint64_t seed) {
    const Index total = static_cast<Index>(node_count) * (node_count - 1);
    if (flows > total)
        throw InvalidArgument("random_od_pairs: more flows than ordered node pairs");
    std::vector<OdPair> all;
    all.reserve(total);
    for (int o = 0; o < node_count; ++o)
        for (int d = 0; d < node_count; ++d)
            if (o != d) all.push_back({o, d});
    Rng rng(mix_seed(seed, 1));
    for (Index i = 0; i < flows; ++i) {
        std::uniform_int_distribution<Index> pick(i, total - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    all.resize(flows);
    return all;
}

namespace detail {

/// Min-hop path from o to d over links not in `used`, returned as link
/// indices. Among min-hop paths the lexicographically smallest node
/// sequence is chosen. Empty when d is unreachable.
inline std::vector<int> min_hop_path(const Topology &topo, int o, int d,
                                     const std::vector<bool> &used) {
    const int n = topo.node_count();
    const auto &links = topo.links();
    std::vector<std::vector<int>> in_links(n), out_links(n);
    for (int l = 0; l < static_cast<int>(links.size()); ++l) {
        if (used[l]) continue;
        out_links[links[l].from].push_back(l);
        in_links[links[l].to].push_back(l);
    }
    // hop distance to d over the reverse graph
    std::vector<int> dist(n, -1);
    std::deque<int> queue{d};
    dist[d] = 0;
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int l : in_links[v]) {
            const int u = links[l].from;
            if (dist[u] < 0) {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    if (dist[o] < 0) return {};
    std::vector<int> path;
    int v = o;
    while (v != d) {
        int best_link = -1;
        int best_node = std::numeric_limits<int>::max();
        for (int l : out_links[v]) {
            const int w = links[l].to;
            if (dist[w] == dist[v] - 1 && w < best_node) {
                best_node = w;
                best_link = l;
            }
        }
        path.push_back(best_link);
        v = best_node;
    }
    return path;
}

} // namespace detail

/// Up to K link-disjoint min-hop paths per OD pair, random fractions per
/// path, unused links dropped.
inline RoutingMatrix build_routing(const Topology &topo,
                                   const std::vector<OdPair> &od_pairs, int k,
                                   std::uint64_t seed) {
    if (k < 1) throw InvalidArgument("build_routing: K must be >= 1");
    const Index flows = static_cast<Index>(od_pairs.size());
    const Index all_links = topo.link_count();
    Matrix full = Matrix::Zero(all_links, flows);
    std::vector<int> achieved(flows, 0);
    Rng rng(mix_seed(seed, 2));
    std::uniform_real_distribution<double> ud(0.0, 1.0);

    for (Index f = 0; f < flows; ++f) {
        const auto [o, d] = od_pairs[f];
        if (o < 0 || d < 0 || o >= topo.node_count() || d >= topo.node_count() ||
            o == d)
            throw InvalidArgument("build_routing: invalid OD pair");
        std::vector<bool> used(all_links, false);
        std::vector<std::vector<int>> paths;
        for (int j = 0; j < k; ++j) {
            auto path = detail::min_hop_path(topo, o, d, used);
            if (path.empty()) break;
            for (int l : path) used[l] = true;
            paths.push_back(std::move(path));
        }
        if (paths.empty())
            throw InfeasibleRoutingError("build_routing: no path from node " +
                                         std::to_string(o) + " to node " +
                                         std::to_string(d));
        std::vector<double> frac(k);
        for (auto &w : frac) w = ud(rng);
        frac.resize(paths.size());
        double sum = 0.0;
        for (double w : frac) sum += w;
        for (std::size_t j = 0; j < paths.size(); ++j)
            for (int l : paths[j]) full(l, f) += frac[j] / sum;
        achieved[f] = static_cast<int>(paths.size());
    }

    std::vector<Link> kept;
    std::vector<Index> rows;
    for (Index l = 0; l < all_links; ++l)
        if ((full.row(l).array() != 0.0).any()) {
            rows.push_back(l);
            kept.push_back(topo.links()[l]);
        }
    Matrix r(static_cast<Index>(rows.size()), flows);
    for (Index i = 0; i < static_cast<Index>(rows.size()); ++i)
        r.row(i) = full.row(rows[i]).cwiseMin(1.0);
    return RoutingMatrix(std::move(r), std::move(kept), od_pairs,
                         std::move(achieved));
}

/// X0 = L Q' with L ~ N(0, 1/F), Q ~ N(0, 1/T).
inline Matrix gen_lowrank_traffic(Index flows, Index times, Index rho,
                                  std::uint64_t seed) {
    if (rho < 0 || rho > std::min(flows, times))
        throw InvalidArgument("gen_lowrank_traffic: rho must lie in [0, min(F,T)]");
    if (rho == 0) return Matrix::Zero(flows, times);
    Rng rng(mix_seed(seed, 3));
    const Matrix l = gaussian_matrix(flows, rho, 1.0 / std::sqrt(double(flows)), rng);
    const Matrix q = gaussian_matrix(times, rho, 1.0 / std::sqrt(double(times)), rng);
    return l * q.transpose();
}

/// Entries in {-1, 0, 1} with P(+1) = P(-1) = p/2.
inline Matrix gen_sparse_anomalies(Index flows, Index times, double p,
                                   std::uint64_t seed) {
    if (p < 0.0 || p > 1.0)
        throw InvalidArgument("gen_sparse_anomalies: p must lie in [0,1]");
    Rng rng(mix_seed(seed, 4));
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Matrix a(flows, times);
    for (Index f = 0; f < flows; ++f)
        for (Index t = 0; t < times; ++t) {
            const double u = ud(rng);
            a(f, t) = u < p / 2 ? -1.0 : (u < p ? 1.0 : 0.0);
        }
    return a;
}

/// a = gamma * b * c with c an AR(1) process and b a persistent Bernoulli
/// on/off process. Rows outside `anomalous_flows` stay zero.
inline Matrix gen_bursty_anomalies(Index flows, Index times, const BurstParams &bp,
                                   std::uint64_t seed) {
    bp.validate();
    Matrix a = Matrix::Zero(flows, times);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int f : bp.anomalous_flows) {
        if (f < 0 || f >= flows)
            throw InvalidArgument("gen_bursty_anomalies: anomalous flow out of range");
        Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(f)));
        double c = 0.0;
        bool b = ud(rng) < bp.nu;
        for (Index t = 0; t < times; ++t) {
            c = bp.theta * c + bp.sigma_n * nd(rng);
            const bool d = ud(rng) < bp.alpha;
            const bool e = ud(rng) < bp.nu;
            b = d ? b : e;
            a(f, t) = b ? bp.gamma_f * c : 0.0;
        }
    }
    return a;
}

inline SamplingMask gen_mask(Index flows, Index times, double pi, std::uint64_t seed) {
    if (pi < 0.0 || pi > 1.0) throw InvalidArgument("gen_mask: pi must lie in [0,1]");
    Rng rng(mix_seed(seed, 5));
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    BoolArray m(flows, times);
    for (Index f = 0; f < flows; ++f)
        for (Index t = 0; t < times; ++t) m(f, t) = ud(rng) < pi;
    return SamplingMask(std::move(m));
}

/// round(pi_row_miss * F) rows never observed, the rest Bernoulli(pi_time).
inline SamplingMask gen_structured_mask(Index flows, Index times, double pi_row_miss,
                                        double pi_time, std::uint64_t seed) {
    if (pi_row_miss < 0.0 || pi_row_miss > 1.0 || pi_time < 0.0 || pi_time > 1.0)
        throw InvalidArgument("gen_structured_mask: probabilities must lie in [0,1]");
    Rng rng(mix_seed(seed, 6));
    std::vector<Index> order(flows);
    for (Index f = 0; f < flows; ++f) order[f] = f;
    std::shuffle(order.begin(), order.end(), rng);
    const auto missing = static_cast<Index>(std::llround(pi_row_miss * double(flows)));
    std::vector<bool> dark(flows, false);
    for (Index i = 0; i < missing; ++i) dark[order[i]] = true;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    BoolArray m(flows, times);
    for (Index f = 0; f < flows; ++f)
        for (Index t = 0; t < times; ++t) {
            const bool hit = ud(rng) < pi_time;
            m(f, t) = !dark[f] && hit;
        }
    return SamplingMask(std::move(m));
}

inline Observations observe(const RoutingMatrix &r, const Matrix &x0, const Matrix &a0,
                            const SamplingMask &mask, double sigma_v, double sigma_w,
                            std::uint64_t seed) {
    detail::require_same_shape(a0, x0.rows(), x0.cols(), "observe A0");
    detail::require_same_shape(x0, mask.rows(), mask.cols(), "observe mask");
    if (sigma_v < 0.0 || sigma_w < 0.0)
        throw InvalidArgument("observe: noise levels must be >= 0");
    const Matrix xa = x0 + a0;
    Matrix y = apply_routing(r, xa);
    Matrix z = xa;
    Rng rng(mix_seed(seed, 7));
    if (sigma_v > 0.0) y += gaussian_matrix(y.rows(), y.cols(), sigma_v, rng);
    if (sigma_w > 0.0) z += gaussian_matrix(z.rows(), z.cols(), sigma_w, rng);
    return Observations(std::move(y), project_sampling(mask, z), mask);
}

} // namespace nettomo
