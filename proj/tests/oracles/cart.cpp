#include "oracles/cart.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace oracle {
namespace {

double sse(const std::vector<double>& y, const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    double mean = 0.0;
    for (auto r : rows) mean += y[r];
    mean /= static_cast<double>(rows.size());
    double s = 0.0;
    for (auto r : rows) s += (y[r] - mean) * (y[r] - mean);
    return s;
}

int grow(const std::vector<std::vector<double>>& x, const std::vector<double>& y, std::vector<std::size_t> rows,
         int depth, int max_depth, int min_leaf, std::vector<txtime::forest::Node>& out) {
    const int index = static_cast<int>(out.size());
    out.emplace_back();
    double sum = 0.0;
    for (auto r : rows) sum += y[r];
    out[index].value = sum / static_cast<double>(rows.size());
    out[index].cover = static_cast<double>(rows.size());
    if (depth >= max_depth || sse(y, rows) == 0.0) return index;

    const std::size_t p = x.empty() ? 0 : x[0].size();
    int best_f = -1;
    double best_t = 0.0, best = 0.0;
    for (std::size_t f = 0; f < p; ++f) {
        std::set<double> distinct;
        for (auto r : rows) distinct.insert(x[r][f]);
        std::vector<double> v(distinct.begin(), distinct.end());
        for (std::size_t k = 0; k + 1 < v.size(); ++k) {
            const double t = txtime::forest::midpoint_threshold(v[k], v[k + 1]);
            std::vector<std::size_t> l, r;
            for (auto row : rows) (x[row][f] <= t ? l : r).push_back(row);
            if (static_cast<int>(l.size()) < min_leaf || static_cast<int>(r.size()) < min_leaf) continue;
            const double s = sse(y, l) + sse(y, r);
            if (best_f < 0 || s < best - 1e-9 * std::abs(best)) {
                best = s;
                best_f = static_cast<int>(f);
                best_t = t;
            }
        }
    }
    if (best_f < 0) return index;
    std::vector<std::size_t> l, r;
    for (auto row : rows) (x[row][static_cast<std::size_t>(best_f)] <= best_t ? l : r).push_back(row);
    out[index].feature = best_f;
    out[index].threshold = best_t;
    const int li = grow(x, y, l, depth + 1, max_depth, min_leaf, out);
    out[index].left = li;
    const int ri = grow(x, y, r, depth + 1, max_depth, min_leaf, out);
    out[index].right = ri;
    return index;
}

}  // namespace

txtime::forest::RegressionTree exhaustive_cart(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                               int max_depth, int min_leaf) {
    txtime::forest::RegressionTree t;
    std::vector<std::size_t> rows(y.size());
    std::iota(rows.begin(), rows.end(), 0);
    grow(x, y, rows, 0, max_depth, min_leaf, t.nodes);
    return t;
}

}  // namespace oracle
