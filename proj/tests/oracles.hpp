#pragma once

// Independent reference computations used only by the tests. Nothing here
// shares code with the library paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace cfr::oracle {

/// Max common subsequence length by enumerating every subset of `a` and
/// checking it is a subsequence of `b`. Exponential; keep |a| <= ~14.
template <class T>
std::size_t brute_force_lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
    std::size_t best = 0;
    const std::uint32_t subsets = 1u << a.size();
    for (std::uint32_t mask = 0; mask < subsets; ++mask) {
        const auto bits = static_cast<std::size_t>(__builtin_popcount(mask));
        if (bits <= best) continue;
        std::size_t j = 0;
        bool ok = true;
        for (std::size_t i = 0; i < a.size() && ok; ++i) {
            if (!(mask & (1u << i))) continue;
            while (j < b.size() && !(b[j] == a[i])) ++j;
            if (j == b.size()) ok = false;
            else ++j;
        }
        if (ok) best = bits;
    }
    return best;
}

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Lexicographically smallest maximum-length alignment by full enumeration
/// of index subsets of both sequences. Only for |a|, |b| <= ~7.
template <class T>
Pairs brute_force_canonical_alignment(const std::vector<T>& a, const std::vector<T>& b) {
    Pairs best;
    bool found = false;
    for (std::uint32_t ma = 0; ma < (1u << a.size()); ++ma) {
        std::vector<std::size_t> ia;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (ma & (1u << i)) ia.push_back(i);
        for (std::uint32_t mb = 0; mb < (1u << b.size()); ++mb) {
            if (static_cast<std::size_t>(__builtin_popcount(mb)) != ia.size()) continue;
            std::vector<std::size_t> ib;
            for (std::size_t j = 0; j < b.size(); ++j)
                if (mb & (1u << j)) ib.push_back(j);
            bool match = true;
            for (std::size_t t = 0; t < ia.size() && match; ++t) match = a[ia[t]] == b[ib[t]];
            if (!match) continue;
            Pairs candidate;
            for (std::size_t t = 0; t < ia.size(); ++t) candidate.emplace_back(ia[t], ib[t]);
            if (!found || candidate.size() > best.size() ||
                (candidate.size() == best.size() && candidate < best)) {
                best = candidate;
                found = true;
            }
        }
    }
    return best;
}

/// Quadratic-space greedy construction of the lexicographically smallest
/// LCS alignment from a suffix DP table.
template <class T>
Pairs greedy_canonical_alignment(const std::vector<T>& a, const std::vector<T>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::size_t>> suffix(n + 1, std::vector<std::size_t>(m + 1, 0));
    for (std::size_t i = n; i-- > 0;)
        for (std::size_t j = m; j-- > 0;)
            suffix[i][j] = a[i] == b[j] ? suffix[i + 1][j + 1] + 1
                                        : std::max(suffix[i + 1][j], suffix[i][j + 1]);
    Pairs out;
    std::size_t i0 = 0, j0 = 0;
    while (suffix[i0][j0] > 0) {
        const std::size_t need = suffix[i0][j0];
        bool advanced = false;
        for (std::size_t i = i0; i < n && !advanced; ++i) {
            for (std::size_t j = j0; j < m; ++j) {
                if (a[i] == b[j] && suffix[i + 1][j + 1] + 1 == need) {
                    out.emplace_back(i, j);
                    i0 = i + 1;
                    j0 = j + 1;
                    advanced = true;
                    break;
                }
            }
        }
    }
    return out;
}

/// Regularized-free paired t statistic computed directly from the definition.
inline double paired_t_statistic(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    return mean / std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace cfr::oracle
