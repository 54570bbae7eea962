#pragma once

// Cutoff functions used throughout: the clamp T_k, its complement G_k,
// the plateau-ramp Z_delta and the window S_{k,n}.

#include <algorithm>
#include <cmath>
#include <string>

#include "homlab/error.hpp"

namespace homlab {

/// Truncation height k > 0.
class CutLevel {
public:
    explicit CutLevel(double k) : k_(k) {
        if (!(k > 0.0) || !std::isfinite(k)) {
            throw Error("truncate", "cut level must be finite and > 0, got " + std::to_string(k));
        }
    }
    double value() const noexcept { return k_; }

private:
    double k_;
};

/// Pair of levels n > k > 0 for the window S_{k,n}.
class WindowLevels {
public:
    WindowLevels(double k, double n) : k_(k), n_(n) {
        if (!(k > 0.0) || !(n > k) || !std::isfinite(n)) {
            throw Error("truncate", "window levels require n > k > 0");
        }
    }
    double k() const noexcept { return k_; }
    double n() const noexcept { return n_; }

private:
    double k_;
    double n_;
};

namespace detail {
inline void require_finite(double s) {
    if (!std::isfinite(s)) throw Error("truncate", "non-finite argument");
}
inline void require_nonneg(double s) {
    require_finite(s);
    if (s < 0.0) throw Error("truncate", "negative argument " + std::to_string(s));
}
}  // namespace detail

/// T_k(s) = max(-k, min(s, k)).
inline double t_cut(double s, CutLevel k) {
    detail::require_finite(s);
    return std::max(-k.value(), std::min(s, k.value()));
}

/// G_k(s) = s - T_k(s).
inline double g_cut(double s, CutLevel k) {
    return s - t_cut(s, k);
}

/// 1 on [0, delta], 2 - s/delta on [delta, 2 delta], 0 beyond.
inline double z_delta(double s, double delta) {
    detail::require_nonneg(s);
    if (!(delta > 0.0)) throw Error("truncate", "z_delta requires delta > 0");
    if (s <= delta) return 1.0;
    if (s >= 2.0 * delta) return 0.0;
    return 2.0 - s / delta;
}

/// S_{k,n}(s): 0 below k, s - k on [k, n], n - k above n.
inline double s_window(double s, const WindowLevels& levels) {
    detail::require_nonneg(s);
    if (s <= levels.k()) return 0.0;
    return std::min(s, levels.n()) - levels.k();
}

}  // namespace homlab
