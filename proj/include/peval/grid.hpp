#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "peval/errors.hpp"

namespace peval {

// Uniform grid on [lo, lo + (size-1)*dy] with one value per node.
// eval() interpolates linearly and extrapolates with the boundary constants;
// nearest_index() gives the piecewise-constant cell used for feedback controls.
class ValueGrid {
public:
    ValueGrid() = default;

    ValueGrid(double lo, double hi, std::size_t nodes, double init = 0.0) {
        if (nodes < 2) throw ConfigError("ValueGrid: need at least 2 nodes");
        if (!(hi > lo)) throw ConfigError("ValueGrid: hi must exceed lo");
        lo_ = lo;
        dy_ = (hi - lo) / static_cast<double>(nodes - 1);
        v_.assign(nodes, init);
    }

    static ValueGrid constant(double value) {
        ValueGrid g(0.0, 1.0, 2, value);
        return g;
    }

    std::size_t size() const { return v_.size(); }
    double lo() const { return lo_; }
    double hi() const { return lo_ + dy_ * static_cast<double>(v_.size() - 1); }
    double spacing() const { return dy_; }
    double node(std::size_t j) const { return lo_ + dy_ * static_cast<double>(j); }

    double& operator[](std::size_t j) { return v_[j]; }
    double operator[](std::size_t j) const { return v_[j]; }
    const std::vector<double>& values() const { return v_; }
    std::vector<double>& values() { return v_; }

    std::size_t nearest_index(double y) const {
        if (y <= lo_) return 0;
        double t = (y - lo_) / dy_;
        std::size_t j = static_cast<std::size_t>(t + 0.5);
        return j >= v_.size() ? v_.size() - 1 : j;
    }

    double eval(double y) const {
        if (y <= lo_) return v_.front();
        const double t = (y - lo_) / dy_;
        const std::size_t j = static_cast<std::size_t>(t);
        if (j + 1 >= v_.size()) return v_.back();
        const double w = t - static_cast<double>(j);
        return v_[j] * (1.0 - w) + v_[j + 1] * w;
    }

    // Interpolation weights of y: contributes (j, 1-w) and (j+1, w).
    void eval_weights(double y, std::size_t& j, double& w) const {
        if (y <= lo_) { j = 0; w = 0.0; return; }
        const double t = (y - lo_) / dy_;
        j = static_cast<std::size_t>(t);
        if (j + 1 >= v_.size()) { j = v_.size() - 2; w = 1.0; return; }
        w = t - static_cast<double>(j);
    }

    double sup_abs_diff(const ValueGrid& other) const {
        double d = 0.0;
        for (std::size_t j = 0; j < v_.size(); ++j)
            d = std::max(d, std::fabs(v_[j] - other.v_[j]));
        return d;
    }

    double min_value() const {
        double m = v_.front();
        for (double x : v_) m = std::min(m, x);
        return m;
    }

    double max_value() const {
        double m = v_.front();
        for (double x : v_) m = std::max(m, x);
        return m;
    }

    bool same_layout(const ValueGrid& other) const {
        return v_.size() == other.v_.size() && lo_ == other.lo_ && dy_ == other.dy_;
    }

private:
    double lo_ = 0.0;
    double dy_ = 1.0;
    std::vector<double> v_;
};

} // namespace peval
