#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdro {

/// Dense row-major matrix of doubles indexed by (prompt, response).
///
/// Every conditional distribution, logit matrix and gradient in the
/// library is one of these; rows are prompts and columns are responses.
class Table {
public:
    Table() = default;
    Table(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Table from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        const std::size_t cols = rows.front().size();
        Table t(rows.size(), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != cols)
                throw std::invalid_argument("ragged rows: row " + std::to_string(r) + " has " +
                                            std::to_string(rows[r].size()) + " entries, expected " +
                                            std::to_string(cols));
            std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
        }
        return t;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    std::vector<std::vector<double>> to_rows() const {
        std::vector<std::vector<double>> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r].assign(row(r).begin(), row(r).end());
        return out;
    }

    bool same_shape(const Table& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    Table& operator+=(const Table& other) {
        require_same_shape(other);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Table& operator*=(double s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const Table&, const Table&) = default;

private:
    void require_same_shape(const Table& other) const {
        if (!same_shape(other)) throw std::invalid_argument("table shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Euclidean norm over all entries.
inline double frobenius_norm(const Table& t) {
    double scale = 0.0;
    for (double v : t.flat()) scale = std::max(scale, std::abs(v));
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double s = 0.0;
    for (double v : t.flat()) s += (v / scale) * (v / scale);
    return scale * std::sqrt(s);
}

inline double max_abs_diff(const Table& a, const Table& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("table shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
    return m;
}

}  // namespace rdro
