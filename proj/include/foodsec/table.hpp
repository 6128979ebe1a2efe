#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "foodsec/error.hpp"

namespace foodsec {

/// Column-major numeric table. Columns are named, equal-length vectors of
/// double; NaN marks a missing value.
class DataTable {
  public:
    DataTable() = default;
    explicit DataTable(std::size_t n_rows) : n_rows_(n_rows) {}

    std::size_t n_rows() const { return n_rows_; }
    std::size_t n_cols() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    bool has(const std::string& name) const { return index_of(name) >= 0; }

    const std::vector<double>& col(const std::string& name) const {
        auto i = index_of(name);
        if (i < 0) throw DataError("unknown column '" + name + "'");
        return cols_[static_cast<std::size_t>(i)];
    }

    std::vector<double>& mutable_col(const std::string& name) {
        auto i = index_of(name);
        if (i < 0) throw DataError("unknown column '" + name + "'");
        return cols_[static_cast<std::size_t>(i)];
    }

    void add(const std::string& name, std::vector<double> values) {
        if (has(name)) throw DataError("duplicate column '" + name + "'");
        if (n_cols() == 0 && n_rows_ == 0) n_rows_ = values.size();
        if (values.size() != n_rows_)
            throw DataError("column '" + name + "' has " + std::to_string(values.size()) +
                            " rows, table has " + std::to_string(n_rows_));
        names_.push_back(name);
        cols_.push_back(std::move(values));
    }

    /// Replaces an existing column or adds a new one.
    void set(const std::string& name, std::vector<double> values) {
        auto i = index_of(name);
        if (i < 0) {
            add(name, std::move(values));
            return;
        }
        if (values.size() != n_rows_)
            throw DataError("column '" + name + "' size mismatch");
        cols_[static_cast<std::size_t>(i)] = std::move(values);
    }

    /// New table with rows picked by index, in the given order.
    DataTable select_rows(const std::vector<std::size_t>& rows) const {
        DataTable out(rows.size());
        for (std::size_t j = 0; j < names_.size(); ++j) {
            std::vector<double> v(rows.size());
            for (std::size_t k = 0; k < rows.size(); ++k) v[k] = cols_[j][rows[k]];
            out.add(names_[j], std::move(v));
        }
        return out;
    }

  private:
    std::ptrdiff_t index_of(const std::string& name) const {
        for (std::size_t j = 0; j < names_.size(); ++j)
            if (names_[j] == name) return static_cast<std::ptrdiff_t>(j);
        return -1;
    }

    std::size_t n_rows_ = 0;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> cols_;
};

inline bool is_missing(double v) { return std::isnan(v); }

} // namespace foodsec
