#pragma once

// CSV input and output.  Data files use the header y,w,delta,z1,...,zd with
// '.' as the decimal point; values are written with 17 significant digits so
// a dataset survives a write/read cycle unchanged.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spire/error.hpp"
#include "spire/model.hpp"
#include "spire/simulation.hpp"

namespace spire {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_cell(const std::string& raw, std::size_t line, const std::string& column) {
    const std::string cell = trim(raw);
    double v = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
        throw DataError("line " + std::to_string(line) + ": column '" + column + "' is not a finite number ('" +
                        cell + "')");
    return v;
}

}  // namespace detail

inline void write_csv(std::ostream& os, const Dataset& data) {
    os << "y,w,delta";
    for (std::size_t k = 0; k < data.dim(); ++k) os << ",z" << (k + 1);
    os << '\n';
    for (const auto& r : data.rows()) {
        os << format_double(r.y) << ',' << format_double(r.w) << ',' << r.delta;
        for (double v : r.z) os << ',' << format_double(v);
        os << '\n';
    }
}

inline void write_csv(const std::string& path, const Dataset& data) {
    std::ofstream os(path);
    if (!os) throw std::ios_base::failure("cannot open '" + path + "' for writing");
    write_csv(os, data);
    if (!os) throw std::ios_base::failure("write to '" + path + "' failed");
}

/// Reads y,w,delta,z1..zd.  Errors name the 1-based line number.
inline Dataset read_csv(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    while (std::getline(is, line)) {
        ++lineno;
        if (!detail::trim(line).empty()) {
            header = detail::split_csv_line(line);
            break;
        }
    }
    if (header.empty()) throw DataError("empty CSV input");
    for (auto& h : header) h = detail::trim(h);
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0] = header[0].substr(3);
    if (header.size() < 3 || header[0] != "y" || header[1] != "w" || header[2] != "delta")
        throw DataError("line " + std::to_string(lineno) + ": header must start with y,w,delta");
    for (std::size_t k = 3; k < header.size(); ++k)
        if (header[k] != "z" + std::to_string(k - 2))
            throw DataError("line " + std::to_string(lineno) + ": expected column 'z" + std::to_string(k - 2) +
                            "', found '" + header[k] + "'");
    std::vector<Observation> rows;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        Observation o;
        o.y = detail::parse_cell(cells[0], lineno, "y");
        o.w = detail::parse_cell(cells[1], lineno, "w");
        const double d = detail::parse_cell(cells[2], lineno, "delta");
        if (d != 0.0 && d != 1.0)
            throw DataError("line " + std::to_string(lineno) + ": delta must be 0 or 1, found " + detail::trim(cells[2]));
        o.delta = static_cast<int>(d);
        for (std::size_t k = 3; k < cells.size(); ++k) o.z.push_back(detail::parse_cell(cells[k], lineno, header[k]));
        rows.push_back(std::move(o));
    }
    if (rows.empty()) throw DataError("CSV has a header but no data rows");
    return Dataset(std::move(rows));
}

inline Dataset read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_csv(is);
}

/// Min-max transform of w and the selected covariate columns (0-based) to
/// [0, 1].  Constant columns are rejected.
inline Dataset scale_to_unit(const Dataset& data, const std::vector<std::size_t>& z_columns) {
    auto range = [&](auto get) {
        double lo = get(data[0]), hi = lo;
        for (const auto& r : data.rows()) {
            lo = std::min(lo, get(r));
            hi = std::max(hi, get(r));
        }
        return std::pair{lo, hi};
    };
    std::vector<Observation> rows = data.rows();
    const auto [wlo, whi] = range([](const Observation& r) { return r.w; });
    if (!(whi > wlo)) throw DataError("cannot rescale w: all values are equal");
    for (auto& r : rows) r.w = (r.w - wlo) / (whi - wlo);
    for (std::size_t k : z_columns) {
        if (k >= data.dim()) throw ConfigError("scale column z" + std::to_string(k + 1) + " does not exist");
        const auto [lo, hi] = range([k](const Observation& r) { return r.z[k]; });
        if (!(hi > lo)) throw DataError("cannot rescale z" + std::to_string(k + 1) + ": all values are equal");
        for (auto& r : rows) r.z[k] = (r.z[k] - lo) / (hi - lo);
    }
    return Dataset(std::move(rows));
}

/// design,estimator,working,param,mean,ese,ase,cov,nonconverged; ese is left
/// empty when it is undefined.
inline void write_summary_csv(std::ostream& os, const SummaryTable& table) {
    os << "design,estimator,working,param,mean,ese,ase,cov,nonconverged\n";
    for (const auto& r : table.rows) {
        os << '"' << r.design << "\"," << r.estimator << ',' << r.working << ',' << r.param << ','
           << format_double(r.mean) << ',' << (r.ese ? format_double(*r.ese) : std::string()) << ','
           << format_double(r.ase) << ',' << format_double(r.cov) << ',' << r.nonconverged << '\n';
    }
}

}  // namespace spire
