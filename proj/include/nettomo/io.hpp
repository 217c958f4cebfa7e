#pragma once

// File formats: matrix CSV, 0/1 mask CSV, key=value manifests and configs,
// binary PGM images.

#include <nettomo/core.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace nettomo {

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

inline std::ofstream open_out(const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return out;
}

inline std::ifstream open_in(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    return in;
}

inline double parse_double(std::string_view tok, const std::string &where) {
    const std::string t = trim(tok);
    double v = 0.0;
    const auto *begin = t.data();
    const auto *end = t.data() + t.size();
    if (!t.empty() && *begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (t.empty() || ec != std::errc() || ptr != end)
        throw ParseError(where + ": invalid number '" + t + "'");
    return v;
}

} // namespace detail

/// Shortest of the %.17g representation; parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_matrix_csv(std::ostream &out, const Matrix &m) {
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

inline void write_matrix_csv(const std::filesystem::path &path, const Matrix &m) {
    auto out = detail::open_out(path);
    write_matrix_csv(out, m);
    if (!out) throw Error("write failed: " + path.string());
}

inline Matrix read_matrix_csv(std::istream &in, const std::string &name) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<double> row;
        std::size_t start = 0;
        const std::string where = name + ":" + std::to_string(lineno);
        while (true) {
            const auto comma = line.find(',', start);
            row.push_back(detail::parse_double(
                std::string_view(line).substr(start, comma == std::string::npos
                                                         ? std::string::npos
                                                         : comma - start),
                where));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(where + ": expected " + std::to_string(rows.front().size()) +
                             " columns, found " + std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return Matrix(0, 0);
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
    return m;
}

inline Matrix read_matrix_csv(const std::filesystem::path &path) {
    auto in = detail::open_in(path);
    return read_matrix_csv(in, path.string());
}

inline void write_mask_csv(const std::filesystem::path &path, const BoolArray &mask) {
    auto out = detail::open_out(path);
    for (Index i = 0; i < mask.rows(); ++i) {
        for (Index j = 0; j < mask.cols(); ++j) {
            if (j) out << ',';
            out << (mask(i, j) ? '1' : '0');
        }
        out << '\n';
    }
}

inline BoolArray read_mask_csv(const std::filesystem::path &path) {
    const Matrix m = read_matrix_csv(path);
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            if (m(i, j) != 0.0 && m(i, j) != 1.0)
                throw ParseError(path.string() + ":" + std::to_string(i + 1) +
                                 ": mask entries must be 0 or 1");
    return m.array() != 0.0;
}

/// Ordered key=value file. Lines starting with '#' are comments.
class KeyValueFile {
public:
    KeyValueFile() = default;

    static KeyValueFile parse(std::istream &in, const std::string &name) {
        KeyValueFile kv;
        std::string line;
        std::size_t lineno = 0;
        std::string section;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[' && t.back() == ']') {
                section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ParseError(name + ":" + std::to_string(lineno) +
                                 ": expected key=value, got '" + t + "'");
            std::string key = detail::trim(std::string_view(t).substr(0, eq));
            if (!section.empty()) key = section + "." + key;
            kv.set(key, detail::trim(std::string_view(t).substr(eq + 1)));
        }
        return kv;
    }

    static KeyValueFile read(const std::filesystem::path &path) {
        auto in = detail::open_in(path);
        return parse(in, path.string());
    }

    void write(const std::filesystem::path &path) const {
        auto out = detail::open_out(path);
        for (const auto &k : order_) out << k << '=' << values_.at(k) << '\n';
    }

    void set(const std::string &key, const std::string &value) {
        if (!values_.count(key)) order_.push_back(key);
        values_[key] = value;
    }
    void set(const std::string &key, double value) { set(key, format_double(value)); }
    void set(const std::string &key, long long value) { set(key, std::to_string(value)); }
    void set(const std::string &key, int value) { set(key, std::to_string(value)); }
    void set(const std::string &key, Index value, int) { set(key, std::to_string(value)); }

    bool has(const std::string &key) const { return values_.count(key) != 0; }
    const std::vector<std::string> &keys() const noexcept { return order_; }

    std::string get(const std::string &key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
        return it->second;
    }
    std::string get(const std::string &key, const std::string &fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    double get_double(const std::string &key, std::optional<double> fallback = {}) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            throw ConfigError("missing key '" + key + "'");
        }
        try {
            return detail::parse_double(get(key), "key '" + key + "'");
        } catch (const ParseError &e) {
            throw ConfigError(e.what());
        }
    }
    long long get_int(const std::string &key, std::optional<long long> fallback = {}) const {
        const double v = get_double(key, fallback ? std::optional<double>(double(*fallback))
                                                  : std::nullopt);
        if (v != std::floor(v)) throw ConfigError("key '" + key + "' must be an integer");
        return static_cast<long long>(v);
    }
    bool get_bool(const std::string &key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string v = get(key);
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off") return false;
        throw ConfigError("key '" + key + "' must be a boolean");
    }
    /// Comma-separated list of numbers.
    std::vector<double> get_list(const std::string &key, std::vector<double> fallback) const {
        if (!has(key)) return fallback;
        std::vector<double> out;
        std::stringstream ss(get(key));
        std::string tok;
        while (std::getline(ss, tok, ','))
            try {
                out.push_back(detail::parse_double(tok, "key '" + key + "'"));
            } catch (const ParseError &e) {
                throw ConfigError(e.what());
            }
        if (out.empty()) throw ConfigError("key '" + key + "' must not be empty");
        return out;
    }

    /// Throws ConfigError naming the first key not in `allowed`.
    void require_known(const std::set<std::string> &allowed) const {
        for (const auto &k : order_)
            if (!allowed.count(k)) throw ConfigError("unknown configuration key '" + k + "'");
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

/// 8-bit binary PGM of an error grid: <= 0.01 white, >= 1 black, linear
/// in between. NaN cells are drawn mid-grey.
inline std::vector<unsigned char> error_to_gray(const Matrix &errors) {
    std::vector<unsigned char> px(static_cast<std::size_t>(errors.size()));
    std::size_t k = 0;
    for (Index i = 0; i < errors.rows(); ++i)
        for (Index j = 0; j < errors.cols(); ++j) {
            const double e = errors(i, j);
            double level;
            if (std::isnan(e)) level = 0.5;
            else if (e <= 0.01) level = 1.0;
            else if (e >= 1.0) level = 0.0;
            else level = 1.0 - (e - 0.01) / 0.99;
            px[k++] = static_cast<unsigned char>(std::lround(255.0 * level));
        }
    return px;
}

inline void write_pgm(const std::filesystem::path &path, const Matrix &errors) {
    auto out = detail::open_out(path);
    out << "P5\n" << errors.cols() << ' ' << errors.rows() << "\n255\n";
    const auto px = error_to_gray(errors);
    out.write(reinterpret_cast<const char *>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) throw Error("write failed: " + path.string());
}

struct GrayImage {
    Index width = 0;
    Index height = 0;
    std::vector<unsigned char> pixels;
};

inline GrayImage read_pgm(const std::filesystem::path &path) {
    auto in = detail::open_in(path);
    std::string magic;
    GrayImage img;
    int maxval = 0;
    in >> magic >> img.width >> img.height >> maxval;
    if (!in || magic != "P5" || maxval != 255 || img.width < 0 || img.height < 0)
        throw ParseError(path.string() + ": not an 8-bit binary PGM");
    in.get();
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
    in.read(reinterpret_cast<char *>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw ParseError(path.string() + ": truncated pixel data");
    return img;
}

inline void write_topology_csv(const std::filesystem::path &path, const Topology &topo) {
    Matrix m(topo.link_count(), 2);
    for (Index l = 0; l < topo.link_count(); ++l) {
        m(l, 0) = topo.links()[l].from;
        m(l, 1) = topo.links()[l].to;
    }
    write_matrix_csv(path, m);
}

inline std::vector<Link> read_links_csv(const std::filesystem::path &path) {
    const Matrix m = read_matrix_csv(path);
    if (m.size() && m.cols() != 2)
        throw ParseError(path.string() + ": expected two columns (from,to)");
    std::vector<Link> links;
    for (Index l = 0; l < m.rows(); ++l) {
        if (m(l, 0) != std::floor(m(l, 0)) || m(l, 1) != std::floor(m(l, 1)))
            throw ParseError(path.string() + ":" + std::to_string(l + 1) +
                             ": node indices must be integers");
        links.push_back({static_cast<int>(m(l, 0)), static_cast<int>(m(l, 1))});
    }
    return links;
}

inline std::string format_od_pairs(const std::vector<OdPair> &od) {
    std::string s;
    for (std::size_t i = 0; i < od.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(od[i].origin) + ':' + std::to_string(od[i].destination);
    }
    return s;
}

inline std::vector<OdPair> parse_od_pairs(const std::string &s) {
    std::vector<OdPair> out;
    if (detail::trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ';')) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw ParseError("od_pairs: expected origin:destination");
        out.push_back({static_cast<int>(detail::parse_double(tok.substr(0, colon), "od_pairs")),
                       static_cast<int>(detail::parse_double(tok.substr(colon + 1), "od_pairs"))});
    }
    return out;
}

} // namespace nettomo
