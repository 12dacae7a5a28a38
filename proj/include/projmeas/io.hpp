#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"

namespace projmeas {

inline constexpr const char* kEnsembleMagic = "projmeas-ensemble/1";
inline constexpr const char* kScenarioMagic = "projmeas-scenario/1";
inline constexpr const char* kReportMagic = "projmeas-report/1";

/// Shortest round-trip decimal form; locale independent.
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_doubles(const std::vector<double>& vs) {
    std::string out;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ' ';
        out += fmt_double(vs[i]);
    }
    return out;
}

namespace detail {

/// Line reader that skips blanks and '#' comments but keeps line numbers.
class LineSource {
  public:
    explicit LineSource(std::istream& in) : in_(in) {}

    bool next(std::string& out, int& line_no) {
        std::string raw;
        while (std::getline(in_, raw)) {
            ++line_;
            const auto hash = raw.find('#');
            if (hash != std::string::npos) raw.erase(hash);
            // Trim.
            const auto b = raw.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const auto e = raw.find_last_not_of(" \t\r");
            out = raw.substr(b, e - b + 1);
            line_no = line_;
            return true;
        }
        return false;
    }

    [[nodiscard]] int line() const { return line_; }

  private:
    std::istream& in_;
    int line_ = 0;
};

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> parts;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) parts.push_back(tok);
    return parts;
}

inline double parse_double_or_throw(const std::string& tok, int line) {
    try {
        // Accept rational literals in float mode too.
        if (tok.find('/') != std::string::npos) return static_cast<double>(parse_rational(tok));
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw ValidationError("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError(line, "cannot parse number '" + tok + "'");
    }
}

}  // namespace detail

/// Parse the versioned ensemble format:
///
///   projmeas-ensemble/1
///   dim 2
///   mode float64 | exact-rational
///   atoms 2
///   weights 1/2 1/2
///   atom
///   2 1
///   0 1/2
///   atom
///   ...
inline MatrixEnsemble parse_ensemble(std::istream& in) {
    detail::LineSource src(in);
    std::string line;
    int ln = 0;
    if (!src.next(line, ln) || line != kEnsembleMagic)
        throw ParseError(ln ? ln : 1, std::string("expected header '") + kEnsembleMagic + "'");

    int dim = -1, n_atoms = -1;
    ArithmeticMode mode = ArithmeticMode::Float64;
    std::vector<std::string> weight_tokens;
    int weights_line = 0;
    std::vector<std::vector<std::string>> atom_tokens;
    std::vector<int> atom_lines;

    while (src.next(line, ln)) {
        auto parts = detail::split_ws(line);
        const std::string& key = parts[0];
        if (key == "dim") {
            if (parts.size() != 2) throw ParseError(ln, "dim expects one value");
            dim = std::stoi(parts[1]);
            if (dim < 1) throw ParseError(ln, "dim must be >= 1");
        } else if (key == "mode") {
            if (parts.size() != 2) throw ParseError(ln, "mode expects one value");
            if (parts[1] == "float64")
                mode = ArithmeticMode::Float64;
            else if (parts[1] == "exact-rational")
                mode = ArithmeticMode::ExactRational;
            else
                throw ParseError(ln, "mode must be float64 or exact-rational");
        } else if (key == "atoms") {
            if (parts.size() != 2) throw ParseError(ln, "atoms expects one value");
            n_atoms = std::stoi(parts[1]);
            if (n_atoms < 1) throw ParseError(ln, "atoms must be >= 1");
        } else if (key == "weights") {
            weight_tokens.assign(parts.begin() + 1, parts.end());
            weights_line = ln;
        } else if (key == "atom") {
            if (dim < 0) throw ParseError(ln, "dim must come before atom blocks");
            std::vector<std::string> entries;
            for (int r = 0; r < dim; ++r) {
                std::string row;
                int row_ln = 0;
                if (!src.next(row, row_ln)) throw ParseError(src.line(), "unexpected end of atom block");
                auto row_parts = detail::split_ws(row);
                if (static_cast<int>(row_parts.size()) != dim)
                    throw ParseError(row_ln, "atom row needs " + std::to_string(dim) + " entries");
                for (auto& t : row_parts) entries.push_back(t);
            }
            atom_tokens.push_back(std::move(entries));
            atom_lines.push_back(ln);
        } else {
            throw ParseError(ln, "unknown key '" + key + "'");
        }
    }
    if (dim < 0) throw ParseError(src.line(), "missing dim");
    if (n_atoms < 0) throw ParseError(src.line(), "missing atoms count");
    if (static_cast<int>(atom_tokens.size()) != n_atoms)
        throw ParseError(src.line(), "expected " + std::to_string(n_atoms) + " atom blocks, found " +
                                         std::to_string(atom_tokens.size()));
    if (static_cast<int>(weight_tokens.size()) != n_atoms)
        throw ParseError(weights_line ? weights_line : src.line(),
                         "expected " + std::to_string(n_atoms) + " weights");

    try {
        if (mode == ArithmeticMode::ExactRational) {
            std::vector<RatMatrix> atoms;
            std::vector<Rational> weights;
            for (const auto& t : weight_tokens) weights.push_back(parse_rational(t));
            for (int i = 0; i < n_atoms; ++i) {
                RatMatrix m(dim, dim);
                for (int k = 0; k < dim * dim; ++k) m.a[k] = parse_rational(atom_tokens[i][k]);
                atoms.push_back(std::move(m));
            }
            return make_rational_ensemble(std::move(atoms), std::move(weights));
        }
        std::vector<Eigen::MatrixXd> atoms;
        std::vector<double> weights;
        for (const auto& t : weight_tokens)
            weights.push_back(detail::parse_double_or_throw(t, weights_line));
        for (int i = 0; i < n_atoms; ++i) {
            Eigen::MatrixXd m(dim, dim);
            for (int r = 0; r < dim; ++r)
                for (int c = 0; c < dim; ++c)
                    m(r, c) = detail::parse_double_or_throw(atom_tokens[i][r * dim + c], atom_lines[i]);
            atoms.push_back(std::move(m));
        }
        return make_ensemble(std::move(atoms), std::move(weights));
    } catch (const ValidationError& err) {
        throw ParseError(weights_line ? weights_line : 1, err.what());
    }
}

inline MatrixEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ensemble file '" + path + "'");
    return parse_ensemble(in);
}

inline std::string serialize_ensemble(const MatrixEnsemble& e) {
    std::ostringstream os;
    os << kEnsembleMagic << "\n";
    os << "dim " << e.dim << "\n";
    os << "mode " << (e.exact() ? "exact-rational" : "float64") << "\n";
    os << "atoms " << e.size() << "\n";
    os << "weights";
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (e.exact())
            os << ' ' << format_rational(e.rat_weights[i]);
        else
            os << ' ' << fmt_double(e.weights[i]);
    }
    os << "\n";
    for (std::size_t i = 0; i < e.size(); ++i) {
        os << "atom\n";
        for (int r = 0; r < e.dim; ++r) {
            for (int c = 0; c < e.dim; ++c) {
                if (c) os << ' ';
                if (e.exact())
                    os << format_rational(e.rat_atoms[i].at(r, c));
                else
                    os << fmt_double(e.atoms[i](r, c));
            }
            os << "\n";
        }
    }
    return os.str();
}

inline void save_ensemble(const std::string& path, const MatrixEnsemble& e) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write ensemble file '" + path + "'");
    out << serialize_ensemble(e);
}

/// Deterministic structured-text report: ordered key/value lines with
/// optional section markers. Values are always formatted through fmt_double
/// so equal inputs give byte-identical files.
class TextReport {
  public:
    explicit TextReport(const std::string& kind) {
        lines_.push_back(std::string(kReportMagic));
        kv("kind", kind);
    }

    void section(const std::string& name) { lines_.push_back("[" + name + "]"); }
    void kv(const std::string& key, const std::string& value) { lines_.push_back(key + " " + value); }
    void kv(const std::string& key, const char* value) { kv(key, std::string(value)); }
    void kv(const std::string& key, double value) { kv(key, fmt_double(value)); }
    void kv(const std::string& key, long value) { kv(key, std::to_string(value)); }
    void kv(const std::string& key, int value) { kv(key, std::to_string(value)); }
    void kv(const std::string& key, std::uint64_t value) { kv(key, std::to_string(value)); }
    void kv(const std::string& key, bool value) { kv(key, value ? std::string("true") : std::string("false")); }
    void kv(const std::string& key, const std::vector<double>& vs) { kv(key, fmt_doubles(vs)); }

    [[nodiscard]] std::string str() const {
        std::string out;
        for (const auto& l : lines_) {
            out += l;
            out += '\n';
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write report '" + path + "'");
        out << str();
    }

  private:
    std::vector<std::string> lines_;
};

/// CSV writer with '#'-prefixed header comments (gnuplot-friendly).
class CsvWriter {
  public:
    void comment(const std::string& line) { comments_.push_back(line); }
    void header(const std::vector<std::string>& cols) { cols_ = cols; }

    void row(const std::vector<double>& vals) {
        std::string line;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (i) line += ',';
            line += fmt_double(vals[i]);
        }
        rows_.push_back(std::move(line));
    }

    void raw_row(const std::string& line) { rows_.push_back(line); }

    [[nodiscard]] std::string str() const {
        std::string out;
        for (const auto& c : comments_) out += "# " + c + "\n";
        if (!cols_.empty()) {
            for (std::size_t i = 0; i < cols_.size(); ++i) {
                if (i) out += ',';
                out += cols_[i];
            }
            out += '\n';
        }
        for (const auto& r : rows_) {
            out += r;
            out += '\n';
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write csv '" + path + "'");
        out << str();
    }

  private:
    std::vector<std::string> comments_;
    std::vector<std::string> cols_;
    std::vector<std::string> rows_;
};

/// Collects plot stanzas for the emitted CSV series; plain gnuplot syntax.
class PlotScript {
  public:
    void add(const std::string& csv_file, const std::string& using_spec, const std::string& title,
             const std::string& with = "lines", const std::string& extra_setup = "") {
        std::string s;
        if (!extra_setup.empty()) s += extra_setup + "\n";
        s += "plot '" + csv_file + "' using " + using_spec + " with " + with + " title '" + title + "'";
        stanzas_.push_back(s);
    }

    [[nodiscard]] bool empty() const { return stanzas_.empty(); }

    [[nodiscard]] std::string str() const {
        std::string out = "set datafile separator ','\nset key left top\n";
        for (std::size_t i = 0; i < stanzas_.size(); ++i) {
            out += stanzas_[i] + "\n";
            if (i + 1 < stanzas_.size()) out += "pause -1 'next'\n";
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write plot script '" + path + "'");
        out << str();
    }

  private:
    std::vector<std::string> stanzas_;
};

}  // namespace projmeas
