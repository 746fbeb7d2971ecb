#pragma once

// Touchstone v1 two-port files in real/imaginary format.

#include "jtwpa/io.hpp"
#include "jtwpa/network.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace jtwpa {

inline std::string format_touchstone(const TwoPortResponse& r) {
    if (r.size() == 0) throw std::invalid_argument("cannot export an empty response");
    std::ostringstream out;
    out << "! two-port S-parameters, real/imaginary\n";
    out << "# Hz S RI R " << format_double(r.ref_impedance) << '\n';
    for (std::size_t i = 0; i < r.size(); ++i) {
        out << format_double(r.freqs[i]);
        for (const auto* s : {&r.s11, &r.s21, &r.s12, &r.s22})
            out << ' ' << format_double((*s)[i].real()) << ' ' << format_double((*s)[i].imag());
        out << '\n';
    }
    return out.str();
}

/// Writes an .s2p file atomically. Column order is S11 S21 S12 S22.
inline void export_touchstone(const TwoPortResponse& r, const std::filesystem::path& path) {
    write_file_atomic(path, format_touchstone(r));
}

/// Reader for the subset written above: Hz, S, RI, one frequency per line.
inline TwoPortResponse parse_touchstone(std::istream& in, const std::string& source = "<stream>") {
    TwoPortResponse r;
    std::string line;
    bool have_options = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto bang = line.find('!'); bang != std::string::npos) line.erase(bang);
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;
        if (first == "#") {
            std::string unit, kind, format, rword;
            double z0 = 0.0;
            ls >> unit >> kind >> format >> rword >> z0;
            for (auto* s : {&unit, &kind, &format, &rword})
                for (auto& ch : *s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            if (unit != "HZ" || kind != "S" || format != "RI" || rword != "R" || !(z0 > 0.0))
                throw std::runtime_error(source + ": unsupported option line '" + line + "'");
            r.ref_impedance = z0;
            have_options = true;
            continue;
        }
        double v[9];
        v[0] = std::stod(first);
        for (int k = 1; k < 9; ++k) {
            if (!(ls >> v[k]))
                throw std::runtime_error(source + ":" + std::to_string(line_no) + ": expected 9 columns");
        }
        r.freqs.push_back(v[0]);
        r.s11.emplace_back(v[1], v[2]);
        r.s21.emplace_back(v[3], v[4]);
        r.s12.emplace_back(v[5], v[6]);
        r.s22.emplace_back(v[7], v[8]);
    }
    if (!have_options) throw std::runtime_error(source + ": missing option line");
    return r;
}

inline TwoPortResponse read_touchstone(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_touchstone(in, path.string());
}

} // namespace jtwpa
