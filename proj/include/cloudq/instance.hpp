#pragma once

#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cloudq/common.hpp"

namespace cloudq {

// Full problem description. Node order is the file order; optimizers that
// need speed ordering keep their own permutation.
struct Instance {
    Regime regime = Regime::DBS;
    double lambda = 0.0;
    double theta = 0.0;
    double C = 0.0;
    std::vector<NodeParams> nodes;
    int truncation = 80;
    std::string id;

    void validate() const {
        if (!(lambda > 0.0)) throw std::invalid_argument("Instance: lambda must be > 0");
        if (!(theta > 0.0)) throw std::invalid_argument("Instance: theta must be > 0");
        if (!(C > 0.0)) throw std::invalid_argument("Instance: C must be > 0");
        if (nodes.empty()) throw std::invalid_argument("Instance: at least one node required");
        for (const auto& n : nodes) n.validate();
        for (const auto& n : nodes)
            if (truncation < n.m)
                throw std::invalid_argument("Instance: truncation below server count");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& text, int line, const std::string& key) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line) + ": value for '" + key
                         + "' is not a number: '" + text + "'");
    }
    if (used != text.size())
        throw ParseError("line " + std::to_string(line) + ": trailing junk after value for '"
                         + key + "': '" + text + "'");
    return v;
}

}  // namespace detail

// Flat key = value format with '#' comments. node.m / node.mu pairs appear in
// order, one pair per node.
inline Instance parse_instance(std::istream& in) {
    Instance inst;
    bool saw_regime = false, saw_lambda = false, saw_theta = false, saw_cost = false;
    int pending_m = -1;
    int pending_m_line = 0;
    int line_no = 0;
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (value.empty())
            throw ParseError("line " + std::to_string(line_no) + ": missing value for '" + key + "'");
        if (key == "regime") {
            if (value == "DBS") inst.regime = Regime::DBS;
            else if (value == "DES") inst.regime = Regime::DES;
            else
                throw ParseError("line " + std::to_string(line_no)
                                 + ": regime must be DBS or DES, got '" + value + "'");
            saw_regime = true;
        } else if (key == "lambda") {
            inst.lambda = detail::parse_number(value, line_no, key);
            saw_lambda = true;
        } else if (key == "theta") {
            inst.theta = detail::parse_number(value, line_no, key);
            saw_theta = true;
        } else if (key == "C") {
            inst.C = detail::parse_number(value, line_no, key);
            saw_cost = true;
        } else if (key == "truncation") {
            inst.truncation = static_cast<int>(detail::parse_number(value, line_no, key));
        } else if (key == "id") {
            inst.id = value;
        } else if (key == "node.m") {
            if (pending_m >= 0)
                throw ParseError("line " + std::to_string(line_no) + ": node.m on line "
                                 + std::to_string(pending_m_line) + " still lacks its node.mu");
            const double v = detail::parse_number(value, line_no, key);
            if (v < 1.0 || v != static_cast<int>(v))
                throw ParseError("line " + std::to_string(line_no)
                                 + ": node.m must be a positive integer");
            pending_m = static_cast<int>(v);
            pending_m_line = line_no;
        } else if (key == "node.mu") {
            if (pending_m < 0)
                throw ParseError("line " + std::to_string(line_no)
                                 + ": node.mu without a preceding node.m");
            inst.nodes.push_back({pending_m, detail::parse_number(value, line_no, key)});
            pending_m = -1;
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    if (pending_m >= 0)
        throw ParseError("line " + std::to_string(pending_m_line)
                         + ": node.m without a matching node.mu");
    if (!saw_regime) throw ParseError("missing required key 'regime'");
    if (!saw_lambda) throw ParseError("missing required key 'lambda'");
    if (!saw_theta) throw ParseError("missing required key 'theta'");
    if (!saw_cost) throw ParseError("missing required key 'C'");
    if (inst.nodes.empty()) throw ParseError("no nodes given (need node.m / node.mu pairs)");
    inst.validate();
    return inst;
}

inline Instance parse_instance(const std::string& text) {
    std::istringstream in(text);
    return parse_instance(in);
}

inline void write_instance(std::ostream& out, const Instance& inst) {
    out.precision(17);
    if (!inst.id.empty()) out << "id = " << inst.id << "\n";
    out << "regime = " << to_string(inst.regime) << "\n";
    out << "lambda = " << inst.lambda << "\n";
    out << "theta = " << inst.theta << "\n";
    out << "C = " << inst.C << "\n";
    out << "truncation = " << inst.truncation << "\n";
    for (const auto& n : inst.nodes) {
        out << "node.m = " << n.m << "\n";
        out << "node.mu = " << n.mu << "\n";
    }
}

}  // namespace cloudq
