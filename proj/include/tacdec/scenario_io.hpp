#pragma once

// Line-oriented scenario format.
//
//   # comment
//   <continuous|exit> <step_count> <s_term>
//   <id> <x> <y> <v_x> <v_y> <length> <v_set> <T_set> <d0> <a> <b> <p> <a_th> <b_safe>
//   ...
//
// The first vehicle line is the ego. Values are written with 17 significant
// digits so that loading a dumped state reproduces it exactly. A scenario set
// is several scenarios separated by a line containing only "---".

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "traffic.hpp"

namespace tacdec {

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The file could not be opened or written, as opposed to malformed content.
class ScenarioIoError : public ScenarioError {
public:
    using ScenarioError::ScenarioError;
};

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string case_name(Case c) { return c == Case::Exit ? "exit" : "continuous"; }

inline Case parse_case(const std::string& s) {
    if (s == "exit") return Case::Exit;
    if (s == "continuous") return Case::Continuous;
    throw ScenarioError("unknown case '" + s + "'");
}

inline void write_vehicle(std::ostream& os, const Vehicle& v) {
    os << v.id;
    for (double f : {v.phys.x, v.phys.y, v.phys.v_x, v.phys.v_y, v.length}) os << ' ' << format_double(f);
    for (double f : v.driver.as_array()) os << ' ' << format_double(f);
    os << '\n';
}

inline void write_scenario(std::ostream& os, const WorldState& w) {
    os << case_name(w.road_case) << ' ' << w.step_count << ' ' << (w.s_term ? 1 : 0) << '\n';
    write_vehicle(os, w.ego);
    for (const Vehicle& v : w.others) write_vehicle(os, v);
}

inline std::string dump_scenario(const WorldState& w) {
    std::ostringstream os;
    write_scenario(os, w);
    return os.str();
}

namespace detail {

inline Vehicle parse_vehicle(const std::string& line, int lineno) {
    std::istringstream is(line);
    Vehicle v;
    std::array<double, DriverParams::kSize> d{};
    if (!(is >> v.id >> v.phys.x >> v.phys.y >> v.phys.v_x >> v.phys.v_y >> v.length))
        throw ScenarioError("line " + std::to_string(lineno) + ": malformed vehicle record");
    for (auto& f : d)
        if (!(is >> f)) throw ScenarioError("line " + std::to_string(lineno) + ": missing driver parameter");
    std::string extra;
    if (is >> extra) throw ScenarioError("line " + std::to_string(lineno) + ": trailing field '" + extra + "'");
    v.driver = DriverParams::from_array(d);
    if (!(v.length > 0.0)) throw ScenarioError("line " + std::to_string(lineno) + ": vehicle length must be positive");
    return v;
}

}  // namespace detail

inline std::vector<WorldState> parse_scenarios(std::istream& in) {
    std::vector<WorldState> out;
    std::string line;
    int lineno = 0;
    bool have_header = false;
    bool have_ego = false;
    WorldState cur;
    auto flush = [&] {
        if (!have_header) return;
        if (!have_ego) throw ScenarioError("line " + std::to_string(lineno) + ": scenario has no ego vehicle");
        out.push_back(cur);
        cur = WorldState{};
        have_header = have_ego = false;
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        if (line.compare(first, 3, "---") == 0) {
            flush();
            continue;
        }
        if (!have_header) {
            std::istringstream is(line);
            std::string c;
            int step = 0, term = 0;
            if (!(is >> c >> step >> term)) throw ScenarioError("line " + std::to_string(lineno) + ": malformed header");
            try {
                cur.road_case = parse_case(c);
            } catch (const ScenarioError& e) {
                throw ScenarioError("line " + std::to_string(lineno) + ": " + e.what());
            }
            cur.step_count = step;
            cur.s_term = term != 0;
            have_header = true;
            continue;
        }
        Vehicle v = detail::parse_vehicle(line, lineno);
        if (!have_ego) {
            cur.ego = v;
            have_ego = true;
        } else {
            cur.others.push_back(v);
        }
    }
    flush();
    return out;
}

inline WorldState load_scenario_string(const std::string& text) {
    std::istringstream is(text);
    auto all = parse_scenarios(is);
    if (all.size() != 1) throw ScenarioError("expected exactly one scenario, found " + std::to_string(all.size()));
    return all.front();
}

inline std::vector<WorldState> load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioIoError("cannot open scenario file '" + path + "'");
    return parse_scenarios(in);
}

inline void save_scenario_file(const std::string& path, const std::vector<WorldState>& set) {
    std::ofstream out(path);
    if (!out) throw ScenarioIoError("cannot write scenario file '" + path + "'");
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i) out << "---\n";
        write_scenario(out, set[i]);
    }
}

}  // namespace tacdec
