#pragma once

#include <cmath>

#include "tacdec/traffic.hpp"

namespace fixture {

using namespace tacdec;

inline Vehicle car(int id, double x, double y, double v, const DriverParams& p = drivers::kNormal) {
    Vehicle c;
    c.id = id;
    c.phys = {x, y, v, 0.0};
    c.driver = p;
    c.length = kCarLength;
    return c;
}

inline WorldState road(double ego_x, double ego_y, double ego_v, Case c = Case::Continuous) {
    WorldState w;
    w.road_case = c;
    w.ego.id = 0;
    w.ego.length = kEgoLength;
    w.ego.phys = {ego_x, ego_y, ego_v, 0.0};
    w.ego.driver = drivers::kNormal;
    return w;
}

// Independent IDM evaluation used as an oracle.
inline double idm_oracle(double v, double d, double dv, const DriverParams& p) {
    const double ds = p.d0 + v * p.T_set + v * dv / (2.0 * std::sqrt(p.a * p.b));
    const double acc = p.a * (1.0 - std::pow(v / p.v_set, 4) - std::pow(ds / d, 2));
    return acc < -8.0 ? -8.0 : acc;
}

// Standalone evaluation of the MOBIL criterion for subject s of a small world
// with explicitly enumerated neighbours.
struct MobilOracle {
    static double acc(const Vehicle& f, const Vehicle* l) {
        if (!l) return idm_oracle(f.phys.v_x, 1e6, 0.0, f.driver);
        const double gap = l->phys.x - l->length - f.phys.x;
        if (gap <= 0.0) return -8.0;
        return idm_oracle(f.phys.v_x, gap, f.phys.v_x - l->phys.v_x, f.driver);
    }
    static double acc_as(const Vehicle& f, const Vehicle* l, const DriverParams& p) {
        Vehicle g = f;
        g.driver = p;
        return acc(g, l);
    }

    static const Vehicle* nearest(const WorldState& w, int skip1, int skip2, int lane, double x, bool ahead) {
        const Vehicle* best = nullptr;
        for (int i = 0; i < w.vehicle_count(); ++i) {
            if (i == skip1 || i == skip2) continue;
            const Vehicle& v = w.at(i);
            if (std::lround(v.phys.y) != lane) continue;
            if (ahead ? v.phys.x <= x : v.phys.x >= x) continue;
            if (!best || (ahead ? v.phys.x < best->phys.x : v.phys.x > best->phys.x)) best = &v;
        }
        return best;
    }

    static int index_of(const WorldState& w, const Vehicle* v) {
        for (int i = 0; i < w.vehicle_count(); ++i)
            if (&w.at(i) == v) return i;
        return -1;
    }

    // Returns incentive, or -inf when unsafe or off-road.
    static double incentive(const WorldState& w, int s, int target) {
        if (target < 0 || target > 3) return -INFINITY;
        const Vehicle& S = w.at(s);
        const int lane = static_cast<int>(std::lround(S.phys.y));
        const DriverParams& p = S.driver;
        const Vehicle* L = nearest(w, s, -1, lane, S.phys.x, true);
        const Vehicle* O = nearest(w, s, -1, lane, S.phys.x, false);
        const Vehicle* NL = nearest(w, s, -1, target, S.phys.x, true);
        const Vehicle* NF = nearest(w, s, -1, target, S.phys.x, false);
        if (NL && NL->phys.x - NL->length - S.phys.x <= 0.0) return -INFINITY;
        if (NF && S.phys.x - S.length - NF->phys.x <= 0.0) return -INFINITY;
        double a_n = 0, at_n = 0;
        if (NF) {
            at_n = acc(*NF, &S);
            if (!(at_n > -p.b_safe)) return -INFINITY;
            a_n = acc(*NF, nearest(w, s, index_of(w, NF), target, NF->phys.x, true));
        }
        const double a_e = acc_as(S, L, p);
        const double at_e = acc_as(S, NL, p);
        double a_o = 0, at_o = 0;
        if (O) {
            a_o = acc(*O, &S);
            at_o = acc(*O, nearest(w, s, index_of(w, O), lane, O->phys.x, true));
        }
        return at_e - a_e + p.p * ((at_n - a_n) + (at_o - a_o));
    }

    static LaneChange decide(const WorldState& w, int s) {
        const Vehicle& S = w.at(s);
        const int lane = static_cast<int>(std::lround(S.phys.y));
        const double l = incentive(w, s, lane + 1), r = incentive(w, s, lane - 1);
        const bool ol = l > S.driver.a_th, orr = r > S.driver.a_th;
        if (ol && orr) return l > r ? LaneChange::Left : LaneChange::Right;
        if (ol) return LaneChange::Left;
        if (orr) return LaneChange::Right;
        return LaneChange::Stay;
    }
};

}  // namespace fixture
