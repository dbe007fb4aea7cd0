#pragma once

// Permutation-invariant policy/value network.
//
//   vehicle block (4) -> dense 32 -> ReLU -> dense 32 -> ReLU   (shared per slot)
//   max-pool over slots, floored by the encoding of the padding block
//   concat ego features (7) -> dense 64 -> ReLU -> dense 64 -> ReLU
//   policy head: dense 5 -> softmax
//   value head:  dense 1 -> sigmoid -> * 1/(1 - gamma)
//
// Gradients are computed by hand-written reverse mode over this fixed graph.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"
#include "pomdp.hpp"
#include "rng.hpp"
#include "traffic.hpp"

namespace tacdec {

inline constexpr int kEgoFeatures = 7;
inline constexpr int kVehicleFeatures = 4;
inline constexpr int kEncodedSize = kEgoFeatures + kVehicleFeatures * kMaxVehicles;

using EncodedState = std::array<double, kEncodedSize>;
using Policy = std::array<double, kNumActions>;

inline constexpr std::array<double, kVehicleFeatures> kPaddingBlock{-1.0, 0.0, 0.0, 0.0};

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Normalized network input. Vehicles beyond the sensor range are skipped;
// unused slots hold the padding block.
inline EncodedState encode_state(const WorldState& s, const SimParams& sim = {}) {
    EncodedState xi{};
    const Vehicle& e = s.ego;
    const double t_mid = (sim.T_max + sim.T_min) / 2.0;
    const double t_half = (sim.T_max - sim.T_min) / 2.0;
    xi[0] = 2.0 * e.phys.y / sim.y_max - 1.0;
    xi[1] = 2.0 * e.phys.v_x / sim.v_x_max - 1.0;
    xi[2] = sgn(e.phys.v_y);
    xi[3] = 2.0 * e.driver.v_set / sim.v_x_max - 1.0;
    xi[4] = (e.driver.T_set - t_mid) / t_half;
    xi[5] = s.road_case == Case::Exit ? 1.0 - 2.0 * e.phys.x / sim.x_exit : -1.0;
    xi[6] = s.s_term ? 1.0 : 0.0;
    int slot = 0;
    for (const Vehicle& v : s.others) {
        if (slot >= kMaxVehicles) break;
        if (std::abs(v.phys.x - e.phys.x) > sim.x_sensor) continue;
        double* blk = &xi[static_cast<std::size_t>(kEgoFeatures + kVehicleFeatures * slot)];
        blk[0] = (v.phys.x - e.phys.x) / sim.x_sensor;
        blk[1] = (v.phys.y - e.phys.y) / sim.y_max;
        blk[2] = (v.phys.v_x - e.phys.v_x) / (sim.v_set_max - sim.v_set_min);
        blk[3] = sgn(v.phys.v_y);
        ++slot;
    }
    for (; slot < kMaxVehicles; ++slot)
        std::copy(kPaddingBlock.begin(), kPaddingBlock.end(),
                  xi.begin() + kEgoFeatures + kVehicleFeatures * slot);
    return xi;
}

struct NetworkShape {
    int enc1 = 32;
    int enc2 = 32;
    int fc1 = 64;
    int fc2 = 64;
    bool operator==(const NetworkShape&) const = default;
};

struct NetworkOutput {
    Policy p{};
    double value = 0.0;
};

struct Sample {
    EncodedState xi{};
    Policy pi{};
    double z = 0.0;
};

struct LossWeights {
    double c1 = 100.0;
    double c2 = 1.0;
    double c3 = 0.0001;
};

struct LossBreakdown {
    double total = 0.0;
    double value = 0.0;   // mean c1 (z - V)^2
    double policy = 0.0;  // mean -c2 pi^T log p
    double reg = 0.0;     // c3 |theta|^2
};

struct DenseLayer {
    int out = 0;
    int in = 0;
    std::size_t w = 0;  // offset of the row-major weight matrix
    std::size_t b = 0;  // offset of the bias vector
};

class PolicyValueNet {
public:
    enum LayerId { kEnc1, kEnc2, kFc1, kFc2, kPolicy, kValue, kLayerCount };

    explicit PolicyValueNet(NetworkShape shape = {}, double value_scale = 20.0) : shape_(shape), value_scale_(value_scale) {
        const int dims[kLayerCount][2] = {{shape.enc1, kVehicleFeatures}, {shape.enc2, shape.enc1},
                                          {shape.fc1, shape.enc2 + kEgoFeatures}, {shape.fc2, shape.fc1},
                                          {kNumActions, shape.fc2}, {1, shape.fc2}};
        std::size_t off = 0;
        for (int l = 0; l < kLayerCount; ++l) {
            DenseLayer& L = layers_[static_cast<std::size_t>(l)];
            L.out = dims[l][0];
            L.in = dims[l][1];
            L.w = off;
            off += static_cast<std::size_t>(L.out * L.in);
            L.b = off;
            off += static_cast<std::size_t>(L.out);
        }
        params_.assign(off, 0.0);
    }

    // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    void initialize(Rng& rng) {
        for (const DenseLayer& L : layers_) {
            const double lim = std::sqrt(6.0 / (L.in + L.out));
            std::uniform_real_distribution<double> u(-lim, lim);
            for (int i = 0; i < L.out * L.in; ++i) params_[L.w + static_cast<std::size_t>(i)] = u(rng);
            for (int i = 0; i < L.out; ++i) params_[L.b + static_cast<std::size_t>(i)] = 0.0;
        }
    }

    const NetworkShape& shape() const { return shape_; }
    double value_scale() const { return value_scale_; }
    const std::array<DenseLayer, kLayerCount>& layers() const { return layers_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    NetworkOutput forward(const EncodedState& xi) const {
        Cache c;
        return run(xi, c);
    }

    double squared_norm() const {
        double s = 0.0;
        for (double v : params_) s += v * v;
        return s;
    }

    LossBreakdown loss(std::span<const Sample> batch, const LossWeights& lw) const {
        if (batch.empty()) throw std::invalid_argument("loss: empty batch");
        LossBreakdown out;
        Cache c;
        for (const Sample& s : batch) {
            const NetworkOutput o = run(s.xi, c);
            out.value += lw.c1 * (s.z - o.value) * (s.z - o.value);
            out.policy += -lw.c2 * cross_term(s.pi, o.p);
        }
        const double n = static_cast<double>(batch.size());
        out.value /= n;
        out.policy /= n;
        out.reg = lw.c3 * squared_norm();
        out.total = out.value + out.policy + out.reg;
        return out;
    }

    // Gradient of loss() with respect to params(); returns the loss as well.
    LossBreakdown gradient(std::span<const Sample> batch, const LossWeights& lw, std::vector<double>& grad) const {
        if (batch.empty()) throw std::invalid_argument("gradient: empty batch");
        grad.assign(params_.size(), 0.0);
        LossBreakdown out;
        Cache c;
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        for (const Sample& s : batch) {
            const NetworkOutput o = run(s.xi, c);
            out.value += lw.c1 * (s.z - o.value) * (s.z - o.value);
            out.policy += -lw.c2 * cross_term(s.pi, o.p);

            // Head gradients.
            const double dV = -2.0 * lw.c1 * (s.z - o.value) * inv_n;
            const double dvl = dV * value_scale_ * c.sig * (1.0 - c.sig);
            std::array<double, kNumActions> dlog{};
            double unclamped_mass = 0.0;
            for (int a = 0; a < kNumActions; ++a)
                if (o.p[static_cast<std::size_t>(a)] > kLogFloor) unclamped_mass += s.pi[static_cast<std::size_t>(a)];
            for (int a = 0; a < kNumActions; ++a) {
                const auto ua = static_cast<std::size_t>(a);
                const double own = o.p[ua] > kLogFloor ? s.pi[ua] : 0.0;
                dlog[ua] = -lw.c2 * (own - o.p[ua] * unclamped_mass) * inv_n;
            }
            backward(c, dlog, dvl, grad);
        }
        const double n = static_cast<double>(batch.size());
        out.value /= n;
        out.policy /= n;
        out.reg = lw.c3 * squared_norm();
        out.total = out.value + out.policy + out.reg;
        for (std::size_t i = 0; i < params_.size(); ++i) grad[i] += 2.0 * lw.c3 * params_[i];
        return out;
    }

    static constexpr double kLogFloor = 1e-12;

private:
    struct Cache {
        EncodedState xi{};
        std::vector<int> slots;                      // real (non-padding) slots
        std::vector<double> h1, h2;                  // [slot][unit], slot kMaxVehicles = padding
        std::vector<int> arg;                        // pool source per channel (kMaxVehicles = padding)
        std::vector<double> zin, t1, t2;
        std::array<double, kNumActions> p{};
        double sig = 0.0;
    };

    static double cross_term(const Policy& pi, const Policy& p) {
        double s = 0.0;
        for (int a = 0; a < kNumActions; ++a)
            s += pi[static_cast<std::size_t>(a)] * std::log(std::max(p[static_cast<std::size_t>(a)], kLogFloor));
        return s;
    }

    const double* W(LayerId l) const { return &params_[layers_[l].w]; }
    const double* B(LayerId l) const { return &params_[layers_[l].b]; }

    static void dense_relu(const double* w, const double* b, const double* x, int in, int out, double* y, bool relu) {
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            const double* row = w + static_cast<std::ptrdiff_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += row[i] * x[i];
            y[o] = relu ? std::max(acc, 0.0) : acc;
        }
    }

    static bool is_padding(const double* blk) {
        return blk[0] == kPaddingBlock[0] && blk[1] == kPaddingBlock[1] && blk[2] == kPaddingBlock[2] &&
               blk[3] == kPaddingBlock[3];
    }

    NetworkOutput run(const EncodedState& xi, Cache& c) const {
        const int e1 = shape_.enc1, e2 = shape_.enc2, f1 = shape_.fc1, f2 = shape_.fc2;
        const std::size_t slots_total = kMaxVehicles + 1;
        c.xi = xi;
        c.slots.clear();
        c.h1.assign(slots_total * static_cast<std::size_t>(e1), 0.0);
        c.h2.assign(slots_total * static_cast<std::size_t>(e2), 0.0);
        c.arg.assign(static_cast<std::size_t>(e2), kMaxVehicles);

        auto encode = [&](const double* blk, int slot) {
            double* h1 = &c.h1[static_cast<std::size_t>(slot * e1)];
            double* h2 = &c.h2[static_cast<std::size_t>(slot * e2)];
            dense_relu(W(kEnc1), B(kEnc1), blk, kVehicleFeatures, e1, h1, true);
            dense_relu(W(kEnc2), B(kEnc2), h1, e1, e2, h2, true);
        };
        encode(kPaddingBlock.data(), kMaxVehicles);
        c.zin.assign(static_cast<std::size_t>(e2 + kEgoFeatures), 0.0);
        const double* base = &c.h2[static_cast<std::size_t>(kMaxVehicles * e2)];
        std::copy(base, base + e2, c.zin.begin());
        for (int s = 0; s < kMaxVehicles; ++s) {
            const double* blk = &xi[static_cast<std::size_t>(kEgoFeatures + kVehicleFeatures * s)];
            if (is_padding(blk)) continue;
            c.slots.push_back(s);
            encode(blk, s);
            const double* h2 = &c.h2[static_cast<std::size_t>(s * e2)];
            for (int u = 0; u < e2; ++u) {
                if (h2[u] > c.zin[static_cast<std::size_t>(u)]) {
                    c.zin[static_cast<std::size_t>(u)] = h2[u];
                    c.arg[static_cast<std::size_t>(u)] = s;
                }
            }
        }
        for (int i = 0; i < kEgoFeatures; ++i) c.zin[static_cast<std::size_t>(e2 + i)] = xi[static_cast<std::size_t>(i)];

        c.t1.assign(static_cast<std::size_t>(f1), 0.0);
        c.t2.assign(static_cast<std::size_t>(f2), 0.0);
        dense_relu(W(kFc1), B(kFc1), c.zin.data(), e2 + kEgoFeatures, f1, c.t1.data(), true);
        dense_relu(W(kFc2), B(kFc2), c.t1.data(), f1, f2, c.t2.data(), true);

        std::array<double, kNumActions> logits{};
        dense_relu(W(kPolicy), B(kPolicy), c.t2.data(), f2, kNumActions, logits.data(), false);
        double vl = 0.0;
        dense_relu(W(kValue), B(kValue), c.t2.data(), f2, 1, &vl, false);

        const double mx = *std::max_element(logits.begin(), logits.end());
        double tot = 0.0;
        for (int a = 0; a < kNumActions; ++a) tot += c.p[static_cast<std::size_t>(a)] = std::exp(logits[static_cast<std::size_t>(a)] - mx);
        for (auto& v : c.p) v /= tot;
        c.sig = 1.0 / (1.0 + std::exp(-vl));

        NetworkOutput o;
        o.p = c.p;
        o.value = value_scale_ * c.sig;
        return o;
    }

    // Accumulates parameter gradients into g. dout is dL/dy; x is the layer
    // input; dx (optional) receives dL/dx.
    void dense_backward(LayerId l, const double* x, const double* dout, double* dx, std::vector<double>& g) const {
        const DenseLayer& L = layers_[l];
        const double* w = W(l);
        double* gw = &g[L.w];
        double* gb = &g[L.b];
        if (dx) std::fill(dx, dx + L.in, 0.0);
        for (int o = 0; o < L.out; ++o) {
            const double d = dout[o];
            if (d == 0.0) continue;
            gb[o] += d;
            double* grow = gw + static_cast<std::ptrdiff_t>(o) * L.in;
            const double* wrow = w + static_cast<std::ptrdiff_t>(o) * L.in;
            for (int i = 0; i < L.in; ++i) {
                grow[i] += d * x[i];
                if (dx) dx[i] += d * wrow[i];
            }
        }
    }

    void backward(const Cache& c, const std::array<double, kNumActions>& dlogits, double dvl, std::vector<double>& g) const {
        const int e1 = shape_.enc1, e2 = shape_.enc2, f1 = shape_.fc1, f2 = shape_.fc2;
        std::vector<double> dt2(static_cast<std::size_t>(f2), 0.0), tmp(static_cast<std::size_t>(f2), 0.0);
        dense_backward(kPolicy, c.t2.data(), dlogits.data(), dt2.data(), g);
        dense_backward(kValue, c.t2.data(), &dvl, tmp.data(), g);
        for (int i = 0; i < f2; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            dt2[ui] = c.t2[ui] > 0.0 ? dt2[ui] + tmp[ui] : 0.0;
        }
        std::vector<double> dt1(static_cast<std::size_t>(f1));
        dense_backward(kFc2, c.t1.data(), dt2.data(), dt1.data(), g);
        for (int i = 0; i < f1; ++i)
            if (!(c.t1[static_cast<std::size_t>(i)] > 0.0)) dt1[static_cast<std::size_t>(i)] = 0.0;
        std::vector<double> dz(static_cast<std::size_t>(e2 + kEgoFeatures));
        dense_backward(kFc1, c.zin.data(), dt1.data(), dz.data(), g);

        // Route pooled gradients to the winning slot (or the padding encoder).
        std::vector<double> dh2(static_cast<std::size_t>(e2)), dh1(static_cast<std::size_t>(e1));
        auto back_slot = [&](int slot, const double* blk) {
            const double* h1 = &c.h1[static_cast<std::size_t>(slot * e1)];
            const double* h2 = &c.h2[static_cast<std::size_t>(slot * e2)];
            bool any = false;
            for (int u = 0; u < e2; ++u) {
                const auto uu = static_cast<std::size_t>(u);
                dh2[uu] = (c.arg[uu] == slot && h2[u] > 0.0) ? dz[uu] : 0.0;
                any = any || dh2[uu] != 0.0;
            }
            if (!any) return;
            dense_backward(kEnc2, h1, dh2.data(), dh1.data(), g);
            for (int u = 0; u < e1; ++u)
                if (!(h1[u] > 0.0)) dh1[static_cast<std::size_t>(u)] = 0.0;
            dense_backward(kEnc1, blk, dh1.data(), nullptr, g);
        };
        back_slot(kMaxVehicles, kPaddingBlock.data());
        for (int s : c.slots) back_slot(s, &c.xi[static_cast<std::size_t>(kEgoFeatures + kVehicleFeatures * s)]);
    }

    NetworkShape shape_;
    double value_scale_;
    std::array<DenseLayer, kLayerCount> layers_{};
    std::vector<double> params_;
};

// Momentum SGD: v' = mu v - lr g; theta' = theta + v'.
inline void sgd_step(std::vector<double>& theta, const std::vector<double>& grad, std::vector<double>& velocity,
                     double lr, double mu) {
    if (theta.size() != grad.size() || theta.size() != velocity.size())
        throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = mu * velocity[i] - lr * grad[i];
        theta[i] += velocity[i];
    }
}

// Rescales `grad` so its Euclidean norm is at most max_norm (<= 0: no-op).
// Returns the norm before scaling.
inline double clip_gradient_norm(std::vector<double>& grad, double max_norm) {
    double ss = 0.0;
    for (double g : grad) ss += g * g;
    const double norm = std::sqrt(ss);
    if (max_norm > 0.0 && norm > max_norm)
        for (double& g : grad) g *= max_norm / norm;
    return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary layout (little-endian):
//   char[8]  magic "TDPVNET1"
//   u32      format version
//   u32      layer count, then per layer u32 rows, u32 cols (bias length = rows)
//   f64      value scale
//   u32      section count (1 = parameters, 2 = parameters + momentum)
//   u64      parameter count
//   f64[]    parameters, then momentum when present

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[8] = {'T', 'D', 'P', 'V', 'N', 'E', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string parameter_summary(const PolicyValueNet& net) {
    static const char* names[] = {"vehicle_encoder_1", "vehicle_encoder_2", "trunk_1", "trunk_2", "policy_head", "value_head"};
    std::ostringstream os;
    std::size_t total = 0;
    for (int l = 0; l < PolicyValueNet::kLayerCount; ++l) {
        const DenseLayer& L = net.layers()[static_cast<std::size_t>(l)];
        const std::size_t n = static_cast<std::size_t>(L.out * L.in + L.out);
        total += n;
        os << names[l] << ": " << L.out << "x" << L.in << " + " << L.out << " = " << n << "\n";
    }
    os << "total parameters: " << total << "\n";
    return os.str();
}

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointTruncatedError("checkpoint truncated");
    return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const PolicyValueNet& net, const std::vector<double>* momentum = nullptr) {
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    detail::put<std::uint32_t>(os, PolicyValueNet::kLayerCount);
    for (const DenseLayer& L : net.layers()) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.out));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(L.in));
    }
    detail::put<double>(os, net.value_scale());
    detail::put<std::uint32_t>(os, momentum ? 2u : 1u);
    detail::put<std::uint64_t>(os, net.param_count());
    os.write(reinterpret_cast<const char*>(net.params().data()), static_cast<std::streamsize>(net.param_count() * sizeof(double)));
    if (momentum) {
        if (momentum->size() != net.param_count()) throw CheckpointShapeError("momentum size mismatch");
        os.write(reinterpret_cast<const char*>(momentum->data()), static_cast<std::streamsize>(momentum->size() * sizeof(double)));
    }
}

struct LoadedCheckpoint {
    PolicyValueNet net;
    std::vector<double> momentum;  // empty when not stored
};

inline LoadedCheckpoint read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof magic)) throw CheckpointTruncatedError("checkpoint truncated");
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointFormatError("not a network checkpoint (bad magic)");
    const auto version = detail::get<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
    const auto layers = detail::get<std::uint32_t>(is);
    if (layers != PolicyValueNet::kLayerCount)
        throw CheckpointShapeError("expected " + std::to_string(PolicyValueNet::kLayerCount) + " layers, found " + std::to_string(layers));
    std::array<std::pair<std::uint32_t, std::uint32_t>, PolicyValueNet::kLayerCount> dims{};
    for (auto& d : dims) {
        d.first = detail::get<std::uint32_t>(is);
        d.second = detail::get<std::uint32_t>(is);
    }
    NetworkShape shape{static_cast<int>(dims[0].first), static_cast<int>(dims[1].first), static_cast<int>(dims[2].first),
                       static_cast<int>(dims[3].first)};
    const double scale = detail::get<double>(is);
    LoadedCheckpoint out{PolicyValueNet(shape, scale), {}};
    for (int l = 0; l < PolicyValueNet::kLayerCount; ++l) {
        const DenseLayer& L = out.net.layers()[static_cast<std::size_t>(l)];
        if (static_cast<std::uint32_t>(L.out) != dims[static_cast<std::size_t>(l)].first ||
            static_cast<std::uint32_t>(L.in) != dims[static_cast<std::size_t>(l)].second)
            throw CheckpointShapeError("layer " + std::to_string(l) + " has inconsistent shape");
    }
    const auto sections = detail::get<std::uint32_t>(is);
    if (sections != 1 && sections != 2) throw CheckpointFormatError("bad section count");
    const auto count = detail::get<std::uint64_t>(is);
    if (count != out.net.param_count()) throw CheckpointShapeError("parameter count does not match layer manifest");
    auto read_block = [&](std::vector<double>& dst) {
        dst.resize(count);
        if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(count * sizeof(double))))
            throw CheckpointTruncatedError("checkpoint truncated");
    };
    read_block(out.net.params());
    if (sections == 2) read_block(out.momentum);
    return out;
}

// Writes the checkpoint and returns a human-readable parameter summary.
inline std::string save_checkpoint(const PolicyValueNet& net, const std::string& path, const std::vector<double>* momentum = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint '" + path + "'");
    write_checkpoint(os, net, momentum);
    if (!os) throw CheckpointError("error writing checkpoint '" + path + "'");
    return parameter_summary(net);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(is);
}

}  // namespace tacdec
