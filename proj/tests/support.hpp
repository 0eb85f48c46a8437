#ifndef QNNREPAIR_TESTS_SUPPORT_HPP_
#define QNNREPAIR_TESTS_SUPPORT_HPP_

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/fault_localization.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/neuron_lp.hpp"
#include "qnnrepair/quantizer.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

namespace qnnrepair::testing
{

inline std::filesystem::path fixture(const std::string &name)
{
    return std::filesystem::path(QNNREPAIR_FIXTURES) / name;
}

inline std::string read_bytes(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class TempDir
{
    public:
        explicit TempDir(const std::string &tag)
        {
            path_ = std::filesystem::temp_directory_path() / ("qnnrepair_" + tag + "_" + std::to_string(::getpid()));
            std::filesystem::remove_all(path_);
            std::filesystem::create_directories(path_);
        }
        ~TempDir()
        {
            std::error_code ec;
            std::filesystem::remove_all(path_, ec);
        }
        TempDir(const TempDir &) = delete;
        TempDir &operator=(const TempDir &) = delete;

        const std::filesystem::path &path() const noexcept { return path_; }
        std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

    private:
        std::filesystem::path path_;
};

inline Tensor vec(std::vector<float> v)
{
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

inline Tensor mat(std::size_t rows, std::size_t cols, std::vector<float> v)
{
    return Tensor({rows, cols}, std::move(v));
}

inline Tensor random_tensor(Shape shape, std::mt19937_64 &rng, float scale = 1.0f)
{
    std::normal_distribution<float> dist(0.0f, scale);
    std::vector<float> v(element_count(shape));
    for (auto &x : v)
        x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

/// Random dense classifier: `widths` lists every layer width starting with the input.
inline Model random_mlp(const std::vector<std::size_t> &widths, std::mt19937_64 &rng, bool separate_relu = true)
{
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); i++)
    {
        const bool last = i + 2 == widths.size();
        const float scale = 1.0f / std::sqrt(static_cast<float>(widths[i]));
        auto w = random_tensor({widths[i], widths[i + 1]}, rng, scale);
        auto b = random_tensor({widths[i + 1]}, rng, 0.1f);
        if (last || separate_relu)
        {
            layers.push_back(Layer::dense(std::move(w), std::move(b)));
            if (!last)
                layers.push_back(Layer::relu());
        }
        else
            layers.push_back(Layer::dense(std::move(w), std::move(b), true));
    }
    return Model(std::move(layers), {widths.front()}, widths.back());
}

/// Hand-assembled QuantizedModel where every dense layer uses a caller-chosen scale.
inline QuantizedModel quantize_with_scale(const Model &model, float scale)
{
    std::vector<QuantizedLayer> layers;
    for (const auto &l : model.layers())
    {
        QuantizedLayer q;
        q.kind = l.kind;
        q.bias = l.bias;
        q.stride = l.stride;
        q.pool_size = l.pool_size;
        q.fused_relu = l.fused_relu;
        if (l.weights)
            q.weights = quantize_tensor(*l.weights, scale, 0);
        layers.push_back(std::move(q));
    }
    return QuantizedModel(std::move(layers), model.input_shape(), model.num_classes());
}

/*
 * A float/quantized pair whose output neuron 0 gets two contradictory LP constraints.
 * Both models map u to the hidden vector (relu(u), 0). The float output neuron 0 is h0 - 0.5 and the
 * quantized one is 0.5 - h0, so u = 1 needs delta0 >= 0.5 + eps while u = 0.25 needs
 * 0.25 * delta0 <= -0.25 - eps.
 */
struct ContradictionCase
{
    Model fmodel;
    QuantizedModel qmodel;
    Dataset data;
};

inline ContradictionCase contradiction_case()
{
    auto hidden = [] { return Layer::dense(mat(1, 2, {1.0f, 0.0f}), vec({0.0f, 0.0f}), true); };
    std::vector<Layer> fl = {hidden(), Layer::dense(mat(2, 2, {1.0f, 0.0f, 0.0f, 0.0f}), vec({-0.5f, 0.0f}))};
    std::vector<Layer> ql = {hidden(), Layer::dense(mat(2, 2, {-1.0f, 0.0f, 0.0f, 0.0f}), vec({0.5f, 0.0f}))};
    Model f(std::move(fl), {1}, 2);
    const Model qf(std::move(ql), {1}, 2);
    Dataset ds;
    ds.num_classes = 2;
    ds.push_back(vec({1.0f}), 0);
    ds.push_back(vec({0.25f}), 1);
    return {std::move(f), quantize_with_scale(qf, 1.0f / 64.0f), std::move(ds)};
}

// ---- independent oracles ----

/// Pre-activation of a dense layer computed directly from the weight matrix.
inline std::vector<double> dense_oracle(const Tensor &w, const Tensor &b, std::span<const float> x)
{
    const std::size_t in = w.shape()[0], out = w.shape()[1];
    std::vector<double> z(out);
    for (std::size_t j = 0; j < out; j++)
    {
        double acc = b[j];
        for (std::size_t i = 0; i < in; i++)
            acc += static_cast<double>(x[i]) * w[i * out + j];
        z[j] = acc;
    }
    return z;
}

/// Direct substitution check of an LP solution: returns the smallest constraint margin minus epsilon
/// and the largest |delta| minus M (both should be >= -1e-9 and <= 1e-9 respectively).
struct SubstitutionCheck
{
    double margin_slack = 0.0;
    double bound_excess = 0.0;
};

inline SubstitutionCheck substitute(const NeuronLP &lp, const LPSolution &sol)
{
    SubstitutionCheck c{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto &con : lp.constraints)
    {
        double z = lp.bias;
        for (std::size_t i = 0; i < lp.weights.size(); i++)
            z += (lp.weights[i] + sol.deltas[i]) * con.x[i];
        const double margin = con.target_status == 1 ? z : -z;
        c.margin_slack = std::min(c.margin_slack, margin - lp.epsilon);
    }
    for (double d : sol.deltas)
        c.bound_excess = std::max(c.bound_excess, std::abs(d) - sol.M);
    return c;
}

/*
 * Exhaustive grid search for the minimal M of a neuron LP with fan-in 1 or 2. Squares of growing
 * half-width k*step are searched ring by ring, so the first feasible ring gives the grid optimum.
 * Returns a negative value when nothing is feasible up to max_M.
 */
inline double grid_min_M(const NeuronLP &lp, double step, double max_M)
{
    const std::size_t m = lp.weights.size();
    struct Half
    {
        double a0, a1, rhs;
    };
    std::vector<Half> halves;
    for (const auto &con : lp.constraints)
    {
        const double pre = lp.pre_activation(con);
        const double s = con.target_status == 1 ? 1.0 : -1.0;
        // s * (pre + a.delta) >= eps
        halves.push_back({s * con.x[0], m > 1 ? s * con.x[1] : 0.0, lp.epsilon - s * pre});
    }
    auto feasible = [&](double d0, double d1) {
        for (const auto &h : halves)
            if (h.a0 * d0 + h.a1 * d1 < h.rhs - 1e-12)
                return false;
        return true;
    };
    const long kmax = static_cast<long>(std::ceil(max_M / step));
    for (long k = 0; k <= kmax; k++)
    {
        const double r = static_cast<double>(k) * step;
        if (m == 1)
        {
            if (feasible(r, 0.0) || feasible(-r, 0.0))
                return r;
            continue;
        }
        for (long t = -k; t <= k; t++)
        {
            const double v = static_cast<double>(t) * step;
            if (feasible(v, r) || feasible(v, -r) || feasible(r, v) || feasible(-r, v))
                return r;
        }
    }
    return -1.0;
}

} // namespace qnnrepair::testing

#endif // QNNREPAIR_TESTS_SUPPORT_HPP_
