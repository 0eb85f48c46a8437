#ifndef QNNREPAIR_NEURON_LP_HPP_
#define QNNREPAIR_NEURON_LP_HPP_

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/fault_localization.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/quantizer.hpp"
#include "qnnrepair/simplex.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qnnrepair
{

struct NeuronId
{
    std::size_t layer = 0;
    std::size_t index = 0;

    friend bool operator==(const NeuronId &, const NeuronId &) = default;
};

struct LPConstraint
{
    std::size_t test_id = 0;
    std::vector<double> x;
    std::uint8_t target_status = 0;
    std::uint8_t current_status = 0;
};

/*
 * Minimal weight correction for one neuron: find deltas with |delta_i| <= M, M minimal, such that
 *   sum (w_i + delta_i) x_i + b >=  epsilon   for every constraint with target status 1
 *   sum (w_i + delta_i) x_i + b <= -epsilon   for every constraint with target status 0.
 */
struct NeuronLP
{
    NeuronId neuron;
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<LPConstraint> constraints;
    double epsilon = 1e-3;
    std::optional<double> big_M_bound;

    std::size_t fan_in() const noexcept { return weights.size(); }
    /// w . x + b for one constraint input.
    double pre_activation(const LPConstraint &c) const;
};

enum class LPStatus
{
    optimal,
    infeasible,
    timeout
};

std::string_view to_string(LPStatus status) noexcept;

struct LPSolution
{
    LPStatus status = LPStatus::infeasible;
    double M = 0.0;
    std::vector<double> deltas;
    std::size_t pivots = 0;
    double phase1_objective = 0.0;
};

inline constexpr std::size_t kDefaultMaxConstraints = 64;
inline constexpr double kDefaultEpsilon = 1e-3;

/// Constraint set from precomputed observations. Returns nullopt when no test disagrees on the neuron.
/// Failing tests come first (in dataset order), then passing ones, up to max_constraints.
std::optional<NeuronLP> build_neuron_lp(const QuantizedModel &qmodel, NeuronId neuron, std::span<const LayerObservation> observations,
                                        std::span<const TestOutcome> outcomes, double epsilon = kDefaultEpsilon,
                                        std::size_t max_constraints = kDefaultMaxConstraints);

/// Evaluates both models on the tests first. Returns nullopt when no test disagrees on the neuron.
std::optional<NeuronLP> build_neuron_lp(const Model &fmodel, const QuantizedModel &qmodel, NeuronId neuron, const Dataset &tests,
                                        double epsilon = kDefaultEpsilon, std::size_t max_constraints = kDefaultMaxConstraints);

/// Standard-form program over [d+_0..d+_{m-1}, d-_0..d-_{m-1}, M].
lp::LinearProgram to_linear_program(const NeuronLP &problem);

/// Throws std::invalid_argument on an empty constraint list.
LPSolution solve_lp(const NeuronLP &problem, double time_budget_seconds = 60.0);

/// CPLEX LP text for the problem (12 significant digits).
std::string format_lp(const NeuronLP &problem);
void export_lp(const NeuronLP &problem, const std::filesystem::path &path);

NeuronLP load_neuron_lp(const std::filesystem::path &path);
void save_neuron_lp(const NeuronLP &problem, const std::filesystem::path &path);

} // namespace qnnrepair

#endif // QNNREPAIR_NEURON_LP_HPP_
