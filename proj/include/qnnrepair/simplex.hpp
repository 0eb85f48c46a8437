#ifndef QNNREPAIR_SIMPLEX_HPP_
#define QNNREPAIR_SIMPLEX_HPP_

#include <chrono>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

namespace qnnrepair::lp
{

enum class RowSense
{
    less_equal,
    greater_equal,
    equal
};

struct Row
{
    std::vector<double> coeffs;
    RowSense sense = RowSense::less_equal;
    double rhs = 0.0;
};

/// minimize objective . x subject to rows, x >= 0.
struct LinearProgram
{
    std::size_t num_vars = 0;
    std::vector<double> objective;
    std::vector<Row> rows;
};

enum class SolveStatus
{
    optimal,
    infeasible,
    unbounded,
    timeout
};

std::string_view to_string(SolveStatus status) noexcept;

struct SimplexResult
{
    SolveStatus status = SolveStatus::infeasible;
    double objective = 0.0;
    std::vector<double> x;
    /// Sum of artificials left after phase 1; above tolerance means infeasible.
    double phase1_objective = 0.0;
    std::size_t pivots = 0;
};

struct SimplexOptions
{
    double tolerance = 1e-9;
    std::optional<std::chrono::steady_clock::time_point> deadline;
};

/// Dense two-phase tableau simplex with Bland's rule.
SimplexResult solve_simplex(const LinearProgram &program, const SimplexOptions &options = {});

} // namespace qnnrepair::lp

#endif // QNNREPAIR_SIMPLEX_HPP_
