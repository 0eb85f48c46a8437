#include "qnnrepair/simplex.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace qnnrepair::lp
{

std::string_view to_string(SolveStatus status) noexcept
{
    switch (status)
    {
        case SolveStatus::optimal:
            return "optimal";
        case SolveStatus::infeasible:
            return "infeasible";
        case SolveStatus::unbounded:
            return "unbounded";
        case SolveStatus::timeout:
            return "timeout";
    }
    return "unknown";
}

namespace
{

class Tableau
{
    public:
        Tableau(const LinearProgram &program, const SimplexOptions &options) :
                opts_(options)
        {
            const std::size_t m = program.rows.size();
            n_struct_ = program.num_vars;
            std::size_t n_slack = 0, n_art = 0;
            for (const Row &row : program.rows)
            {
                if (row.coeffs.size() != n_struct_)
                    throw std::invalid_argument("row width does not match num_vars");
                const RowSense s = normalized_sense(row);
                if (s != RowSense::equal)
                    n_slack++;
                if (s != RowSense::less_equal)
                    n_art++;
            }
            art_begin_ = n_struct_ + n_slack;
            cols_ = art_begin_ + n_art;
            width_ = cols_ + 1;
            t_.assign(m * width_, 0.0);
            basis_.assign(m, 0);
            obj_.assign(width_, 0.0);

            std::size_t slack = n_struct_, art = art_begin_;
            for (std::size_t i = 0; i < m; i++)
            {
                const Row &row = program.rows[i];
                const double sign = row.rhs < 0.0 ? -1.0 : 1.0;
                const RowSense s = normalized_sense(row);
                for (std::size_t j = 0; j < n_struct_; j++)
                    at(i, j) = sign * row.coeffs[j];
                at(i, cols_) = sign * row.rhs;
                if (s == RowSense::less_equal)
                {
                    at(i, slack) = 1.0;
                    basis_[i] = slack++;
                }
                else
                {
                    if (s == RowSense::greater_equal)
                        at(i, slack++) = -1.0;
                    at(i, art) = 1.0;
                    basis_[i] = art++;
                }
            }
        }

        SimplexResult solve(const LinearProgram &program)
        {
            SimplexResult result;
            const std::size_t m = basis_.size();

            // phase 1: minimize the sum of artificials
            for (std::size_t i = 0; i < m; i++)
                if (basis_[i] >= art_begin_)
                    for (std::size_t j = 0; j < width_; j++)
                        obj_[j] -= at(i, j);
            for (std::size_t j = art_begin_; j < cols_; j++)
                obj_[j] += 1.0;

            auto status = iterate(cols_, result.pivots);
            if (status == SolveStatus::timeout)
            {
                result.status = status;
                return result;
            }
            result.phase1_objective = -obj_[cols_];
            if (result.phase1_objective > opts_.tolerance * std::max(1.0, max_rhs()))
            {
                result.status = SolveStatus::infeasible;
                return result;
            }
            drive_out_artificials(result.pivots);

            // phase 2
            std::fill(obj_.begin(), obj_.end(), 0.0);
            for (std::size_t j = 0; j < n_struct_; j++)
                obj_[j] = program.objective[j];
            for (std::size_t i = 0; i < m; i++)
            {
                const std::size_t b = basis_[i];
                const double cost = b < n_struct_ ? program.objective[b] : 0.0;
                if (cost != 0.0)
                    for (std::size_t j = 0; j < width_; j++)
                        obj_[j] -= cost * at(i, j);
            }
            status = iterate(art_begin_, result.pivots);
            result.status = status;
            if (status != SolveStatus::optimal)
                return result;

            result.x.assign(n_struct_, 0.0);
            for (std::size_t i = 0; i < m; i++)
                if (basis_[i] < n_struct_)
                    result.x[basis_[i]] = std::max(0.0, at(i, cols_));
            result.objective = 0.0;
            for (std::size_t j = 0; j < n_struct_; j++)
                result.objective += program.objective[j] * result.x[j];
            return result;
        }

    private:
        static RowSense normalized_sense(const Row &row)
        {
            if (row.rhs >= 0.0 || row.sense == RowSense::equal)
                return row.sense;
            return row.sense == RowSense::less_equal ? RowSense::greater_equal : RowSense::less_equal;
        }

        double &at(std::size_t i, std::size_t j) { return t_[i * width_ + j]; }

        double max_rhs() const
        {
            double best = 0.0;
            for (std::size_t i = 0; i < basis_.size(); i++)
                best = std::max(best, std::fabs(t_[i * width_ + cols_]));
            return best;
        }

        bool expired() const
        {
            return opts_.deadline && std::chrono::steady_clock::now() >= *opts_.deadline;
        }

        // Bland's rule over columns [0, allowed_cols).
        SolveStatus iterate(std::size_t allowed_cols, std::size_t &pivots)
        {
            const double tol = opts_.tolerance;
            while (true)
            {
                if (expired())
                    return SolveStatus::timeout;
                std::size_t entering = allowed_cols;
                for (std::size_t j = 0; j < allowed_cols; j++)
                    if (obj_[j] < -tol)
                    {
                        entering = j;
                        break;
                    }
                if (entering == allowed_cols)
                    return SolveStatus::optimal;

                std::size_t leaving = basis_.size();
                double best_ratio = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < basis_.size(); i++)
                {
                    const double a = at(i, entering);
                    if (a <= tol)
                        continue;
                    const double r = at(i, cols_) / a;
                    const bool strictly_better = leaving == basis_.size() || r < best_ratio - tol;
                    const bool tie_with_lower_index = !strictly_better && r <= best_ratio + tol && basis_[i] < basis_[leaving];
                    if (strictly_better || tie_with_lower_index)
                    {
                        best_ratio = strictly_better ? r : std::min(best_ratio, r);
                        leaving = i;
                    }
                }
                if (leaving == basis_.size())
                    return SolveStatus::unbounded;
                pivot(leaving, entering);
                pivots++;
            }
        }

        void drive_out_artificials(std::size_t &pivots)
        {
            for (std::size_t i = 0; i < basis_.size(); i++)
            {
                if (basis_[i] < art_begin_)
                    continue;
                for (std::size_t j = 0; j < art_begin_; j++)
                    if (std::fabs(at(i, j)) > opts_.tolerance)
                    {
                        pivot(i, j);
                        pivots++;
                        break;
                    }
                // otherwise the row is redundant and its artificial stays basic at zero
            }
        }

        void pivot(std::size_t row, std::size_t col)
        {
            const double p = at(row, col);
            double *pr = &t_[row * width_];
            for (std::size_t j = 0; j < width_; j++)
                pr[j] /= p;
            pr[col] = 1.0;
            for (std::size_t i = 0; i < basis_.size(); i++)
            {
                if (i == row)
                    continue;
                const double f = at(i, col);
                if (f == 0.0)
                    continue;
                double *ri = &t_[i * width_];
                for (std::size_t j = 0; j < width_; j++)
                    ri[j] -= f * pr[j];
                ri[col] = 0.0;
            }
            const double f = obj_[col];
            if (f != 0.0)
            {
                for (std::size_t j = 0; j < width_; j++)
                    obj_[j] -= f * pr[j];
                obj_[col] = 0.0;
            }
            basis_[row] = col;
        }

        SimplexOptions opts_;
        std::size_t n_struct_ = 0;
        std::size_t art_begin_ = 0;
        std::size_t cols_ = 0;
        std::size_t width_ = 0;
        std::vector<double> t_;
        std::vector<std::size_t> basis_;
        std::vector<double> obj_;
};

} // namespace

SimplexResult solve_simplex(const LinearProgram &program, const SimplexOptions &options)
{
    if (program.objective.size() != program.num_vars)
        throw std::invalid_argument("objective width does not match num_vars");
    Tableau tableau(program, options);
    return tableau.solve(program);
}

} // namespace qnnrepair::lp
