#include "qnnrepair/neuron_lp.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace qnnrepair
{

namespace
{

std::string fmt12(double v)
{
    if (v == 0.0)
        v = 0.0; // drop the sign of -0
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

} // namespace

double NeuronLP::pre_activation(const LPConstraint &c) const
{
    double acc = bias;
    for (std::size_t i = 0; i < weights.size(); i++)
        acc += weights[i] * c.x[i];
    return acc;
}

std::string_view to_string(LPStatus status) noexcept
{
    switch (status)
    {
        case LPStatus::optimal:
            return "optimal";
        case LPStatus::infeasible:
            return "infeasible";
        case LPStatus::timeout:
            return "timeout";
    }
    return "unknown";
}

std::optional<NeuronLP> build_neuron_lp(const QuantizedModel &qmodel, NeuronId neuron, std::span<const LayerObservation> observations,
                                        std::span<const TestOutcome> outcomes, double epsilon, std::size_t max_constraints)
{
    if (observations.size() != outcomes.size())
        throw std::invalid_argument("observation and outcome counts differ");
    if (epsilon < 0.0)
        throw std::invalid_argument("epsilon must be non-negative");
    const auto column = qmodel.neuron_weights(neuron.layer, neuron.index);
    const Layer &layer = qmodel.effective_model().layer(neuron.layer);

    NeuronLP problem;
    problem.neuron = neuron;
    problem.weights.assign(column.begin(), column.end());
    problem.bias = (*layer.bias)[neuron.index];
    problem.epsilon = epsilon;

    auto collect = [&](bool failing) {
        for (std::size_t t = 0; t < observations.size() && problem.constraints.size() < max_constraints; t++)
        {
            if (outcomes[t].is_failing != failing)
                continue;
            const LayerObservation &o = observations[t];
            if (neuron.index >= o.float_status.size())
                throw std::out_of_range("neuron index outside the observed layer");
            if (o.float_status[neuron.index] == o.quant_status[neuron.index])
                continue;
            LPConstraint c;
            c.test_id = outcomes[t].input_id;
            c.x.assign(o.quant_input.values().begin(), o.quant_input.values().end());
            c.target_status = o.float_status[neuron.index];
            c.current_status = o.quant_status[neuron.index];
            problem.constraints.push_back(std::move(c));
        }
    };
    collect(true);
    collect(false);
    if (problem.constraints.empty())
        return std::nullopt;
    return problem;
}

std::optional<NeuronLP> build_neuron_lp(const Model &fmodel, const QuantizedModel &qmodel, NeuronId neuron, const Dataset &tests, double epsilon,
                                        std::size_t max_constraints)
{
    const auto outcomes = classify_tests(fmodel, qmodel, tests);
    const auto observations = observe_layer(fmodel, qmodel, tests, neuron.layer);
    return build_neuron_lp(qmodel, neuron, observations, outcomes, epsilon, max_constraints);
}

lp::LinearProgram to_linear_program(const NeuronLP &problem)
{
    const std::size_t m = problem.fan_in();
    const std::size_t m_var = 2 * m;
    lp::LinearProgram prog;
    prog.num_vars = 2 * m + 1;
    prog.objective.assign(prog.num_vars, 0.0);
    prog.objective[m_var] = 1.0;

    for (const LPConstraint &c : problem.constraints)
    {
        if (c.x.size() != m)
            throw ShapeError("constraint input has " + std::to_string(c.x.size()) + " entries, fan-in is " + std::to_string(m));
        lp::Row row;
        row.coeffs.assign(prog.num_vars, 0.0);
        for (std::size_t i = 0; i < m; i++)
        {
            row.coeffs[i] = c.x[i];
            row.coeffs[m + i] = -c.x[i];
        }
        const double current = problem.pre_activation(c);
        if (c.target_status)
        {
            row.sense = lp::RowSense::greater_equal;
            row.rhs = problem.epsilon - current;
        }
        else
        {
            row.sense = lp::RowSense::less_equal;
            row.rhs = -problem.epsilon - current;
        }
        prog.rows.push_back(std::move(row));
    }
    for (std::size_t i = 0; i < m; i++)
    {
        // d_i - M <= 0 and -d_i - M <= 0
        for (double sign : {1.0, -1.0})
        {
            lp::Row row;
            row.coeffs.assign(prog.num_vars, 0.0);
            row.coeffs[i] = sign;
            row.coeffs[m + i] = -sign;
            row.coeffs[m_var] = -1.0;
            row.sense = lp::RowSense::less_equal;
            row.rhs = 0.0;
            prog.rows.push_back(std::move(row));
        }
    }
    if (problem.big_M_bound)
    {
        lp::Row row;
        row.coeffs.assign(prog.num_vars, 0.0);
        row.coeffs[m_var] = 1.0;
        row.sense = lp::RowSense::less_equal;
        row.rhs = *problem.big_M_bound;
        prog.rows.push_back(std::move(row));
    }
    return prog;
}

LPSolution solve_lp(const NeuronLP &problem, double time_budget_seconds)
{
    if (problem.constraints.empty())
        throw std::invalid_argument("solve_lp needs at least one constraint");
    const auto prog = to_linear_program(problem);
    lp::SimplexOptions opts;
    if (time_budget_seconds > 0.0)
        opts.deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(time_budget_seconds));
    const auto res = lp::solve_simplex(prog, opts);

    LPSolution sol;
    sol.pivots = res.pivots;
    sol.phase1_objective = res.phase1_objective;
    switch (res.status)
    {
        case lp::SolveStatus::optimal:
            break;
        case lp::SolveStatus::infeasible:
            sol.status = LPStatus::infeasible;
            return sol;
        case lp::SolveStatus::timeout:
            sol.status = LPStatus::timeout;
            return sol;
        case lp::SolveStatus::unbounded:
            throw std::logic_error("neuron LP reported unbounded although M >= 0 bounds the objective");
    }
    const std::size_t m = problem.fan_in();
    sol.status = LPStatus::optimal;
    sol.deltas.resize(m);
    for (std::size_t i = 0; i < m; i++)
        sol.deltas[i] = res.x[i] - res.x[m + i];
    sol.M = res.x[2 * m];
    return sol;
}

std::string format_lp(const NeuronLP &problem)
{
    const std::size_t m = problem.fan_in();
    std::ostringstream out;
    out << "\\ neuron correction problem: layer " << problem.neuron.layer << " neuron " << problem.neuron.index << '\n';
    out << "\\ fan_in " << m << ", constraints " << problem.constraints.size() << ", epsilon " << fmt12(problem.epsilon) << '\n';
    out << "Minimize\n obj: M\nSubject To\n";
    for (std::size_t k = 0; k < problem.constraints.size(); k++)
    {
        const LPConstraint &c = problem.constraints[k];
        out << " c" << k << ":";
        bool first = true;
        for (std::size_t i = 0; i < m; i++)
        {
            if (c.x[i] == 0.0)
                continue;
            const double coef = c.x[i];
            if (first)
                out << ' ' << (coef < 0 ? "-" : "") << fmt12(std::fabs(coef)) << " d" << i;
            else
                out << (coef < 0 ? " - " : " + ") << fmt12(std::fabs(coef)) << " d" << i;
            first = false;
        }
        if (first)
            out << " 0 d0";
        const double current = problem.pre_activation(c);
        if (c.target_status)
            out << " >= " << fmt12(problem.epsilon - current) << '\n';
        else
            out << " <= " << fmt12(-problem.epsilon - current) << '\n';
    }
    for (std::size_t i = 0; i < m; i++)
    {
        out << " u" << i << ": d" << i << " - M <= 0\n";
        out << " l" << i << ": d" << i << " + M >= 0\n";
    }
    out << "Bounds\n";
    if (problem.big_M_bound)
        out << " 0 <= M <= " << fmt12(*problem.big_M_bound) << '\n';
    else
        out << " M >= 0\n";
    for (std::size_t i = 0; i < m; i++)
        out << " d" << i << " free\n";
    out << "End\n";
    return out.str();
}

void export_lp(const NeuronLP &problem, const std::filesystem::path &path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << format_lp(problem);
    if (!out)
        throw std::runtime_error("write failed: " + path.string());
}

NeuronLP load_neuron_lp(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path.string());
    try
    {
        const auto doc = nlohmann::json::parse(in);
        NeuronLP p;
        p.neuron.layer = doc.at("layer").get<std::size_t>();
        p.neuron.index = doc.at("neuron").get<std::size_t>();
        p.weights = doc.at("weights").get<std::vector<double>>();
        p.bias = doc.value("bias", 0.0);
        p.epsilon = doc.value("epsilon", kDefaultEpsilon);
        if (doc.contains("big_M_bound") && !doc.at("big_M_bound").is_null())
            p.big_M_bound = doc.at("big_M_bound").get<double>();
        for (const auto &node : doc.at("constraints"))
        {
            LPConstraint c;
            c.test_id = node.value("test_id", std::size_t{0});
            c.x = node.at("x").get<std::vector<double>>();
            c.target_status = node.at("target_status").get<std::uint8_t>();
            c.current_status = node.at("current_status").get<std::uint8_t>();
            if (c.x.size() != p.weights.size())
                throw ShapeError(path.string() + ": constraint width does not match weights");
            p.constraints.push_back(std::move(c));
        }
        return p;
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_neuron_lp(const NeuronLP &problem, const std::filesystem::path &path)
{
    nlohmann::json doc;
    doc["layer"] = problem.neuron.layer;
    doc["neuron"] = problem.neuron.index;
    doc["weights"] = problem.weights;
    doc["bias"] = problem.bias;
    doc["epsilon"] = problem.epsilon;
    doc["big_M_bound"] = problem.big_M_bound ? nlohmann::json(*problem.big_M_bound) : nlohmann::json(nullptr);
    doc["constraints"] = nlohmann::json::array();
    for (const auto &c : problem.constraints)
        doc["constraints"].push_back({{"test_id", c.test_id}, {"x", c.x}, {"target_status", c.target_status}, {"current_status", c.current_status}});
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(1) << '\n';
}

} // namespace qnnrepair
