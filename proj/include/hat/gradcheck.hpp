#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hat/tape.hpp"

namespace hat {

// Central-difference gradient check against the tape's reverse pass, run
// entirely in double. ReLU kink coordinates (where the +h/-h evaluations
// disagree on any pre-activation sign) are flagged and skipped.
struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t checked = 0;
    size_t skipped_kinks = 0;
    int worst_param = -1;
    size_t worst_index = 0;

    bool ok(double tol) const { return max_rel_err < tol; }
};

// Builder receives a fresh tape and one leaf node per parameter (same order
// as `params`) and returns the scalar loss node.
using GradCheckBuilder =
    std::function<int(Tape<double>&, const std::vector<int>&)>;

struct GradCheckProblem {
    // parameter values as flat arrays plus their shapes
    std::vector<std::vector<double>> params;
    std::vector<std::pair<int, int>> shapes;
    GradCheckBuilder build;

    void add_param(const Tensor& t) {
        params.emplace_back(t.data.begin(), t.data.end());
        shapes.emplace_back(t.rows, t.cols);
    }
};

inline GradCheckReport grad_check(GradCheckProblem problem, double h = 1e-3) {
    auto eval = [&](const std::vector<std::vector<double>>& vals, Tape<double>& tape,
                    std::vector<int>& ids) -> int {
        ids.clear();
        for (size_t p = 0; p < vals.size(); ++p)
            ids.push_back(tape.leaf_values(problem.shapes[p].first, problem.shapes[p].second,
                                           vals[p]));
        return problem.build(tape, ids);
    };

    // analytic pass
    Tape<double> tape;
    std::vector<int> ids;
    const int loss = eval(problem.params, tape, ids);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (int id : ids) analytic.push_back(tape.grad(id));

    GradCheckReport report;
    std::vector<std::vector<double>> vals = problem.params;
    for (size_t p = 0; p < vals.size(); ++p) {
        for (size_t i = 0; i < vals[p].size(); ++i) {
            const double saved = vals[p][i];

            vals[p][i] = saved + h;
            Tape<double> tp;
            std::vector<int> idp;
            const double fp = tp.scalar(eval(vals, tp, idp));
            const std::vector<uint8_t> signs_p = tp.relu_signs();

            vals[p][i] = saved - h;
            Tape<double> tm;
            std::vector<int> idm;
            const double fm = tm.scalar(eval(vals, tm, idm));
            vals[p][i] = saved;

            if (signs_p != tm.relu_signs()) {
                ++report.skipped_kinks;
                continue;
            }
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[p][i];
            const double denom = std::max({std::abs(a), std::abs(fd), 1e-2});
            const double rel = std::abs(a - fd) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = static_cast<int>(p);
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace hat
