#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mindkit/backward.hpp"

namespace mindkit {

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t worst_index = 0;
    double tape_grad = 0.0;
    double fd_grad = 0.0;
    bool pass(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against the tape gradient. `f` receives a tape
// and the watched input and must return a scalar loss on that tape. The
// difference quotient is accumulated in double; the relative error uses a
// unit denominator floor since forward values are float32.
inline GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                                  double step = 1e-3) {
    Tape tape;
    Tensor leaf = tape.leaf(x);
    Tensor loss = f(tape, leaf);
    GradMap grads = backward(loss);
    Tensor g = grads.of(leaf);

    GradCheckReport report;
    Tensor probe = x;
    for (size_t i = 0; i < x.numel(); ++i) {
        float orig = probe.data[i];
        float xp = orig + static_cast<float>(step);
        float xm = orig - static_cast<float>(step);
        probe.data[i] = xp;
        Tape tp;
        double fp = f(tp, tp.leaf(probe)).hi();
        probe.data[i] = xm;
        Tape tm;
        double fm = f(tm, tm.leaf(probe)).hi();
        probe.data[i] = orig;
        // divide by the perturbation actually applied after float32 rounding
        double fd = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
        double tg = static_cast<double>(g.data[i]);
        double rel = std::abs(tg - fd) / std::max({std::abs(tg), std::abs(fd), 1.0});
        if (rel >= report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.tape_grad = tg;
            report.fd_grad = fd;
        }
    }
    return report;
}

}  // namespace mindkit
