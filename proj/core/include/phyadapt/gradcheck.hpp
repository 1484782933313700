#pragma once

#include <functional>
#include <string>
#include <vector>

#include "phyadapt/tensor.hpp"

namespace phyadapt {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_coord = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// Central-difference check of analytic gradients.
//
//   loss_fn   re-evaluates the scalar loss from the current parameter
//             values (it must read *params fresh on every call)
//   params    the parameter tensors the loss depends on
//   analytic  analytic gradient per parameter, same order and shapes
//
// Tensors with more than `max_coords` elements are probed at `max_coords`
// coordinates sampled with `sample_seed`; smaller tensors get a full sweep.
// Relative error per coordinate is |fd - an| / max(|fd|, |an|, scale_floor);
// the floor keeps round-off noise on near-zero coordinates from registering
// as relative error.
GradCheckReport finite_difference_check(
    const std::function<double()>& loss_fn,
    const std::vector<Tensor*>& params,
    const std::vector<Tensor>& analytic,
    double step,
    int max_coords = 256,
    uint64_t sample_seed = 0,
    double scale_floor = 1e-2,
    const std::vector<std::string>& names = {});

}  // namespace phyadapt
