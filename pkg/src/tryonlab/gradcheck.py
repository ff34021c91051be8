"""Central-difference gradient checking for scalar functions of tensors."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from tryonlab.errors import ValidationError


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    passed: bool
    tolerance: float

    def __repr__(self):
        status = "ok" if self.passed else "FAIL"
        return (f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
                f"tolerance={self.tolerance:g})")


def _rel_error(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    scale = torch.maximum(a.abs(), b.abs()).clamp(min=1e-6)
    return (a - b).abs() / scale


def grad_check(fn, inputs, tolerance: float = 1e-3, h: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of a scalar-valued `fn` against central
    finite differences, in 64-bit precision.

    `inputs` is a list of tensors; every element of every input is perturbed.
    """
    points = [torch.as_tensor(x).detach().double().clone().requires_grad_(True)
              for x in inputs]
    value = fn(*points)
    if value.dim() != 0:
        raise ValidationError("grad_check needs a scalar-valued function")
    if not torch.isfinite(value):
        raise ValidationError(f"function value is non-finite: {value.item()}")
    analytic = torch.autograd.grad(value, points, allow_unused=True)

    per_input = []
    worst = 0.0
    for i, point in enumerate(points):
        an = analytic[i]
        if an is None:
            an = torch.zeros_like(point)
        if not torch.isfinite(an).all():
            bad = torch.nonzero(~torch.isfinite(an))[0].tolist()
            raise ValidationError(f"analytic gradient of input {i} non-finite at {bad}")
        flat = point.detach().clone().reshape(-1)
        fd = torch.zeros_like(flat)
        for j in range(flat.numel()):
            for sign in (+1.0, -1.0):
                probe = flat.clone()
                probe[j] += sign * h
                args = [p.detach() for p in points]
                args[i] = probe.reshape(point.shape)
                out = fn(*args)
                if not torch.isfinite(out):
                    raise ValidationError(
                        f"non-finite value while perturbing input {i} element {j}")
                fd[j] += sign * out.detach() / (2.0 * h)
        err = float(_rel_error(an.reshape(-1), fd).max())
        per_input.append(err)
        worst = max(worst, err)
    return GradCheckReport(max_rel_error=worst, per_input=per_input,
                           passed=worst < tolerance, tolerance=tolerance)
