"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backprop

# Relative error floor: differences below ~1e-10 are finite-difference noise,
# so tiny matching gradients must not inflate the ratio.
_REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    n_checked: int
    worst_param: str = ""
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        worst = f", worst={self.worst_param}" if self.worst_param else ""
        return (
            f"gradcheck {status}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tolerance:.1e}, {self.n_checked} entries{worst})"
        )


def finite_diff_check(
    loss_fn,
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of `loss_fn()` against central differences.

    `loss_fn` must build a fresh scalar-loss graph from the current parameter
    values on every call; the finite-difference side re-evaluates it with
    perturbed entries, fully independent of the recorded tape. A parameter
    dict with no entries passes vacuously.
    """
    for p in params.values():
        p.zero_grad()
    out = loss_fn()
    backprop(out)
    analytic = {name: np.array(p.grad) for name, p in params.items()}

    def eval_scalar() -> float:
        return float(loss_fn().data)

    max_rel = 0.0
    worst = ""
    n_checked = 0
    failures = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = gen.choice(flat.size, size=max_entries_per_param, replace=False)
            idx.sort()
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            f_plus = eval_scalar()
            flat[i] = keep - h
            f_minus = eval_scalar()
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{i}]"
            if rel > tolerance:
                failures.append((f"{name}[{i}]", float(a), float(numeric), float(rel)))
    return GradCheckReport(
        max_rel_err=max_rel,
        tolerance=tolerance,
        n_checked=n_checked,
        worst_param=worst,
        failures=failures,
    )
