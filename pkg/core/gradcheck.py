"""
Finite-difference gradient oracle
Re-executes a function in 64-bit and compares autodiff against central differences
"""
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from core.tensor import Tensor, mul, no_grad, sum_all

# (offset in steps, weight); the sum is divided by the step
STENCILS = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12)),
}


@dataclass
class GradCheckReport:
    """Outcome of one gradient check"""

    checked: int = 0
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "ok" if self.passed else f"{len(self.failures)} failures"
        return (f"{self.checked} coordinates, max abs {self.max_abs_error:.3e}, "
                f"max rel {self.max_rel_error:.3e}: {status}")


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], *,
                    step: float = 1e-3, rtol: float = 1e-4, atol: float = 1e-6,
                    max_checks: int = 24, seed: int = 0, order: int = 2) -> GradCheckReport:
    """Compare autodiff gradients of ``fn`` with central differences.

    The output of ``fn`` is contracted with a fixed random projection so any
    output shape yields a scalar loss. Up to ``max_checks`` coordinates per
    input are sampled. A coordinate passes when
    ``|auto - numeric| <= atol + rtol * max(|auto|, |numeric|)``.

    ``order=4`` uses the five-point central stencil at the same step, for
    smooth graphs whose curvature swamps the second-order truncation error.
    Keep ``order=2`` where max-pool or L1 kinks lie within 2 * step.
    """
    if order not in STENCILS:
        raise ValueError(f"order must be one of {sorted(STENCILS)}, got {order}")
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    projection = rng.standard_normal(out.shape)
    loss = sum_all(mul(out, Tensor(projection)))
    loss.backward()

    def evaluate() -> float:
        with no_grad():
            value = fn(*[Tensor(a) for a in arrays])
        return float(np.sum(value.data * projection))

    report = GradCheckReport()
    for idx, (array, leaf) in enumerate(zip(arrays, leaves)):
        auto = leaf.grad if leaf.grad is not None else np.zeros_like(array)
        flat = array.reshape(-1)
        picks = np.arange(flat.size)
        if flat.size > max_checks:
            picks = rng.choice(flat.size, size=max_checks, replace=False)
        for p in picks:
            original = flat[p]
            numeric = 0.0
            for offset, weight in STENCILS[order]:
                flat[p] = original + offset * step
                numeric += weight * evaluate()
            flat[p] = original
            numeric /= step
            analytic = float(auto.reshape(-1)[p])
            err = abs(analytic - numeric)
            scale = max(abs(analytic), abs(numeric))
            report.checked += 1
            report.max_abs_error = max(report.max_abs_error, err)
            if scale > atol:
                report.max_rel_error = max(report.max_rel_error, err / scale)
            if err > atol + rtol * scale:
                report.failures.append(
                    f"input {idx} index {int(p)}: autodiff {analytic:.8e} vs numeric {numeric:.8e}"
                )
    return report
