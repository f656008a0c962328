"""Numerical checks of the closed-form ambiguity identities over random beliefs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .efe import ambiguity_closed_form, ambiguity_generic
from .gaussian import LOG_2PI_E, Gaussian, gaussian_entropy, logdet_psd
from .models import RangeBearingSensor
from .transforms import TAYLOR1, TAYLOR2, UnscentedParams, transform


@dataclass(frozen=True)
class CheckResult:
    name: str
    transform: str
    max_deviation: float
    tolerance: float
    detail: str = ""
    extra_ok: bool = True

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation < self.tolerance and self.extra_ok)


def random_beliefs(n: int = 200, seed: int = 0, min_distance: float = 0.15, max_trace: float = 4.0,
                   station=(0.0, 0.0)) -> list[Gaussian]:
    """Means uniform on [-2, 2]^4 away from the station; random covariances with bounded trace."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        m = rng.uniform(-2.0, 2.0, 4)
        if np.hypot(m[0] - station[0], m[1] - station[1]) <= min_distance:
            continue
        A = rng.standard_normal((4, 4))
        S = A @ A.T + 1e-3 * np.eye(4)
        S *= rng.uniform(0.05, max_trace) / np.trace(S)
        out.append(Gaussian(m, S))
    return out


def default_sensor(rho: float = 1e-3) -> RangeBearingSensor:
    return RangeBearingSensor.with_noise(rho)


def _constant(model) -> float:
    return 0.5 * model.dim_y * LOG_2PI_E + 0.5 * logdet_psd(model.R)


def check_constant_ambiguity(kind, beliefs, model, reference_model=None, tolerance=1e-9) -> CheckResult:
    """Generic ambiguity against the R-only constant (first-order / unscented claim)."""
    ref = _constant(model if reference_model is None else reference_model)
    devs = np.array([abs(ambiguity_generic(transform(kind, model, b)) - ref) for b in beliefs])
    worst = int(np.argmax(devs))
    return CheckResult("constant ambiguity", kind.name, float(devs[worst]), tolerance,
                       f"worst at mean {np.round(beliefs[worst].mean, 3).tolist()}")


def check_taylor2(beliefs, model, reference_model=None, tolerance=1e-8, min_std=0.01) -> CheckResult:
    ref_model = model if reference_model is None else reference_model
    generic = np.array([ambiguity_generic(transform(TAYLOR2, model, b)) for b in beliefs])
    closed = np.array([ambiguity_closed_form(TAYLOR2, ref_model, b) for b in beliefs])
    std = float(generic.std(ddof=1))
    return CheckResult("closed form = generic", TAYLOR2.name, float(np.max(np.abs(generic - closed))), tolerance,
                       f"ensemble std {std:.4f} nats (needs > {min_std})", extra_ok=std > min_std)


def check_entropy_split(kind, beliefs, model, tolerance=1e-10) -> CheckResult:
    """Ambiguity equals joint entropy minus state entropy."""
    devs = []
    for b in beliefs:
        j = transform(kind, model, b)
        split = gaussian_entropy(j.joint()) - gaussian_entropy(b)
        devs.append(abs(ambiguity_generic(j) - split))
    return CheckResult("entropy split", kind.name, float(max(devs)), tolerance)


SUITES = ("taylor1", "taylor2", "unscented", "split")


def run_suites(which=SUITES, n: int = 200, seed: int = 0, corrupt_r: float | None = None) -> list[CheckResult]:
    """Run the identity checks.

    ``corrupt_r`` scales the sensor noise used by the transforms while the
    references keep the nominal value; every identity should then fail.
    """
    beliefs = random_beliefs(n, seed)
    nominal = default_sensor()
    model = nominal
    if corrupt_r is not None:
        model = RangeBearingSensor(nominal.R * corrupt_r, nominal.station)
    results = []
    if "taylor1" in which:
        results.append(check_constant_ambiguity(TAYLOR1, beliefs, model, nominal, 1e-9))
    if "unscented" in which:
        results.append(check_constant_ambiguity(UnscentedParams(), beliefs, model, nominal, 1e-8))
    if "taylor2" in which:
        results.append(check_taylor2(beliefs, model, nominal, 1e-8))
    if "split" in which:
        for kind in (TAYLOR1, TAYLOR2, UnscentedParams()):
            results.append(check_entropy_split(kind, beliefs, model, 1e-10))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<24}{'transform':<11}{'max deviation':>15}{'tolerance':>11}  result"]
    for r in results:
        lines.append(f"{r.name:<24}{r.transform:<11}{r.max_deviation:>15.3e}{r.tolerance:>11.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return "\n".join(lines)
