import numpy as np
import pytest
from scipy.special import logit

from gatedvol.errors import NonpositiveVariance
from gatedvol.estimation import inverse_transform, transform_params
from gatedvol.models import FAMILIES, Family, ModelSpec, ParamVector, filter_variance

FRACTIONAL = (Family.GFIGARCH, Family.RSM_GF, Family.GF_GC, Family.TGVOL)

TRUTHS = {
    Family.GARCH: ParamVector(omega=0.05, alpha=0.08, beta=0.9),
    Family.GJR: ParamVector(omega=0.05, alpha=0.05, leverage=0.06, beta=0.88),
    Family.RSM: ParamVector(omega=0.05, alpha=0.08, beta_low=0.7, beta_high=0.9, gamma_p=np.array([1.5, 0.0])),
    Family.GFIGARCH: ParamVector(omega=0.05, alpha=0.1, beta=0.8, dbar=0.05, gamma_d=np.array([1.0, 0.0])),
    Family.GCLOCK: ParamVector(omega=0.05, alpha0=0.1, kappa=0.1, eta=np.array([0.5, -0.3])),
    Family.RSM_GF: ParamVector(omega=0.05, alpha=0.1, beta_low=0.6, beta_high=0.8, gamma_p=np.array([1.0, 0.0]),
                               dbar=0.05, gamma_d=np.array([0.5, 0.5])),
    Family.RSM_GC: ParamVector(omega=0.05, alpha0=0.14, beta_low=0.6, beta_high=0.85, gamma_p=np.array([1.0, 0.0]),
                               kappa=1.5, eta=np.array([0.3, 0.1])),
    Family.GF_GC: ParamVector(omega=0.05, alpha0=0.2, dbar=0.05, gamma_d=np.array([1.0, 0.0]), kappa=0.15,
                              eta=np.array([0.4, -0.2])),
    Family.TGVOL: ParamVector(omega=0.05, alpha0=0.5, beta_low=0.8, beta_high=0.95, gamma_p=np.array([1.0, 0.0]),
                              dbar=0.02, gamma_d=np.array([1.0, 0.0]), kappa=0.2, eta=np.array([0.3, 0.2])),
}


def make_spec(fam, K=50, **kw):
    return ModelSpec(fam, K=K if fam in FRACTIONAL else None, **kw)


def random_point(spec, rng, returns, features, max_tries=200):
    """Random admissible parameters around the family's reference point.

    Unconstrained coordinates are perturbed by N(0, 0.5); the fractional
    order is kept in (0.005, 0.1).  Draws whose variance path turns
    nonpositive are rejected.
    """
    u0 = inverse_transform(spec, TRUTHS[spec.family])
    sl = spec.slices()
    for _ in range(max_tries):
        u = u0 + 0.5 * rng.standard_normal(u0.size)
        if spec.has_fractional:
            u[sl["dbar"].start] = logit(2 * rng.uniform(0.005, 0.1))
        p = transform_params(spec, u)
        try:
            filter_variance(spec, p, returns, features)
        except NonpositiveVariance:
            continue
        return u, p
    raise RuntimeError("no admissible draw")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --------------------------------------------------------------------------
# acceptance summary

_CRITERIA: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> str:
    """Store one acceptance line; printed again in the terminal summary."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    _CRITERIA[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
