"""
CSV ingestion, run configuration, command dispatch and report export.

Configuration files are line-oriented ``key = value`` pairs with dotted
sections::

    data.path = prices.csv
    data.scale = 100
    models = GARCH, RSM
    model.RSM.beta_low_start = 0.6
    model.GFIGARCH.K = 150
    window = 1500

Unknown keys are rejected.  Relative paths resolve against the directory
of the configuration file.  All CSV numerics are written with 17
significant digits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
from pathlib import Path
import platform
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsReport, SurfaceGrid, gate_surface_grid, residual_diagnostics
from .errors import (
    ConfigError,
    DegenerateHessian,
    EmptyFile,
    EmptySample,
    GatedVolError,
    InsufficientHistory,
    NonmonotoneDates,
    NonpositiveVariance,
    NoConvergence,
    ParseError,
    SampleTooShort,
    UnstableRegion,
    WindowTooShort,
)
from .estimation import FitOptions, FitResult, fit_qmle, local_whittle
from .evaluation import BacktestReport, ForecastRecord, LEVELS, fz_terms, qlike_terms, rolling_backtest, var_es_forecast
from .features import FeatureConfig, ReturnSeries, build_feature_matrix
from .frac_kernel import select_truncation
from .kernel_core import (
    decompose_kernel,
    discrete_weights,
    figarch_kernel,
    garch_kernel,
    gclock_kernel,
    gjr_kernel,
)
from .models import (
    FAMILIES,
    Family,
    ModelSpec,
    ParamVector,
    ar1_features,
    filter_variance,
    simulate_path,
)

__all__ = [
    "COMMANDS",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_DATA",
    "EXIT_NUMERIC",
    "ModelConfig",
    "RunConfig",
    "parse_config",
    "load_config",
    "load_series",
    "write_series",
    "run_command",
    "export_report",
    "exit_code_for",
    "bundled_config_path",
]

log = logging.getLogger(__name__)

COMMANDS = ("fit", "forecast", "backtest", "simulate", "decompose", "diagnose")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PARAM_NAMES = ("omega", "alpha", "alpha0", "leverage", "beta", "beta_low", "beta_high",
               "gamma_p", "dbar", "gamma_d", "kappa", "eta")
VECTOR_PARAMS = ("gamma_p", "gamma_d", "eta")

DEFAULT_TRUTHS = {
    Family.GARCH: dict(omega=0.05, alpha=0.08, beta=0.90),
    Family.GJR: dict(omega=0.05, alpha=0.05, leverage=0.06, beta=0.88),
    Family.RSM: dict(omega=0.05, alpha=0.08, beta_low=0.7, beta_high=0.9, gamma_p=[1.5, 0.0]),
    Family.GFIGARCH: dict(omega=0.05, alpha=0.1, beta=0.8, dbar=0.05, gamma_d=[1.0, 0.0]),
    Family.GCLOCK: dict(omega=0.05, alpha0=0.1, kappa=0.1, eta=[0.5, -0.3]),
    Family.RSM_GF: dict(omega=0.05, alpha=0.1, beta_low=0.6, beta_high=0.8, gamma_p=[1.0, 0.0],
                        dbar=0.05, gamma_d=[0.5, 0.5]),
    Family.RSM_GC: dict(omega=0.05, alpha0=0.14, beta_low=0.6, beta_high=0.85, gamma_p=[1.0, 0.0],
                        kappa=1.5, eta=[0.3, 0.1]),
    Family.GF_GC: dict(omega=0.05, alpha0=0.2, dbar=0.05, gamma_d=[1.0, 0.0], kappa=0.15, eta=[0.4, -0.2]),
    Family.TGVOL: dict(omega=0.05, alpha0=0.5, beta_low=0.8, beta_high=0.95, gamma_p=[1.0, 0.0],
                       dbar=0.02, gamma_d=[1.0, 0.0], kappa=0.2, eta=[0.3, 0.2]),
}


# --------------------------------------------------------------------------
# configuration

def _int(lo=None, hi=None):
    def conv(v):
        try:
            x = int(v)
        except ValueError:
            raise ConfigError(f"expected an integer, got '{v}'") from None
        if (lo is not None and x < lo) or (hi is not None and x > hi):
            raise ConfigError(f"{x} outside [{lo}, {hi}]")
        return x
    return conv


def _float(lo=None, hi=None, open_lo=False):
    def conv(v):
        try:
            x = float(v)
        except ValueError:
            raise ConfigError(f"expected a number, got '{v}'") from None
        if not math.isfinite(x):
            raise ConfigError(f"expected a finite number, got '{v}'")
        if lo is not None and (x < lo or (open_lo and x == lo)):
            raise ConfigError(f"{x} below the allowed minimum {lo}")
        if hi is not None and x > hi:
            raise ConfigError(f"{x} above the allowed maximum {hi}")
        return x
    return conv


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{v}'")


def _choice(*opts):
    def conv(v):
        if v not in opts:
            raise ConfigError(f"'{v}' not one of {', '.join(opts)}")
        return v
    return conv


def _families(v):
    out = []
    for item in v.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(Family(item.upper()))
        except ValueError:
            raise ConfigError(f"unknown model family '{item}'") from None
    if not out:
        raise ConfigError("model list is empty")
    return out


def _float_list(v):
    try:
        return [float(x) for x in v.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got '{v}'") from None


def _int_list(v):
    try:
        return [int(x) for x in v.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got '{v}'") from None


def _str(v):
    return v


SCHEMA = {
    "data.path": (_str, None),
    "data.return_column": (_str, ""),
    "data.scale": (_float(0, open_lo=True), 1.0),
    "models": (_families, [Family.GARCH]),
    "window": (_int(300), 1500),
    "refit_every": (_int(1), 21),
    "k_cap": (_int(1, 100000), 200),
    "seed": (_int(0), 0),
    "out": (_str, "gatedvol_out"),
    "fit.n_starts": (_int(1, 100), 5),
    "fit.maxiter": (_int(1), 1000),
    "fit.jitter": (_float(0), 0.5),
    "whittle.enabled": (_bool, False),
    "whittle.window": (_int(256), 512),
    "whittle.band_fraction": (_float(0, 0.5, open_lo=True), 0.1),
    "whittle.step": (_int(1), 21),
    "penalty.lambda": (_float(0), None),
    "backtest.var_method": (_choice("gaussian", "historical"), "gaussian"),
    "simulate.family": (_families, [Family.GARCH]),
    "simulate.T": (_int(2), 3000),
    "simulate.feature_phi": (_float(-0.999, 0.999), 0.9),
    "features.zscore_window": (_int(20), 252),
    "features.winsorize": (_bool, True),
    "diagnose.x_var": (_str, ""),
    "diagnose.y_var": (_str, ""),
    "diagnose.z_var": (_str, "h"),
    "diagnose.bins": (_int(1, 1000), 20),
    "diagnose.window": (_int(20), 250),
    "decompose.K": (_int(1), 2000),
}

MODEL_KEYS = {
    "K": _int(1, 100000),
    "burn_in": _int(0),
    "p_features": _int_list,
    "d_features": _int_list,
    "clock_features": _int_list,
}


@dataclass
class ModelConfig:
    family: Family
    K: Optional[int] = None
    burn_in: Optional[int] = None
    features: dict = field(default_factory=dict)
    starts: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    def spec(self, T: int, k_cap: int) -> ModelSpec:
        K = self.K
        if self.family in (Family.GFIGARCH, Family.RSM_GF, Family.GF_GC, Family.TGVOL) and K is None:
            K = select_truncation(T, cap=k_cap).K
        if self.family not in (Family.GFIGARCH, Family.RSM_GF, Family.GF_GC, Family.TGVOL):
            K = None
        return ModelSpec(self.family, K=K, burn_in=self.burn_in, **self.features)


@dataclass
class RunConfig:
    """Resolved run configuration.

    ``values`` holds every schema key (defaults filled in); ``models``
    carries per-family settings; ``base_dir`` anchors relative paths.
    """

    values: dict
    models: dict
    simulate_params: dict
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def model_list(self) -> list:
        return list(self.values["models"])

    def model(self, fam: Family) -> ModelConfig:
        return self.models.get(fam) or ModelConfig(fam)

    def path(self, key) -> Optional[Path]:
        v = self.values[key]
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def canonical(self) -> str:
        """Stable text rendering; the config hash is taken over this."""
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k}={v}")
        for fam in sorted(self.models, key=str):
            m = self.models[fam]
            lines.append(f"model.{fam}.K={m.K}")
            lines.append(f"model.{fam}.burn_in={m.burn_in}")
            for k in sorted(m.features):
                lines.append(f"model.{fam}.{k}={m.features[k]}")
            for k in sorted(m.starts):
                lines.append(f"model.{fam}.{k}_start={m.starts[k]}")
            for k in sorted(m.bounds):
                lines.append(f"model.{fam}.{k}_bounds={m.bounds[k]}")
        for k in sorted(self.simulate_params):
            lines.append(f"simulate.{k}={self.simulate_params[k]}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(vals, self.models, self.simulate_params, self.base_dir)


def _param_value(name, raw):
    vals = _float_list(raw)
    if name in VECTOR_PARAMS:
        return vals
    if len(vals) != 1:
        raise ConfigError(f"'{name}' takes a single number")
    return vals[0]


def parse_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    """Parse ``key = value`` configuration text.

    Raises
    ------
    ConfigError
        Unknown keys, malformed lines, duplicates or out-of-range values
        (messages carry the line number).
    """
    values = {k: d for k, (_, d) in SCHEMA.items()}
    models: dict = {}
    sim: dict = {}
    seen = set()
    for ln, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {ln}: expected key = value")
        key, val = (x.strip() for x in s.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {ln}: duplicate key '{key}'")
        seen.add(key)
        try:
            if key in SCHEMA:
                values[key] = SCHEMA[key][0](val)
            elif key.startswith("model."):
                parts = key.split(".")
                if len(parts) != 3:
                    raise ConfigError(f"unknown key '{key}'")
                fam = _families(parts[1])[0]
                m = models.setdefault(fam, ModelConfig(fam))
                sub = parts[2]
                if sub in ("K", "burn_in"):
                    setattr(m, sub, MODEL_KEYS[sub](val))
                elif sub in ("p_features", "d_features", "clock_features"):
                    m.features[sub] = tuple(MODEL_KEYS[sub](val))
                elif sub.endswith("_start") and sub[:-6] in PARAM_NAMES:
                    m.starts[sub[:-6]] = _param_value(sub[:-6], val)
                elif sub.endswith("_lower") and sub[:-6] in PARAM_NAMES:
                    lo, hi = m.bounds.get(sub[:-6], (None, None))
                    m.bounds[sub[:-6]] = (_float()(val), hi)
                elif sub.endswith("_upper") and sub[:-6] in PARAM_NAMES:
                    lo, hi = m.bounds.get(sub[:-6], (None, None))
                    m.bounds[sub[:-6]] = (lo, _float()(val))
                else:
                    raise ConfigError(f"unknown key '{key}'")
            elif key.startswith("simulate.") and key[9:] in PARAM_NAMES:
                sim[key[9:]] = _param_value(key[9:], val)
            else:
                raise ConfigError(f"unknown key '{key}'")
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("line ") else f"line {ln}: {msg}") from None
    return RunConfig(values, models, sim, Path(base_dir) if base_dir is not None else Path("."))


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), p.resolve().parent)


def bundled_config_path() -> Path:
    """Configuration for the synthetic dataset shipped with the package."""
    return Path(__file__).resolve().parent / "data" / "synthetic.cfg"


# --------------------------------------------------------------------------
# CSV input/output

def _fmt(x) -> str:
    if isinstance(x, (np.datetime64, _dt.date)):
        return str(x)
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    xf = float(x)
    if not math.isfinite(xf):
        return "nan" if math.isnan(xf) else ("inf" if xf > 0 else "-inf")
    if float(xf).is_integer() and isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(xf, ".17g")


def _parse_float(tok, ln, name, allow_missing=False):
    tok = tok.strip()
    if tok == "" or tok.lower() == "nan":
        if allow_missing:
            return float("nan")
        raise ParseError(f"missing {name}", line=ln)
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"cannot parse {name} '{tok}'", line=ln) from None


def load_series(path, return_column: Optional[str] = None, scale: float = 1.0,
                date_column: str = "date", price_column: str = "price") -> ReturnSeries:
    """Read a dated CSV into a :class:`ReturnSeries`.

    The header must contain ``date`` and ``price`` (or ``return_column``)
    and may contain ``volume`` and ``iv``.  Returns are log price
    differences times ``scale``; with ``return_column`` the named column
    is used directly (times ``scale``).  Lines starting with ``#`` carry
    ``key=value`` metadata.

    Raises
    ------
    EmptyFile
        No header or no data rows.
    ParseError
        Malformed rows, nonpositive prices or missing columns; the message
        names the 1-based line.
    NonmonotoneDates
        Duplicate or decreasing dates; the message names the line.
    """
    p = Path(path)
    text = p.read_text()
    meta = {}
    rows = []
    header = None
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        fields_ = next(csv.reader([line]))
        if header is None:
            header = [f.strip().lower() for f in fields_]
            continue
        rows.append((ln, fields_))
    if header is None or not rows:
        raise EmptyFile(f"{p}: no data rows")
    col = {name: i for i, name in enumerate(header)}
    value_col = (return_column or price_column).lower()
    for need in (date_column, value_col):
        if need not in col:
            raise ParseError(f"missing column '{need}' in header", line=1)
    dates, vals, vols, ivs, lines = [], [], [], [], []
    for ln, f in rows:
        if len(f) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(f)}", line=ln)
        try:
            d = np.datetime64(f[col[date_column]].strip(), "D")
        except ValueError:
            raise ParseError(f"cannot parse date '{f[col[date_column]]}'", line=ln) from None
        if np.isnat(d):
            raise ParseError("missing date", line=ln)
        v = _parse_float(f[col[value_col]], ln, value_col)
        if return_column is None and not v > 0:
            raise ParseError(f"nonpositive price {v!r}", line=ln)
        dates.append(d)
        vals.append(v)
        lines.append(ln)
        vols.append(_parse_float(f[col["volume"]], ln, "volume", True) if "volume" in col else np.nan)
        ivs.append(_parse_float(f[col["iv"]], ln, "iv", True) if "iv" in col else np.nan)
    dates = np.array(dates, dtype="datetime64[D]")
    bad = np.nonzero(np.diff(dates) <= np.timedelta64(0, "D"))[0]
    if bad.size:
        i = bad[0] + 1
        raise NonmonotoneDates(f"line {lines[i]}: date {dates[i]} does not follow {dates[i - 1]}")
    vals = np.array(vals)
    if return_column is None:
        if vals.size < 2:
            raise EmptyFile(f"{p}: need at least two prices")
        r = np.diff(np.log(vals)) * scale
        keep = slice(1, None)
    else:
        r = vals * scale
        keep = slice(None)
    vol = np.array(vols)[keep] if "volume" in col else None
    iv = np.array(ivs)[keep] if "iv" in col else None
    meta["source"] = str(p)
    return ReturnSeries(dates[keep], r, vol, iv, percent=scale > 1, meta=meta)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence[Any]], meta: Optional[dict] = None):
    """CSV with optional ``# key=value`` metadata lines and 17-digit floats."""
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_series(path, s: ReturnSeries, scale: float = 1.0, start_price: float = 100.0,
                 meta: Optional[dict] = None):
    """Write a series as ``date,price[,volume]`` with prices rebuilt from
    ``returns / scale``; a base row one day before the first return holds
    ``start_price``."""
    logp = math.log(start_price) + np.concatenate([[0.0], np.cumsum(s.returns / scale)])
    price = np.exp(logp)
    dates = np.concatenate([[s.dates[0] - np.timedelta64(1, "D")], s.dates])
    cols = ["date", "price"]
    data = [dates, price]
    if s.volume is not None:
        cols.append("volume")
        data.append(np.concatenate([[np.nan], s.volume]))
    write_table(path, cols, zip(*data), meta)


# --------------------------------------------------------------------------
# export

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        xf = float(x)
        return xf if math.isfinite(xf) else None
    if isinstance(x, (np.datetime64, _dt.date)):
        return str(x)
    if isinstance(x, Family):
        return str(x)
    return x


def _report_payload(report) -> dict:
    if isinstance(report, dict):
        return report
    if isinstance(report, FitResult):
        return fit_payload(report)
    if isinstance(report, (BacktestReport, DiagnosticsReport)):
        return report.to_dict()
    if isinstance(report, SurfaceGrid):
        return {"x_var": report.x_var, "y_var": report.y_var, "z_var": report.z_var,
                "empty_fraction": report.empty_fraction, "columns": list(report.COLUMNS),
                "rows": report.table}
    if isinstance(report, ForecastRecord):
        return {"columns": list(ForecastRecord.COLUMNS), "rows": list(report.rows())}
    raise TypeError(f"cannot export {type(report).__name__}")


def _table_of(report):
    """Column names and rows for table-like payloads."""
    if isinstance(report, ForecastRecord):
        return list(ForecastRecord.COLUMNS), list(report.rows())
    if isinstance(report, SurfaceGrid):
        return list(SurfaceGrid.COLUMNS), report.table.tolist()
    if isinstance(report, BacktestReport):
        names = list(report.models)
        keys = sorted({k for m in report.models.values() for k in m})
        return ["model"] + keys, [[n] + [report.models[n].get(k) for k in keys] for n in names]
    if isinstance(report, FitResult):
        se = report.se if report.se is not None else [None] * report.spec.n_params
        return ["param", "value", "se"], [[n, v, s] for n, v, s in
                                           zip(report.param_names, report.params.to_array(report.spec), se)]
    if isinstance(report, dict) and "columns" in report and "rows" in report:
        return list(report["columns"]), list(report["rows"])
    if isinstance(report, dict):
        return ["key", "value"], [[k, v] for k, v in report.items()]
    raise TypeError(f"{type(report).__name__} has no tabular form")


def render_text(columns, rows) -> str:
    """Aligned-column text table; every column is as wide as its longest cell."""
    cells = [[str(c) for c in columns]] + [[_fmt(x) if not isinstance(x, (dict, list)) else json.dumps(_jsonable(x))
                                            for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def export_report(report, fmt: str, path) -> Path:
    """Write ``report`` as ``json``, ``text`` (aligned columns) or ``csv``.

    Raises
    ------
    OSError
        On write failures.
    """
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(_jsonable(_report_payload(report)), indent=2) + "\n")
    elif fmt == "text":
        cols, rows = _table_of(report)
        path.write_text(render_text(cols, rows))
    elif fmt == "csv":
        cols, rows = _table_of(report)
        write_table(path, cols, rows)
    else:
        raise ValueError("fmt must be 'json', 'text' or 'csv'")
    return path


def fit_payload(res: FitResult) -> dict:
    out = res.summary()
    out["params_unconstrained"] = res.params_unconstrained
    out["cov_sandwich"] = res.cov_sandwich
    out["convergence"] = {
        "converged": res.convergence.converged,
        "message": res.convergence.message,
        "iterations": res.convergence.iterations,
        "n_starts": res.convergence.n_starts,
    }
    if res.sandwich is not None:
        out["information_condition"] = res.sandwich.condition
        out["pinv_used"] = res.sandwich.pinv_used
    out["penalized"] = res.penalized
    out["h0"] = res.h0
    return out


# --------------------------------------------------------------------------
# dispatch

_DATA_ERRORS = (ParseError, NonmonotoneDates, EmptyFile, InsufficientHistory, WindowTooShort,
                SampleTooShort, EmptySample, FileNotFoundError, IsADirectoryError)
_NUMERIC_ERRORS = (NonpositiveVariance, NoConvergence, DegenerateHessian, UnstableRegion, FloatingPointError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    if isinstance(exc, _NUMERIC_ERRORS):
        return EXIT_NUMERIC
    if isinstance(exc, (GatedVolError, ValueError, OSError)):
        return EXIT_DATA
    return EXIT_NUMERIC


def _versions() -> dict:
    import numba
    import scipy
    return {"gatedvol": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    def __init__(self, cfg: RunConfig, command: str, out: Path):
        self.cfg = cfg
        self.command = command
        self.out = out
        self.artifacts: list[Path] = []
        self.errors: list[str] = []
        self.warnings: list[str] = []
        self.code = EXIT_OK

    def fail(self, where: str, exc: BaseException):
        self.errors.append(f"{where}: {type(exc).__name__}: {exc}")
        self.code = max(self.code, exit_code_for(exc))

    def json(self, name, payload):
        payload = dict(payload)
        payload["config_hash"] = self.cfg.config_hash
        p = self.out / name
        p.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
        self.artifacts.append(p)

    def table(self, name, columns, rows, meta=None):
        p = self.out / name
        m = {"config_hash": self.cfg.config_hash}
        m.update(meta or {})
        write_table(p, columns, rows, m)
        self.artifacts.append(p)

    def manifest(self):
        man = {
            "command": self.command,
            "config_hash": self.cfg.config_hash,
            "seed": self.cfg.seed,
            "versions": _versions(),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "artifacts": [{"file": p.name, "sha256": _sha256(p)} for p in self.artifacts],
            "partial": bool(self.errors),
            "errors": self.errors,
            "warnings": self.warnings,
            "exit_code": self.code,
        }
        (self.out / "manifest.json").write_text(json.dumps(man, indent=2) + "\n")
        (self.out / "config.txt").write_text(self.cfg.canonical())


def _load_data(cfg: RunConfig) -> ReturnSeries:
    p = cfg.path("data.path")
    if p is None:
        raise ConfigError("data.path is not set")
    return load_series(p, cfg["data.return_column"] or None, cfg["data.scale"])


def _features(cfg: RunConfig, s: ReturnSeries):
    fc = FeatureConfig(zscore_window=cfg["features.zscore_window"], quantile_window=cfg["features.zscore_window"],
                       winsor_window=cfg["features.zscore_window"], winsorize=cfg["features.winsorize"])
    return build_feature_matrix(s, fc)


def _params_from(spec: ModelSpec, values: dict) -> ParamVector:
    names = {n for n, _ in spec.blocks()}
    extra = set(values) - names
    if extra:
        raise ConfigError(f"{spec.family} has no parameter(s) {sorted(extra)}")
    kw = {}
    for n, size in spec.blocks():
        if n not in values:
            continue
        v = values[n]
        if n in VECTOR_PARAMS:
            v = np.asarray(v, dtype=float)
            if v.size != size:
                raise ConfigError(f"{n} needs {size} values for {spec.family}")
        kw[n] = v
    return ParamVector(**kw)


def _fit(cfg: RunConfig, fam: Family, s: ReturnSeries, fm) -> FitResult:
    mc = cfg.model(fam)
    spec = mc.spec(len(s), cfg["k_cap"])
    start = None
    if mc.starts:
        from .estimation import default_start
        base = default_start(spec, s).as_dict()
        base = {k: v for k, v in base.items() if v is not None}
        base.update(mc.starts)
        start = _params_from(spec, base)
    whittle = None
    if cfg["whittle.enabled"] and spec.has_fractional:
        whittle = local_whittle(s, cfg["whittle.window"], cfg["whittle.band_fraction"], cfg["whittle.step"])
    opts = FitOptions(n_starts=cfg["fit.n_starts"], seed=cfg.seed, jitter=cfg["fit.jitter"],
                      maxiter=cfg["fit.maxiter"], start=start, whittle=whittle,
                      lam_pen=cfg["penalty.lambda"], raise_on_degenerate=False,
                      bounds=mc.bounds or None)
    try:
        return fit_qmle(spec, s, fm if spec.feature_indices else None, opts)
    except ValueError as exc:
        if isinstance(exc, GatedVolError):
            raise
        raise ConfigError(str(exc)) from None


def _cmd_fit(run: _Run, s, fm):
    for fam in run.cfg.model_list:
        try:
            res = _fit(run.cfg, fam, s, fm)
        except Exception as exc:
            run.fail(f"fit {fam}", exc)
            continue
        if res.cov_sandwich is None:
            run.warnings.append(f"fit {fam}: information matrix degenerate, no standard errors")
        if not res.convergence.converged:
            run.warnings.append(f"fit {fam}: {res.convergence.message}")
        run.json(f"fit_{fam}.json", fit_payload(res))


def _cmd_forecast(run: _Run, s, fm):
    for fam in run.cfg.model_list:
        try:
            res = _fit(run.cfg, fam, s, fm)
            z = fm.z if res.spec.feature_indices else None
            r = np.append(s.returns, 0.0)
            zz = None if z is None else np.vstack([z, np.full((1, z.shape[1]), np.nan)])
            vp, _ = filter_variance(res.spec, res.params, r, zz, h0=res.h0)
        except Exception as exc:
            run.fail(f"forecast {fam}", exc)
            continue
        keep = np.r_[vp.mask[:-1], True]
        keep[: res.spec.effective_burn_in] = False
        h = vp.h[keep]
        rr = r[keep].copy()
        rr[-1] = np.nan
        dates = np.append(s.dates, s.dates[-1] + np.timedelta64(1, "D"))[keep]
        v = {lv: var_es_forecast(h, lv) for lv in LEVELS}
        with np.errstate(invalid="ignore"):
            ll = -0.5 * (np.log(h) + rr * rr / h)
        rec = ForecastRecord(dates, h, rr, v[0.01][0], v[0.05][0], v[0.01][1], v[0.05][1], ll)
        run.table(f"forecast_{fam}.csv", ForecastRecord.COLUMNS, rec.rows(), {"model": str(fam)})


def _cmd_backtest(run: _Run, s, fm):
    cfg = run.cfg
    specs = [cfg.model(f).spec(cfg["window"], cfg["k_cap"]) for f in cfg.model_list]
    need_z = any(sp.feature_indices for sp in specs)
    opts = FitOptions(n_starts=cfg["fit.n_starts"], seed=cfg.seed, jitter=cfg["fit.jitter"],
                      maxiter=cfg["fit.maxiter"], compute_cov=False)
    rep = rolling_backtest(specs, s, fm.z if need_z else None, cfg["window"], cfg["refit_every"],
                           var_method=cfg["backtest.var_method"], fit_options=opts)
    for name, errs in rep.errors.items():
        for e in errs:
            run.warnings.append(f"backtest {name}: {e}")
        if not rep.forecasts[name].valid.any():
            run.fail(f"backtest {name}", NoConvergence("no forecasts produced"))
    run.json("backtest.json", rep.to_dict())
    for name, rec in rep.forecasts.items():
        ok = rec.valid
        q = np.full(len(rec), np.nan)
        fz1 = np.full(len(rec), np.nan)
        fz5 = np.full(len(rec), np.nan)
        if ok.any():
            q[ok], _ = qlike_terms(rec.h_hat[ok], rec.r_realized[ok])
            fz1[ok] = fz_terms(rec.var_1[ok], rec.es_1[ok], rec.r_realized[ok], 0.01)
            fz5[ok] = fz_terms(rec.var_5[ok], rec.es_5[ok], rec.r_realized[ok], 0.05)
        se = (rec.r_realized ** 2 - rec.h_hat) ** 2
        run.table(f"losses_{name}.csv", ["date", "h_hat", "r_realized", "qlike", "sq_err", "fz_1", "fz_5", "loglik"],
                  zip(rec.dates, rec.h_hat, rec.r_realized, q, se, fz1, fz5, rec.loglik), {"model": name})


def _cmd_simulate(run: _Run):
    cfg = run.cfg
    fam = cfg["simulate.family"][0]
    mc = cfg.model(fam)
    T = cfg["simulate.T"]
    spec = mc.spec(T, cfg["k_cap"])
    truth = dict(DEFAULT_TRUTHS[fam])
    truth.update(cfg.simulate_params)
    q = max(spec.feature_indices, default=1) + 1
    for n in VECTOR_PARAMS:
        if n in truth and len(truth[n]) < q:
            truth[n] = list(truth[n]) + [0.0] * (q - len(truth[n]))
    params = _params_from(spec, truth)
    sim = simulate_path(spec, params, T, seed=cfg.seed, feature_generator=ar1_features(cfg["simulate.feature_phi"]))
    meta = {"family": str(fam), "seed": cfg.seed, "T": T, "scale": 100}
    for k, v in params.as_dict().items():
        if v is not None:
            meta[f"params.{k}"] = ",".join(_fmt(x) for x in np.atleast_1d(v))
    p = run.out / "simulated.csv"
    m = {"config_hash": cfg.config_hash}
    m.update(meta)
    write_series(p, sim.series, scale=100.0, meta=m)
    run.artifacts.append(p)
    run.table("simulated_paths.csv", ["date", "h"] + [f"z{j}" for j in range(sim.features.n_features)],
              zip(sim.series.dates, sim.variance.h, *sim.features.z.T))


def _local_kernel(spec: ModelSpec, P: ParamVector, K: int):
    fam = spec.family
    if spec.has_fractional:
        return figarch_kernel(0.5 * P.dbar, spec.K), "fractional weights |pi_k(d)| at z = 0"
    if fam is Family.GJR:
        return gjr_kernel(P.alpha, P.leverage, P.beta, K), "sign-averaged GJR weights"
    if fam is Family.GARCH:
        return garch_kernel(P.alpha, P.beta, K), "GARCH weights"
    if fam is Family.RSM:
        return garch_kernel(P.alpha, 0.5 * (P.beta_low + P.beta_high), K), "regime kernel at p = 1/2"
    if fam is Family.GCLOCK:
        return gclock_kernel(P.alpha0, P.kappa, 1.0, K), "clock kernel at dtau = 1"
    bc = math.exp(-P.kappa)
    return garch_kernel(P.alpha0 * (1 - bc), 0.5 * (P.beta_low + P.beta_high), K), "regime-clock kernel at z = 0"


def _cmd_decompose(run: _Run, s, fm):
    cfg = run.cfg
    fam = cfg.model_list[0]
    res = _fit(cfg, fam, s, fm)
    kern, label = _local_kernel(res.spec, res.params, cfg["decompose.K"])
    t = decompose_kernel(kern)
    dw = discrete_weights(t, kern.K)
    nerr = t.normalization_errors()
    run.json("triple.json", {"model": str(fam), "kernel": label, "level_M": t.level_M, "tempo_mu": t.tempo_mu,
                             "u_max": t.u_max, "normalization_errors": list(nerr),
                             "params": res.params.as_dict()})
    run.table("shape.csv", ["v", "g"], zip(t.grid, t.shape_g))
    run.table("weights.csv", ["k", "weight", "reconstructed"],
              zip(np.arange(1, kern.K + 1), kern.weights, dw.weights))


def _default_axes(gp):
    active = [n for n in ("p", "d", "beta_clk") if getattr(gp, n) is not None]
    if len(active) >= 2:
        return active[0], active[-1]
    if len(active) == 1:
        return active[0], "psi"
    return "alpha_t", "psi"


def _cmd_diagnose(run: _Run, s, fm):
    cfg = run.cfg
    fam = cfg.model_list[0]
    res = _fit(cfg, fam, s, fm)
    z = fm.z if res.spec.feature_indices else None
    vp, gp = filter_variance(res.spec, res.params, s, z, h0=res.h0)
    rep = residual_diagnostics(vp, window=cfg["diagnose.window"], gate_path=gp, features=fm)
    run.json("diagnostics.json", {"model": str(fam), **rep.to_dict()})
    dx, dy = _default_axes(gp)
    grid = gate_surface_grid(gp, vp, cfg["diagnose.x_var"] or dx, cfg["diagnose.y_var"] or dy,
                             cfg["diagnose.z_var"], cfg["diagnose.bins"])
    run.table("surface.csv", SurfaceGrid.COLUMNS, grid.table.tolist(),
              {"x_var": grid.x_var, "y_var": grid.y_var, "z_var": grid.z_var,
               "empty_fraction": _fmt(grid.empty_fraction)})


def run_command(cfg: RunConfig, command: str, out_dir=None) -> tuple[int, list]:
    """Execute ``command`` and write its artifacts plus ``manifest.json``.

    Returns ``(exit_code, artifact paths)``.  Hard errors map to exit code
    1 (configuration), 2 (data) or 3 (numerical failure) and are listed in
    the manifest, which marks the run partial.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'")
    out = Path(out_dir) if out_dir is not None else cfg.path("out")
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, command, out)
    try:
        if command == "simulate":
            _cmd_simulate(run)
        else:
            s = _load_data(cfg)
            fm = _features(cfg, s)
            {"fit": _cmd_fit, "forecast": _cmd_forecast, "backtest": _cmd_backtest,
             "decompose": _cmd_decompose, "diagnose": _cmd_diagnose}[command](run, s, fm)
    except Exception as exc:  # reported through the manifest and exit code
        log.debug("command failed", exc_info=True)
        run.fail(command, exc)
    run.manifest()
    return run.code, list(run.artifacts)
