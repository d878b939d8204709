"""Experiment orchestration: configuration, CSV persistence, presets.

Configs are flat ``key = value`` text files ('#' starts a comment).  Every
default matches the reference experiment settings.  Runs stream iteration
records into a versioned CSV log (one row per optimization step, '#'
footer lines with summary values and rate fits) so a truncated run still
leaves a parseable file.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, TextIO

from .descent import (
    BudgetLedger,
    GrowthRates,
    StepRule,
    bmlsgd,
    bsgd,
    mlsgd,
)
from .mesh import AdmissibleBox, zeros
from .mlmc import MultilevelBatch
from .problem import COST_MODES, Hyperparams, ProblemSetup
from .randfield import MaternParams
from .rates import estimate_delta, fit_loglinear
from .records import CSV_HEADER, SCHEMA_MAGIC, IterationRecord, format_row, parse_row

ALGORITHMS = ("bsgd", "mlsgd", "bmlsgd")

DEFAULT_BATCH = (64, 16, 4)

BURN_IN_FRACTION = 0.05


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending line number."""

    def __init__(self, message: str, line: int = 0):
        prefix = f"line {line}: " if line > 0 else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one optimizer run."""

    algorithm: str = "bsgd"
    e0: int = 4
    level: int = 0
    M: Optional[tuple[int, ...]] = None
    K: int = 10
    step_kind: str = "constant"
    step_t0: Optional[float] = None
    step_p: float = 1.0
    lam: float = 1e-8
    eta: float = 0.9
    theta: float = 0.5
    box_lower: float = -1000.0
    box_upper: float = 1000.0
    sigma2: float = 1.5
    nu: float = 1.0
    lambda_kappa: float = 0.1
    budget_T0: float = 1e9
    budget_Mem0: float = 1e9
    cost_mode: str = "work_units"
    growth_beta: float = 2.0
    growth_gamma: float = 2.0
    root_seed: int = 0
    workers: int = 1
    out: str = "run.csv"
    deterministic_y: bool = False
    solver_tol: float = 1e-8

    def batch_counts(self) -> tuple[int, ...]:
        if self.M is not None:
            return self.M
        return (16,) if self.algorithm == "bsgd" else DEFAULT_BATCH

    def resolved_t0(self) -> float:
        if self.step_t0 is not None:
            return self.step_t0
        return 200.0 if self.algorithm == "bmlsgd" else 100.0


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok.strip()) for tok in raw.split(",") if tok.strip())


_KEY_PARSERS = {
    "algorithm": str,
    "e0": int,
    "level": int,
    "M": _parse_int_list,
    "K": int,
    "step_kind": str,
    "step_t0": float,
    "step_p": float,
    "lam": float,
    "eta": float,
    "theta": float,
    "box_lower": float,
    "box_upper": float,
    "sigma2": float,
    "nu": float,
    "lambda_kappa": float,
    "budget_T0": float,
    "budget_Mem0": float,
    "cost_mode": str,
    "growth_beta": float,
    "growth_gamma": float,
    "root_seed": int,
    "workers": int,
    "out": str,
    "deterministic_y": _parse_bool,
    "solver_tol": float,
}


def _validate(config: RunConfig, lines: dict[str, int]) -> RunConfig:
    def fail(key: str, message: str):
        raise ConfigError(message, lines.get(key, 0))

    if config.algorithm not in ALGORITHMS:
        fail("algorithm", f"algorithm must be one of {ALGORITHMS}, got {config.algorithm!r}")
    if config.step_kind not in StepRule.KINDS:
        fail("step_kind", f"step_kind must be one of {StepRule.KINDS}, got {config.step_kind!r}")
    if config.cost_mode not in COST_MODES:
        fail("cost_mode", f"cost_mode must be one of {COST_MODES}, got {config.cost_mode!r}")
    if config.e0 < 2:
        fail("e0", f"e0 must be >= 2, got {config.e0}")
    if config.level < 0:
        fail("level", f"level must be >= 0, got {config.level}")
    if config.K < 0:
        fail("K", f"K must be >= 0, got {config.K}")
    if not 0.0 < config.eta <= 1.0:
        fail("eta", f"eta must lie in (0, 1], got {config.eta}")
    if not 0.0 < config.theta < 1.0:
        fail("theta", f"theta must lie in (0, 1), got {config.theta}")
    if config.lam < 0.0:
        fail("lam", f"lam must be >= 0, got {config.lam}")
    if not config.box_lower < config.box_upper:
        fail("box_lower", "box_lower must be strictly below box_upper")
    if config.step_t0 is not None and not config.step_t0 > 0.0:
        fail("step_t0", f"step_t0 must be > 0, got {config.step_t0}")
    if config.step_kind == "decay" and not 0.5 < config.step_p <= 1.0:
        fail("step_p", f"step_p must lie in (1/2, 1] for decay steps, got {config.step_p}")
    if not config.budget_T0 > 0.0:
        fail("budget_T0", f"budget_T0 must be > 0, got {config.budget_T0}")
    if not config.budget_Mem0 > 0.0:
        fail("budget_Mem0", f"budget_Mem0 must be > 0, got {config.budget_Mem0}")
    if config.workers < 1:
        fail("workers", f"workers must be >= 1, got {config.workers}")
    if not config.solver_tol > 0.0:
        fail("solver_tol", f"solver_tol must be > 0, got {config.solver_tol}")
    if not config.sigma2 > 0.0:
        fail("sigma2", f"sigma2 must be > 0, got {config.sigma2}")
    if not config.nu > 0.0:
        fail("nu", f"nu must be > 0, got {config.nu}")
    if not config.lambda_kappa > 0.0:
        fail("lambda_kappa", f"lambda_kappa must be > 0, got {config.lambda_kappa}")

    counts = config.batch_counts()
    if config.algorithm == "bsgd":
        if len(counts) != 1:
            fail("M", f"bsgd takes a single batch size, got {len(counts)} entries")
        if counts[0] < 1:
            fail("M", f"batch size must be >= 1, got {counts[0]}")
    else:
        try:
            MultilevelBatch(counts)
        except ValueError as exc:
            fail("M", str(exc))
        if config.algorithm == "bmlsgd" and len(counts) < 3:
            fail("M", f"bmlsgd needs an initial batch with >= 3 levels, got {len(counts)}")
    return config


def parse_config(text: str) -> RunConfig:
    """Parse and validate flat ``key = value`` configuration text."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _KEY_PARSERS[key](raw_value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        lines[key] = lineno
    config = RunConfig(**values)
    return _validate(config, lines)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


class CsvLogWriter:
    """Streams iteration records with a one-row lag.

    Rows are flushed as complete lines as soon as the following record
    arrives, so a crashed run leaves a valid file; holding back the newest
    row lets the stopping reason (only known once the loop exits) land on
    the final data row.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fh: Optional[TextIO] = self.path.open("w", encoding="utf-8", newline="\n")
        self._fh.write(SCHEMA_MAGIC + "\n")
        self._fh.write(",".join(CSV_HEADER) + "\n")
        self._fh.flush()
        self._pending: Optional[IterationRecord] = None

    def add(self, rec: IterationRecord) -> None:
        if self._pending is not None:
            self._fh.write(format_row(self._pending) + "\n")
            self._fh.flush()
        self._pending = rec

    def close(self, footer: Optional[dict] = None) -> None:
        if self._fh is None:
            return
        if self._pending is not None:
            self._fh.write(format_row(self._pending) + "\n")
            self._pending = None
        for key, value in (footer or {}).items():
            text = repr(float(value)) if isinstance(value, float) else str(value)
            self._fh.write(f"# {key} = {text}\n")
        self._fh.flush()
        self._fh.close()
        self._fh = None


def parse_csv_log(path) -> tuple[list[IterationRecord], dict[str, str]]:
    """Read a run log back: (records, footer key/value strings)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != SCHEMA_MAGIC:
        raise ValueError(f"{path}: missing schema line {SCHEMA_MAGIC!r}")
    if len(lines) < 2 or lines[1] != ",".join(CSV_HEADER):
        raise ValueError(f"{path}: header row does not match the v1 schema")
    records: list[IterationRecord] = []
    footer: dict[str, str] = {}
    for line in lines[2:]:
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = (part.strip() for part in body.split("=", 1))
                footer[key] = value
            continue
        records.append(parse_row(line))
    return records, footer


def _fit_or_nan(xs, ys, sign):
    try:
        return fit_loglinear(xs, ys, sign).exponent
    except ValueError:
        return float("nan")


def summary_fits(records: Sequence[IterationRecord], burn_in_cost: float) -> dict:
    """Rate fits for the run footer, NaN where the data cannot support one."""
    out = {
        "alpha_hat": float("nan"),
        "beta_hat": float("nan"),
        "gamma_ct_hat": float("nan"),
        "delta_hat": float("nan"),
        "delta_intercept": float("nan"),
    }
    if records:
        last = records[-1]
        ells = list(range(len(last.level_M)))
        pairs = [ell for ell in ells if ell >= 1]
        hs = [2.0 ** -ell for ell in ells]
        if len(pairs) >= 2:
            pair_hs = [hs[ell] for ell in pairs]
            norms = [last.level_norm_p[ell] for ell in pairs]
            if all(n > 0 for n in norms):
                out["alpha_hat"] = _fit_or_nan(pair_hs, norms, +1)
            variances = []
            for ell in pairs:
                M = last.level_M[ell]
                variances.append(last.level_s2[ell] / (M - 1) if M >= 2 else 0.0)
            if all(v > 0 for v in variances):
                out["beta_hat"] = _fit_or_nan(pair_hs, variances, +1)
        if len(ells) >= 2 and all(c > 0 for c in last.level_cost):
            out["gamma_ct_hat"] = _fit_or_nan(hs, list(last.level_cost), -1)
    try:
        fit = estimate_delta(records, burn_in_cost)
        out["delta_hat"] = fit.exponent
        out["delta_intercept"] = fit.intercept
    except ValueError:
        pass
    return out


def run(config: RunConfig, out_path: Optional[str] = None) -> Path:
    """Execute one configured run; returns the path of the CSV log."""
    hp = Hyperparams(
        lam=config.lam,
        eta=config.eta,
        theta=config.theta,
        box=AdmissibleBox(config.box_lower, config.box_upper),
    )
    matern = MaternParams(config.sigma2, config.nu, config.lambda_kappa)
    setup = ProblemSetup(
        e0=config.e0,
        hp=hp,
        matern=matern,
        grf_mode="zero" if config.deterministic_y else "independent",
        workers=config.workers,
        cost_mode=config.cost_mode,
        solver_tol=config.solver_tol,
    )
    counts = config.batch_counts()
    rule = StepRule(config.step_kind, config.resolved_t0(), config.step_p)
    out = Path(out_path if out_path is not None else config.out)
    writer = CsvLogWriter(out)
    try:
        if config.algorithm == "bsgd":
            z0 = zeros(setup.level(config.level))
            _, records = bsgd(
                setup, z0, rule, counts[0], config.level, config.K,
                config.root_seed, on_record=writer.add,
            )
        elif config.algorithm == "mlsgd":
            batch = MultilevelBatch(counts)
            z0 = zeros(setup.level(batch.finest))
            _, records = mlsgd(
                setup, z0, rule, batch, config.K,
                config.root_seed, on_record=writer.add,
            )
        else:
            batch0 = MultilevelBatch(counts)
            z0 = zeros(setup.level(batch0.finest))
            ledger = BudgetLedger(config.budget_T0, config.budget_Mem0)
            growth = GrowthRates(config.growth_beta, config.growth_gamma)
            _, records = bmlsgd(
                setup, z0, batch0, rule.t0, ledger, growth,
                config.root_seed, on_record=writer.add,
            )
        total_cost = records[-1].cumulative_cost if records else 0.0
        burn_in = BURN_IN_FRACTION * (
            config.budget_T0 if config.algorithm == "bmlsgd" else total_cost
        )
        footer = {
            "total_cost": float(total_cost),
            "final_grad_norm": float(records[-1].grad_norm) if records else float("nan"),
            "stop_reason": records[-1].stop_reason if records else "",
            **summary_fits(records, burn_in),
            "cost_mode": config.cost_mode,
            "root_seed": config.root_seed,
            "workers": config.workers,
            "algorithm": config.algorithm,
        }
    except BaseException:
        writer.close()
        raise
    writer.close(footer)
    return out


# ---------------------------------------------------------------------------
# Presets: canned desk-scale experiment sequences.


def _preset_fig2(seed: int, workers: int) -> list[tuple[str, RunConfig]]:
    base = RunConfig(
        algorithm="bsgd", e0=4, level=0, K=30,
        step_kind="constant", step_t0=100.0,
        root_seed=seed, workers=workers,
    )
    return [
        ("bsgd-M16", replace(base, M=(16,))),
        ("bsgd-M256", replace(base, M=(256,))),
    ]


def _preset_fig5(seed: int, workers: int) -> list[tuple[str, RunConfig]]:
    K = 150
    return [
        ("bsgd-decayed", RunConfig(
            algorithm="bsgd", e0=6, level=0, M=(16,), K=K,
            step_kind="constant", step_t0=250.0 * K ** -0.5,
            root_seed=seed, workers=workers,
        )),
        # budget_T0 is overwritten with the measured bsgd total at run time
        ("bmlsgd-adaptive", RunConfig(
            algorithm="bmlsgd", e0=4, M=DEFAULT_BATCH,
            step_kind="adaptive", step_t0=200.0,
            root_seed=seed, workers=workers,
        )),
    ]


def _preset_rates(seed: int, workers: int) -> list[tuple[str, RunConfig]]:
    return [
        ("rates-levels", RunConfig(
            algorithm="mlsgd", e0=4, M=(64, 64, 64, 64), K=1,
            step_kind="constant", step_t0=100.0,
            root_seed=seed, workers=workers,
        )),
    ]


PRESETS = {
    "fig2-desk": _preset_fig2,
    "fig5-desk": _preset_fig5,
    "rates-desk": _preset_rates,
}


def run_preset(name: str, out_dir, seed: int = 0, workers: int = 1) -> list[Path]:
    """Run a named preset; returns the CSV paths it produced."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; one of {sorted(PRESETS)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = PRESETS[name](seed, workers)
    paths: list[Path] = []
    measured_total: Optional[float] = None
    for label, config in configs:
        if name == "fig5-desk" and config.algorithm == "bmlsgd" and measured_total:
            config = replace(config, budget_T0=measured_total)
        path = run(config, out_path=out_dir / f"{label}.csv")
        paths.append(path)
        _, footer = parse_csv_log(path)
        if "total_cost" in footer:
            measured_total = float(footer["total_cost"])
    return paths
