"""Per-iteration log records and their CSV row format.

The CSV contract is versioned: files start with the magic comment line
``# mlsgd-csv v1`` followed by the fixed header row below.  Per-level
sequences are packed into single columns with ';' separators so the header
stays fixed across level counts.  Floats are serialized with ``repr`` for
byte-stable round-tripping; NaN and infinities appear as ``nan``/``inf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SCHEMA_MAGIC = "# mlsgd-csv v1"

CSV_HEADER = (
    "k",
    "J_hat",
    "grad_norm",
    "t_k",
    "eps_k",
    "err_sam",
    "err_num",
    "alpha_hat",
    "cumulative_cost",
    "remaining_T",
    "remaining_Mem",
    "levels_M",
    "levels_norm_p",
    "levels_s2",
    "levels_cost",
    "stop_reason",
)


@dataclass
class IterationRecord:
    """One optimization step: scalars plus packed per-level statistics."""

    k: int
    J_hat: float
    grad_norm: float
    t_k: float
    eps_k: float
    err_sam: float
    err_num: float
    alpha_hat: float
    cumulative_cost: float
    remaining_T: float
    remaining_Mem: float
    level_M: tuple[int, ...] = field(default_factory=tuple)
    level_norm_p: tuple[float, ...] = field(default_factory=tuple)
    level_s2: tuple[float, ...] = field(default_factory=tuple)
    level_cost: tuple[float, ...] = field(default_factory=tuple)
    stop_reason: str = ""


def _fmt(x: float) -> str:
    return repr(float(x))


def format_row(rec: IterationRecord) -> str:
    """Serialize one record to a CSV data line (no trailing newline)."""
    cols = [
        str(rec.k),
        _fmt(rec.J_hat),
        _fmt(rec.grad_norm),
        _fmt(rec.t_k),
        _fmt(rec.eps_k),
        _fmt(rec.err_sam),
        _fmt(rec.err_num),
        _fmt(rec.alpha_hat),
        _fmt(rec.cumulative_cost),
        _fmt(rec.remaining_T),
        _fmt(rec.remaining_Mem),
        ";".join(str(m) for m in rec.level_M),
        ";".join(_fmt(x) for x in rec.level_norm_p),
        ";".join(_fmt(x) for x in rec.level_s2),
        ";".join(_fmt(x) for x in rec.level_cost),
        rec.stop_reason,
    ]
    return ",".join(cols)


def parse_row(line: str) -> IterationRecord:
    """Parse one CSV data line back into a record."""
    cols = line.rstrip("\n").split(",")
    if len(cols) != len(CSV_HEADER):
        raise ValueError(
            f"data row has {len(cols)} columns, expected {len(CSV_HEADER)}"
        )

    def floats(packed: str) -> tuple[float, ...]:
        return tuple(float(t) for t in packed.split(";")) if packed else ()

    return IterationRecord(
        k=int(cols[0]),
        J_hat=float(cols[1]),
        grad_norm=float(cols[2]),
        t_k=float(cols[3]),
        eps_k=float(cols[4]),
        err_sam=float(cols[5]),
        err_num=float(cols[6]),
        alpha_hat=float(cols[7]),
        cumulative_cost=float(cols[8]),
        remaining_T=float(cols[9]),
        remaining_Mem=float(cols[10]),
        level_M=tuple(int(t) for t in cols[11].split(";")) if cols[11] else (),
        level_norm_p=floats(cols[12]),
        level_s2=floats(cols[13]),
        level_cost=floats(cols[14]),
        stop_reason=cols[15],
    )
