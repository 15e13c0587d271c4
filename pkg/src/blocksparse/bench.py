"""Seeded phase-transition experiments over (alpha, beta) grids.

For every alpha in the grid one Gaussian matrix is drawn and reused for all
beta cells and trials of that column. Each trial plants a k-block-sparse
signal, runs the l2/l1 solver, refits on the k largest blocks and scores the
refit by relative error. Randomness is keyed by (seed, alpha index) for the
matrix and (seed, alpha index, beta index, trial) for signals, so columns
can run in any order or in parallel and still give identical results.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    BlockPartition,
    BlockSignal,
    RandomSeed,
    as_seed,
    sample_block_sparse_signal,
    sample_gaussian_matrix,
)
from .solver import (
    AffineProjector,
    DegenerateSupportError,
    SolverOptions,
    refit_top_k,
    solve_l21_batch,
)

CSV_HEADER = ["d", "n", "m", "k", "alpha", "beta", "trials", "successes", "success_rate", "seed"]

# matrix and signal streams hang off these child keys of the root seed
_MATRIX_STREAM = 0
_SIGNAL_STREAM = 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def default_beta_grid(step: float = 0.025, top: float = 0.5) -> list[float]:
    count = round_half_up(top / step)
    return [round((i + 1) * step, 10) for i in range(count)]


@dataclass(frozen=True)
class ExperimentConfig:
    d: int
    N: int
    alpha_grid: tuple[float, ...]
    beta_grid: tuple[float, ...]
    trials_per_cell: int = 100
    success_rel_tol: float = 1e-4
    seed: RandomSeed = RandomSeed(0)
    solver: SolverOptions = SolverOptions()

    def __post_init__(self):
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        object.__setattr__(self, "seed", as_seed(self.seed))
        if self.d < 1 or self.N < 1 or self.N % self.d:
            raise ValueError(f"N={self.N} must be a positive multiple of d={self.d}")
        if any(not 0 < a < 1 for a in self.alpha_grid):
            raise ValueError("alpha values must lie in (0, 1)")
        if any(not 0 < b <= 0.5 for b in self.beta_grid):
            raise ValueError("beta values must lie in (0, 0.5]")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be positive")

    @property
    def n(self) -> int:
        return self.N // self.d

    def m_for(self, alpha: float) -> int:
        return round_half_up(alpha * self.n)

    def k_for(self, beta: float) -> int:
        return round_half_up(beta * self.n)

    def cell_feasible(self, alpha: float, beta: float) -> bool:
        m, k = self.m_for(alpha), self.k_for(beta)
        return 1 <= k <= self.n and k <= m and m < self.n

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        s = data.get("solver", {})
        solver = SolverOptions(
            max_iterations=int(s.get("max_iter", SolverOptions.max_iterations)),
            primal_tolerance=float(s.get("primal_tol", SolverOptions.primal_tolerance)),
            fixed_point_tolerance=float(s.get("fixed_point_tol", SolverOptions.fixed_point_tolerance)),
            penalty=float(s.get("penalty", SolverOptions.penalty)),
        )
        return cls(
            d=int(data["d"]),
            N=int(data["N"]),
            alpha_grid=tuple(data["alpha_grid"]),
            beta_grid=tuple(data["beta_grid"]),
            trials_per_cell=int(data.get("trials", 100)),
            success_rel_tol=float(data.get("success_rel_tol", 1e-4)),
            seed=RandomSeed(int(data.get("seed", 0))),
            solver=solver,
        )

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "N": self.N,
            "alpha_grid": list(self.alpha_grid),
            "beta_grid": list(self.beta_grid),
            "trials": self.trials_per_cell,
            "success_rel_tol": self.success_rel_tol,
            "seed": self.seed.seed,
            "solver": {
                "max_iter": self.solver.max_iterations,
                "primal_tol": self.solver.primal_tolerance,
                "fixed_point_tol": self.solver.fixed_point_tolerance,
                "penalty": self.solver.penalty,
            },
        }


@dataclass(frozen=True)
class TrialRecord:
    cell: tuple[float, float]
    trial_index: int
    success: bool
    relative_error: float
    iterations: int


@dataclass(frozen=True)
class Cell:
    alpha: float
    beta: float
    m: int
    k: int
    trials: int
    successes: int

    @property
    def skipped(self) -> bool:
        return self.trials == 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else math.nan

    @property
    def sparsity_ratio(self) -> float:
        """``k / m``, the unit thresholds are reported in."""
        return self.k / self.m if self.m else math.nan


@dataclass
class PhaseDiagram:
    config: ExperimentConfig
    cells: list[Cell]
    records: list[TrialRecord] = field(default_factory=list, repr=False)

    def column(self, alpha: float) -> list[Cell]:
        return [c for c in self.cells if c.alpha == alpha]


def _run_column(config: ExperimentConfig, ai: int):
    alpha = config.alpha_grid[ai]
    part = BlockPartition(config.n, config.d)
    m = config.m_for(alpha)
    cells, records = [], []
    feasible = [bi for bi, b in enumerate(config.beta_grid) if config.cell_feasible(alpha, b)]
    if not feasible:
        for b in config.beta_grid:
            cells.append(Cell(alpha, b, m, config.k_for(b), 0, 0))
        return cells, records

    A = sample_gaussian_matrix(m * config.d, config.N, config.seed.child(_MATRIX_STREAM, ai))
    proj = AffineProjector(A)
    truths, ks, owners = [], [], []
    for bi in feasible:
        k = config.k_for(config.beta_grid[bi])
        for t in range(config.trials_per_cell):
            x = sample_block_sparse_signal(part, k, config.seed.child(_SIGNAL_STREAM, ai, bi, t))
            truths.append(x.values)
            ks.append(k)
            owners.append((bi, t))
    X0 = np.array(truths).T
    Y = A @ X0
    X, iters, _, _ = solve_l21_batch(A, Y, part, config.solver, projector=proj)

    succ_by_cell: dict[int, int] = {}
    for j, (bi, t) in enumerate(owners):
        try:
            refit = refit_top_k(A, Y[:, j], BlockSignal(X[:, j], part), ks[j]).values
            err = float(np.linalg.norm(refit - X0[:, j]) / np.linalg.norm(X0[:, j]))
        except DegenerateSupportError:
            err = math.inf
        ok = err <= config.success_rel_tol
        succ_by_cell[bi] = succ_by_cell.get(bi, 0) + ok
        records.append(TrialRecord((alpha, config.beta_grid[bi]), t, ok, err, int(iters[j])))

    for bi, b in enumerate(config.beta_grid):
        k = config.k_for(b)
        if bi in succ_by_cell:
            cells.append(Cell(alpha, b, m, k, config.trials_per_cell, succ_by_cell[bi]))
        else:
            cells.append(Cell(alpha, b, m, k, 0, 0))
    return cells, records


def run_phase_experiment(config: ExperimentConfig, workers: int = 1, done_columns=None,
                         on_column=None) -> PhaseDiagram:
    """Run every (alpha, beta) cell of ``config``.

    ``done_columns`` maps alpha index -> list of already computed cells
    (used to resume); ``on_column(ai, cells)`` is called as each column finishes.
    """
    done_columns = dict(done_columns or {})
    todo = [ai for ai in range(len(config.alpha_grid)) if ai not in done_columns]
    results: dict[int, tuple[list[Cell], list[TrialRecord]]] = {
        ai: (cells, []) for ai, cells in done_columns.items()
    }
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = {ai: ex.submit(_run_column, config, ai) for ai in todo}
            for ai in todo:
                results[ai] = futs[ai].result()
                if on_column:
                    on_column(ai, results[ai][0])
    else:
        for ai in todo:
            results[ai] = _run_column(config, ai)
            if on_column:
                on_column(ai, results[ai][0])
    cells, records = [], []
    for ai in sorted(results):
        cells.extend(results[ai][0])
        records.extend(results[ai][1])
    cells.sort(key=lambda c: (c.alpha, c.beta))
    return PhaseDiagram(config, cells, records)


def threshold_at_95(diagram: PhaseDiagram, alpha: float, level: float = 0.95) -> float:
    """Largest ``k/m`` on the alpha column with success rate >= ``level`` (0 if none)."""
    col = [c for c in diagram.cells if math.isclose(c.alpha, alpha, rel_tol=0, abs_tol=1e-12)]
    if not col:
        raise ValueError(f"alpha={alpha} is not on the grid")
    good = [c.sparsity_ratio for c in col if not c.skipped and c.success_rate >= level]
    return max(good) if good else 0.0


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def diagram_rows(diagram: PhaseDiagram) -> list[list[str]]:
    cfg = diagram.config
    rows = []
    for c in sorted(diagram.cells, key=lambda c: (c.alpha, c.beta)):
        rows.append([
            _fmt(cfg.d), _fmt(cfg.n), _fmt(c.m), _fmt(c.k), _fmt(c.alpha), _fmt(c.beta),
            _fmt(c.trials), _fmt(c.successes), _fmt(c.success_rate), _fmt(cfg.seed.seed),
        ])
    return rows


def emit_csv(diagram: PhaseDiagram, path) -> None:
    """Write one row per cell, sorted by (alpha, beta); written atomically."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(diagram_rows(diagram))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


def read_cells_csv(path) -> tuple[list[dict], list[Cell]]:
    """Parse a CSV written by :func:`emit_csv`; returns raw rows and cells."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        raw, cells = [], []
        for row in reader:
            rec = dict(zip(CSV_HEADER, row))
            raw.append(rec)
            cells.append(Cell(
                alpha=float(rec["alpha"]), beta=float(rec["beta"]),
                m=int(rec["m"]), k=int(rec["k"]),
                trials=int(rec["trials"]), successes=int(rec["successes"]),
            ))
    return raw, cells


def resume_columns(config: ExperimentConfig, path) -> dict[int, list[Cell]]:
    """Alpha columns already complete in an earlier, interrupted output file."""
    path = Path(path)
    if not path.exists():
        return {}
    raw, cells = read_cells_csv(path)
    for rec in raw:
        if int(rec["d"]) != config.d or int(rec["n"]) != config.n or int(rec["seed"]) != config.seed.seed:
            raise ValueError(f"{path} was produced by a different configuration")
    done = {}
    for ai, a in enumerate(config.alpha_grid):
        col = [c for c in cells if c.alpha == a]
        if sorted(c.beta for c in col) == sorted(config.beta_grid):
            done[ai] = col
    return done


# --- Table 1 ---------------------------------------------------------------

TABLE1_D = (1, 4, 8, 16)
TABLE1_ALPHA = (0.1, 0.3, 0.5, 0.7, 0.9)
DESK_N = {1: 200, 4: 200, 8: 200, 16: 400}
# the refit absorbs residual solver error, so experiments stop the solver early
TABLE1_SOLVER = SolverOptions(max_iterations=3000, primal_tolerance=1e-6, fixed_point_tolerance=1e-7)


def table1_base_config(seed: int = 2024, trials: int = 100) -> ExperimentConfig:
    return ExperimentConfig(
        d=1, N=DESK_N[1], alpha_grid=TABLE1_ALPHA, beta_grid=tuple(default_beta_grid()),
        trials_per_cell=trials, seed=RandomSeed(seed), solver=TABLE1_SOLVER,
    )


@dataclass
class Table1Report:
    d_list: tuple[int, ...]
    alpha_list: tuple[float, ...]
    thresholds: dict[tuple[int, float], float]
    diagrams: dict[int, PhaseDiagram] = field(repr=False, default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d"] + [_fmt(a) for a in self.alpha_list])
        for d in self.d_list:
            w.writerow([str(d)] + [_fmt(self.thresholds[(d, a)]) for a in self.alpha_list])
        return buf.getvalue()


def table1_report(d_list=TABLE1_D, alpha_list=TABLE1_ALPHA, base_config: ExperimentConfig | None = None,
                  N_for_d: dict[int, int] | None = None, workers: int = 1) -> Table1Report:
    """95%-success thresholds (in ``k/m`` units) for every ``(d, alpha)``."""
    base = base_config or table1_base_config()
    N_for_d = dict(DESK_N if N_for_d is None else N_for_d)
    thresholds, diagrams = {}, {}
    for d in d_list:
        cfg = replace(base, d=d, N=N_for_d.get(d, base.N), alpha_grid=tuple(alpha_list))
        diag = run_phase_experiment(cfg, workers=workers)
        diagrams[d] = diag
        for a in cfg.alpha_grid:
            thresholds[(d, a)] = threshold_at_95(diag, a)
    return Table1Report(tuple(d_list), tuple(float(a) for a in alpha_list), thresholds, diagrams)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_json(json.load(fh))
