"""Dynamic sparsification: one parameter set serving every sparsity level.

Each component's gate becomes a function of the requested subnetwork size
t in [0, 1]:

    g(t) = f(alpha + t * theta)

where f is the deterministic hard-concrete squash (noise dropped).  Given
a boundary size t_hat at which the gate must switch on and a bucket width
delta such that g(t_hat) = 1 and g(t_hat - delta) = 0, the two-equation
linear system has the closed form

    theta = (f_inv(1) - f_inv(0)) / delta
    alpha = f_inv(1) - t_hat * theta

with f_inv(1) = logit((1 - l) / (r - l)) and f_inv(0) = logit(-l / (r - l)).
The solver widens the two logit targets by a tiny relative margin so both
boundary equations still saturate exactly after float64 rounding.

Boundaries are assigned by bucketizing an importance ranking: walk the
components in score order, accumulate normalized weight, and snap each
component's cumulative size to the smallest grid size that covers it.
delta is the component's own normalized weight share, capped at the width
of its grid cell so the on-ramp never straddles an interior grid point;
coarse toy models hit the cap, realistic shapes do not.  delta <= t_hat
holds by construction and masks are nested across the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .encoder import ComponentId, GateSet
from .exceptions import ContractError, InputError
from .grad_prune import ImportanceTable, ranked_components
from .l0 import DEFAULT_HC, HardConcrete

# widening of the logit targets, relative to f_inv(1) - f_inv(0); large
# against rounding error in alpha + t * theta, negligible against the gap
# between adjacent grid sizes
BOUNDARY_MARGIN = 1e-6

DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


def check_grid(grid) -> tuple[float, ...]:
    grid = tuple(float(g) for g in grid)
    if len(grid) < 2 or grid[0] != 0.0 or grid[-1] != 1.0:
        raise ContractError("size grid must start at 0 and end at 1")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ContractError("size grid must be strictly increasing")
    return grid


def solve_ds_params(t_hat: float, delta: float,
                    constants: HardConcrete = DEFAULT_HC) -> tuple[float, float]:
    """Closed-form (alpha, theta) for boundary size t_hat and width delta."""
    if not 0.0 < delta <= t_hat <= 1.0:
        raise ContractError(f"need 0 < delta <= t_hat <= 1, got t_hat={t_hat}, delta={delta}")
    lo, hi = constants.zero_threshold, constants.one_threshold
    margin = BOUNDARY_MARGIN * (hi - lo)
    hi += margin
    lo -= margin
    theta = (hi - lo) / delta
    alpha = hi - t_hat * theta
    return alpha, theta


def ds_gate(alpha, theta, t: float, constants: HardConcrete = DEFAULT_HC):
    """Deterministic gate value at size t; numpy in, numpy out."""
    alpha = np.asarray(alpha, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    z = expit(alpha + t * theta)
    return np.clip(z * (constants.r - constants.l) + constants.l, 0.0, 1.0)


@dataclass
class BucketAssignment:
    """Boundary size and width per component, from one importance ranking."""

    order: list[ComponentId]
    t_hat: dict[ComponentId, float]
    delta: dict[ComponentId, float]


def bucketize(table: ImportanceTable, weights: dict[ComponentId, float],
              grid) -> BucketAssignment:
    """Assign each component a grid boundary by cumulative normalized weight.

    Components are walked in score order (ties by canonical id); a component
    whose cumulative size lands in (grid[i-1], grid[i]] activates at grid[i].
    Zero-score components still get a bucket, at the tail of the walk.
    """
    grid = check_grid(grid)
    if set(table.scores) != set(weights):
        raise ContractError("importance table and weight table cover different components")
    total = sum(weights.values())
    if total <= 0.0:
        raise ContractError("total component weight must be positive")
    order = ranked_components(table)
    t_hat: dict[ComponentId, float] = {}
    delta: dict[ComponentId, float] = {}
    cum = 0.0
    arr = np.asarray(grid)
    for cid in order:
        w = weights[cid] / total
        cum += w
        # snap to the smallest grid size covering the cumulative size; guard
        # the final component against rounding past 1.0
        pos = int(np.searchsorted(arr, min(cum, 1.0), side="left"))
        t_hat[cid] = float(arr[pos])
        # cap the ramp width at the grid cell so the gate saturates before the
        # previous grid point; pos >= 1 because cum > 0 and grid[0] == 0
        delta[cid] = min(w, float(arr[pos] - arr[pos - 1]))
    return BucketAssignment(order, t_hat, delta)


@dataclass
class DSParams:
    """Per-language (alpha, theta, t_hat, delta) vectors over a component order."""

    components: list[ComponentId]
    grid: tuple[float, ...]
    tables: dict[str, dict[str, np.ndarray]]
    constants: HardConcrete = DEFAULT_HC

    def languages(self):
        return sorted(self.tables)

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write("language,kind,layer,index,alpha,theta,t_hat,delta\n")
            for lang in self.languages():
                tab = self.tables[lang]
                for i, cid in enumerate(self.components):
                    f.write(
                        f"{lang},{cid},{float(tab['alpha'][i])!r},{float(tab['theta'][i])!r},"
                        f"{float(tab['t_hat'][i])!r},{float(tab['delta'][i])!r}\n"
                    )

    @classmethod
    def load_csv(cls, path, components, grid, constants: HardConcrete = DEFAULT_HC):
        index = {str(cid): i for i, cid in enumerate(components)}
        tables: dict[str, dict[str, np.ndarray]] = {}
        with open(path) as f:
            header = f.readline().strip()
            if header != "language,kind,layer,index,alpha,theta,t_hat,delta":
                raise InputError(f"{path}: unexpected header {header!r}")
            for line in f:
                line = line.strip()
                if not line:
                    continue
                lang, kind, layer, idx, alpha, theta, t_hat, delta = line.split(",")
                key = f"{kind},{layer},{idx}"
                if key not in index:
                    raise InputError(f"{path}: unknown component {key}")
                tab = tables.setdefault(
                    lang,
                    {k: np.zeros(len(components)) for k in ("alpha", "theta", "t_hat", "delta")},
                )
                i = index[key]
                tab["alpha"][i] = float(alpha)
                tab["theta"][i] = float(theta)
                tab["t_hat"][i] = float(t_hat)
                tab["delta"][i] = float(delta)
        return cls(list(components), check_grid(grid), tables, constants)


def init_ds(tables: dict[str, ImportanceTable], weights: dict[ComponentId, float],
            grid, constants: HardConcrete = DEFAULT_HC) -> DSParams:
    """Bucketize each language's ranking and solve every component's params."""
    grid = check_grid(grid)
    if not tables:
        raise InputError("init_ds: no importance tables supplied")
    components = sorted(weights, key=ComponentId.sort_key)
    out: dict[str, dict[str, np.ndarray]] = {}
    for lang, table in tables.items():
        assignment = bucketize(table, weights, grid)
        n = len(components)
        tab = {k: np.zeros(n) for k in ("alpha", "theta", "t_hat", "delta")}
        for i, cid in enumerate(components):
            alpha, theta = solve_ds_params(assignment.t_hat[cid], assignment.delta[cid], constants)
            tab["alpha"][i] = alpha
            tab["theta"][i] = theta
            tab["t_hat"][i] = assignment.t_hat[cid]
            tab["delta"][i] = assignment.delta[cid]
        out[lang] = tab
    return DSParams(components, grid, out, constants)


def subnetwork_at(ds: DSParams, t: float, language: str, config) -> GateSet:
    """Hard GateSet at size t; off-grid sizes binarize fractional gates at 0.5."""
    if language not in ds.tables:
        raise InputError(f"no dynamic sparsification parameters for language {language!r}")
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"size t must be in [0, 1], got {t}")
    tab = ds.tables[language]
    values = ds_gate(tab["alpha"], tab["theta"], t, ds.constants)
    hard = (values >= 0.5).astype(np.float64)
    mapping = dict(zip(ds.components, hard))
    return GateSet.from_values(config, mapping, hard=True)


def gate_values_at(ds: DSParams, t: float, language: str) -> np.ndarray:
    """Raw (possibly fractional) gate values at size t, in component order."""
    if language not in ds.tables:
        raise InputError(f"no dynamic sparsification parameters for language {language!r}")
    tab = ds.tables[language]
    return ds_gate(tab["alpha"], tab["theta"], t, ds.constants)
