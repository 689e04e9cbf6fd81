"""Hard-concrete gates and the relaxed L0 objective.

A gate is sampled by stretching a binary concrete variable over (l, r)
with l < 0 < 1 < r and clipping to [0, 1]:

    s    = sigmoid((log(u / (1 - u)) + alpha) / beta),   u ~ U(0, 1)
    shat = s * (r - l) + l
    g    = min(1, max(0, shat))

At inference the noise is dropped: g = clip(sigmoid(alpha) * (r - l) + l).
The expected number of active gates has the closed form
sigmoid(alpha - log(-l / r)), which never passes through the clip, so the
penalty keeps a gradient even when sampled gates saturate.

The improved objective adds a per-language sparsity constraint
sum_i |size_i - t| over weighted expected sizes and a diversity term that
penalizes the L1 mass of the language-by-language gram matrix of gates,
masked so same-family pairs and the diagonal are exempt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from . import tensor as T
from .exceptions import ContractError, InputError
from .tensor import Tensor


@dataclass(frozen=True)
class HardConcrete:
    """Stretch limits and temperature for hard-concrete sampling."""

    l: float = -0.1
    r: float = 1.1
    beta: float = 2.0 / 3.0

    def __post_init__(self):
        if not (self.l < 0.0 < 1.0 < self.r):
            raise ContractError(f"hard concrete needs l < 0 < 1 < r, got l={self.l}, r={self.r}")
        if self.beta <= 0.0:
            raise ContractError("hard concrete temperature must be positive")

    @property
    def zero_threshold(self) -> float:
        """Largest alpha whose inference gate is exactly 0."""
        return float(logit(-self.l / (self.r - self.l)))

    @property
    def one_threshold(self) -> float:
        """Smallest alpha whose inference gate is exactly 1."""
        return float(logit((1.0 - self.l) / (self.r - self.l)))

    @property
    def penalty_shift(self) -> float:
        """log(-l / r), subtracted from alpha inside the expected-L0 sigmoid."""
        return float(np.log(-self.l / self.r))


DEFAULT_HC = HardConcrete()

ALPHA_INIT_STD = 0.1


@dataclass
class HardConcreteParams:
    """One learnable alpha per component, per language ('shared' for one set)."""

    alphas: dict[str, Tensor]
    constants: HardConcrete = DEFAULT_HC

    @classmethod
    def init(cls, languages, n_components: int, seed: int,
             constants: HardConcrete = DEFAULT_HC) -> "HardConcreteParams":
        rng = np.random.default_rng(seed)
        alphas = {
            lang: Tensor(rng.normal(0.0, ALPHA_INIT_STD, size=n_components), requires_grad=True)
            for lang in languages
        }
        return cls(alphas, constants)

    def save_csv(self, path, component_ids):
        with open(path, "w") as f:
            f.write("language,kind,layer,index,alpha\n")
            for lang in sorted(self.alphas):
                values = self.alphas[lang].data
                if len(component_ids) != values.size:
                    raise ContractError("component list does not match alpha vector length")
                for cid, a in zip(component_ids, values):
                    f.write(f"{lang},{cid},{float(a)!r}\n")

    @classmethod
    def load_csv(cls, path, component_ids, constants: HardConcrete = DEFAULT_HC):
        index = {str(cid): i for i, cid in enumerate(component_ids)}
        rows: dict[str, np.ndarray] = {}
        with open(path) as f:
            header = f.readline().strip()
            if header != "language,kind,layer,index,alpha":
                raise InputError(f"{path}: unexpected header {header!r}")
            for line in f:
                line = line.strip()
                if not line:
                    continue
                lang, kind, layer, idx, alpha = line.split(",")
                key = f"{kind},{layer},{idx}"
                if key not in index:
                    raise InputError(f"{path}: unknown component {key}")
                rows.setdefault(lang, np.zeros(len(component_ids)))[index[key]] = float(alpha)
        return cls({lang: Tensor(v, requires_grad=True) for lang, v in rows.items()}, constants)


def _check_u(u: np.ndarray):
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0 or np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ContractError("noise draws must lie strictly inside (0, 1)")
    return u


def sample_gate(alpha: Tensor, u, constants: HardConcrete = DEFAULT_HC) -> Tensor:
    """Differentiable stochastic gate; u holds uniform draws, one per gate."""
    u = _check_u(u)
    if u.shape != alpha.shape:
        raise ContractError(f"noise shape {u.shape} does not match alpha {alpha.shape}")
    noise = np.log(u / (1.0 - u))
    s = T.sigmoid(T.multiply(T.add(alpha, Tensor(noise)), 1.0 / constants.beta))
    shat = T.add(T.multiply(s, constants.r - constants.l), constants.l)
    return T.clamp(shat, 0.0, 1.0)


def inference_gate(alpha, constants: HardConcrete = DEFAULT_HC):
    """Deterministic gate value; numpy in, numpy out."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.clip(expit(alpha) * (constants.r - constants.l) + constants.l, 0.0, 1.0)


def expected_gate(alpha: Tensor, constants: HardConcrete = DEFAULT_HC) -> Tensor:
    """Differentiable inference-mode gate, used by the diversity term."""
    shat = T.add(T.multiply(T.sigmoid(alpha), constants.r - constants.l), constants.l)
    return T.clamp(shat, 0.0, 1.0)


def l0_penalty(alpha: Tensor, weights, constants: HardConcrete = DEFAULT_HC) -> Tensor:
    """Weighted expected number of nonzero gates, sum_g w_g * sigmoid(alpha - log(-l/r))."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != alpha.shape:
        raise ContractError(f"weight shape {weights.shape} does not match alpha {alpha.shape}")
    if np.any(weights <= 0.0):
        raise ContractError("component weights must be positive")
    probs = T.sigmoid(T.add(alpha, -constants.penalty_shift))
    return T.multiply(probs, Tensor(weights)).sum()


def expected_size(alpha: Tensor, weights, constants: HardConcrete = DEFAULT_HC) -> Tensor:
    """Expected retained fraction of the total component weight."""
    total = float(np.sum(np.asarray(weights, dtype=np.float64)))
    return T.multiply(l0_penalty(alpha, weights, constants), 1.0 / total)


def sparsity_constraint_loss(sizes, target: float) -> Tensor:
    """sum_i |size_i - t| over per-language expected sizes (scalar tensors)."""
    if not 0.0 <= target <= 1.0:
        raise ContractError(f"target size must be in [0, 1], got {target}")
    if not sizes:
        raise ContractError("sparsity constraint needs at least one size")
    terms = [T.absolute(T.add(s, -target)) for s in sizes]
    out = terms[0]
    for t in terms[1:]:
        out = T.add(out, t)
    return out


@dataclass
class PriorMatrix:
    """Language order plus the 0/1 penalty mask; same family and diagonal are 0."""

    languages: list[str]
    matrix: np.ndarray

    def submatrix(self, languages) -> np.ndarray:
        missing = [l for l in languages if l not in self.languages]
        if missing:
            raise InputError(f"unknown language ids in prior: {missing}")
        idx = [self.languages.index(l) for l in languages]
        return self.matrix[np.ix_(idx, idx)]


MISSING_FAMILY = "Missing"


def build_prior(families: dict[str, str]) -> PriorMatrix:
    """Prior from language -> family labels.

    The label 'Missing' puts a language in its own singleton family, so two
    'Missing' languages still count as cross-family.
    """
    if not families:
        raise InputError("build_prior: no languages given")
    languages = sorted(families)
    n = len(languages)
    mat = np.ones((n, n))
    for i, a in enumerate(languages):
        for j, b in enumerate(languages):
            same = families[a] == families[b] and families[a] != MISSING_FAMILY
            if i == j or same:
                mat[i, j] = 0.0
    return PriorMatrix(languages, mat)


def load_prior(path) -> PriorMatrix:
    """Read a two-column language,family file (header optional)."""
    families: dict[str, str] = {}
    with open(path) as f:
        reader = csv.reader(f)
        for row in reader:
            if not row or (row[0] == "language" and row[1] == "family"):
                continue
            if len(row) != 2:
                raise InputError(f"{path}: expected two columns, got {row}")
            families[row[0].strip()] = row[1].strip()
    return build_prior(families)


def diversity_loss(gate_matrix: Tensor, prior: np.ndarray) -> Tensor:
    """L1 mass of the gate gram matrix under the prior mask.

    gate_matrix has one row of gate values per language; prior is the
    matching square 0/1 mask (diagonal already zero).
    """
    n_lang = gate_matrix.shape[0] if gate_matrix.ndim == 2 else -1
    prior = np.asarray(prior, dtype=np.float64)
    if gate_matrix.ndim != 2 or prior.shape != (n_lang, n_lang):
        raise ContractError(
            f"gate matrix {gate_matrix.shape} and prior {prior.shape} do not conform"
        )
    mask = prior * (1.0 - np.eye(n_lang))
    gram = T.matmul(gate_matrix, T.transpose(gate_matrix, (1, 0)))
    return T.absolute(T.multiply(gram, Tensor(mask))).sum()


def total_loss(mlm: Tensor, l0_term: Tensor, diversity: Tensor | None,
               lambda1: float, lambda2: float) -> Tensor:
    """L = L_mlm + lambda1 * L_l0 + lambda2 * L_div."""
    if lambda1 < 0.0 or lambda2 < 0.0:
        raise ContractError("loss multipliers must be nonnegative")
    out = T.add(mlm, T.multiply(l0_term, lambda1))
    if diversity is not None:
        out = T.add(out, T.multiply(diversity, lambda2))
    return out
