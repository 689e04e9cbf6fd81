"""Gradient-based structured pruning.

A component's importance is the mean over evaluation batches of the
absolute gradient of the masked-LM loss with respect to its gate, taken
at all-ones gates.  For an attention head this equals the inner product
of the head's (already projected) output with the loss gradient at that
output, summed over positions before the absolute value; hidden units
and embedding ranks use the same activation-times-gradient form at their
own gates.  Thresholding keeps the highest-scoring components until the
weighted size target is reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import (
    ComponentId,
    GateSet,
    KIND_HEAD,
    KIND_HIDDEN,
    KIND_RANK,
    Model,
    component_universe,
    encoder_forward,
    mlm_loss,
    ones_gate_tensors,
)
from .exceptions import ContractError, InputError

SHARED = "shared"
NON_SHARED = "non-shared"


@dataclass
class ImportanceTable:
    """Importance score per component for one language, or for all (shared)."""

    scores: dict[ComponentId, float]
    language: str
    n_batches: int

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write("kind,layer,index,score\n")
            for cid in sorted(self.scores, key=ComponentId.sort_key):
                f.write(f"{cid},{self.scores[cid]!r}\n")

    @classmethod
    def load_csv(cls, path, language: str = SHARED) -> "ImportanceTable":
        scores = {}
        with open(path) as f:
            header = f.readline().strip()
            if header != "kind,layer,index,score":
                raise InputError(f"{path}: unexpected header {header!r}")
            for lineno, line in enumerate(f, 2):
                line = line.strip()
                if not line:
                    continue
                kind, layer, index, score = line.split(",")
                cid = ComponentId(kind, None if layer == "" else int(layer), int(index))
                scores[cid] = float(score)
        return cls(scores, language, n_batches=0)


@dataclass
class PruningProfile:
    """Hard gate assignment per language produced by one pruning run."""

    setting: str
    target_size: float
    gatesets: dict[str, GateSet]
    tables: dict[str, ImportanceTable] = field(default_factory=dict)


def importance_scores(model: Model, batches, language: str = SHARED) -> ImportanceTable:
    """Score every component on the given MLM batches.

    batches is an iterable of objects with .tokens, .mask_positions and
    .gold_ids arrays.  Scores are nonnegative; all gates are held at one
    while scoring.
    """
    config = model.config
    universe = component_universe(config)
    acc = {cid: 0.0 for cid in universe}
    n = 0
    for batch in batches:
        gates = ones_gate_tensors(config, requires_grad=True)
        logits = encoder_forward(model, batch.tokens, gates, pad_id=batch.pad_id)
        loss = mlm_loss(logits, batch.mask_positions, batch.gold_ids)
        T.backward(loss)
        for layer in range(config.n_layers):
            gh = np.abs(gates["heads"][layer].grad)
            gf = np.abs(gates["hiddens"][layer].grad)
            for h in range(config.n_heads):
                acc[ComponentId(KIND_HEAD, layer, h)] += gh[h]
            for j in range(config.ffn_dim):
                acc[ComponentId(KIND_HIDDEN, layer, j)] += gf[j]
        gr = np.abs(gates["ranks"].grad)
        for k in range(config.model_dim):
            acc[ComponentId(KIND_RANK, None, k)] += gr[k]
        for p in model.params.values():
            p.zero_grad()
        n += 1
    if n == 0:
        raise InputError("importance_scores: no evaluation batches supplied")
    return ImportanceTable({cid: float(acc[cid]) / n for cid in universe}, language, n)


def ranked_components(table: ImportanceTable) -> list[ComponentId]:
    """Components sorted by score descending, canonical id order on ties."""
    return sorted(table.scores, key=lambda cid: (-table.scores[cid], cid.sort_key()))


def select_threshold(table: ImportanceTable, weights: dict[ComponentId, float],
                     target_size: float, config) -> GateSet:
    """Keep top-scoring components until the weighted size reaches the target.

    target_size is the retained fraction t in [0, 1] of the total component
    weight.  The component that first reaches the cumulative target is kept,
    so the achieved size overshoots by less than one component weight.
    """
    if not 0.0 <= target_size <= 1.0:
        raise ContractError(f"target_size must be in [0, 1], got {target_size}")
    if set(table.scores) != set(weights):
        raise ContractError("importance table and weight table cover different components")
    total = sum(weights.values())
    goal = target_size * total
    values = {cid: 0.0 for cid in table.scores}
    cum = 0.0
    if goal > 0.0:
        for cid in ranked_components(table):
            values[cid] = 1.0
            cum += weights[cid]
            if cum >= goal:
                break
    return GateSet.from_values(config, values, hard=True)


def build_profile(model: Model, batches_by_language: dict, setting: str,
                  target_size: float, weights=None) -> PruningProfile:
    """Score and threshold, either once over mixed batches or per language.

    batches_by_language maps language id to a list of batches.  The shared
    setting scores one table over all batches pooled in language order; the
    non-shared setting scores each language separately on the same model.
    """
    from .encoder import component_weights

    if setting not in (SHARED, NON_SHARED):
        raise ContractError(f"unknown setting {setting!r}")
    if not batches_by_language:
        raise InputError("build_profile: no languages supplied")
    for lang, batches in batches_by_language.items():
        if not batches:
            raise InputError(f"build_profile: language {lang!r} has no batches")
    if weights is None:
        weights = component_weights(model.config)
    if setting == SHARED:
        pooled = [b for lang in sorted(batches_by_language) for b in batches_by_language[lang]]
        table = importance_scores(model, pooled, SHARED)
        gates = select_threshold(table, weights, target_size, model.config)
        return PruningProfile(setting, target_size, {SHARED: gates}, {SHARED: table})
    gatesets, tables = {}, {}
    for lang in sorted(batches_by_language):
        table = importance_scores(model, batches_by_language[lang], lang)
        gatesets[lang] = select_threshold(table, weights, target_size, model.config)
        tables[lang] = table
    return PruningProfile(setting, target_size, gatesets, tables)
