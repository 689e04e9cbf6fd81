"""Synthetic multilingual corpus: seeded grammars, MLM batches, probe task.

Each language gets a token inventory and a tiny first-order Markov grammar.
Languages in the same family share part of their inventory, so family
structure is learnable from text alone.  Every sentence also carries a
global marker token injected at one of two rates chosen by a fair coin;
whether the realized marker fraction clears a threshold between the two
rates defines a balanced, capacity-sensitive sentence classification task.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractError, InputError

PAD_ID = 0
MASK_ID = 1
CLS_ID = 2
MARKER_ID = 3

PAD_TOKEN = "<pad>"
MASK_TOKEN = "<mask>"
CLS_TOKEN = "<cls>"
MARKER_TOKEN = "mrk"

# marker injection rates (fair coin per sentence) and the label threshold
# between them
MARKER_RATE_HI = 0.25
MARKER_RATE_LO = 0.05
MARKER_THRESHOLD = 0.15

# sentence lengths are uniform on [SENT_LEN_LO, SENT_LEN_HI]
SENT_LEN_LO = 4
SENT_LEN_HI = 20
MEAN_SENT_LEN = 0.5 * (SENT_LEN_LO + SENT_LEN_HI)

# per-language token budgets are log-uniform over this range
TOKEN_BUDGET_LO = 10_000
TOKEN_BUDGET_HI = 200_000

# successors per state in the sentence grammar
K_SUCC = 4

FAMILIES = frozenset({
    "Afro-Asiatic", "Austro-Asiatic", "Austronesian", "Constructed language",
    "Dravidian", "Indo-European", "Japonic", "Kartvelian", "Koreanic",
    "Kra-Dai", "Language isolate", "Niger-Congo", "Sino-Tibetan", "Turkic",
    "Uralic", "Missing",
})

_RESERVED = re.compile(r"^<.*>$")


def _seed_key(seed, salt: int) -> list[int]:
    """Entropy key for a batch stream; seed may be an int or a sequence."""
    return [int(s) for s in np.atleast_1d(seed)] + [salt]


@dataclass(frozen=True)
class LanguageSpec:
    """One language: id, family label, sentence count, grammar seed, inventory."""

    id: str
    family: str
    corpus_size: int
    grammar_seed: int
    token_inventory: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id or "," in self.id or self.id != self.id.strip():
            raise InputError(f"bad language id {self.id!r}")
        if self.family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r} for language {self.id}")
        if self.corpus_size < 1:
            raise InputError(f"corpus_size must be >= 1, got {self.corpus_size}")
        for tok in self.token_inventory:
            if not tok or _RESERVED.match(tok) or any(c.isspace() for c in tok):
                raise InputError(f"bad inventory token {tok!r} in language {self.id}")


def _family_slug(family: str) -> str:
    return "".join(c for c in family.lower() if c.isalnum())


def build_inventories(specs, inventory_size: int = 40, overlap: float = 0.5):
    """Fill inventories so same-family Jaccard overlap is >= the floor.

    Every language gets the same inventory size n: s family-shared tokens
    plus n - s of its own, with s = ceil(2 n J / (1 + J)) so that the
    pairwise Jaccard s / (2n - s) clears the floor J.
    """
    if inventory_size < 2:
        raise ContractError("inventory_size must be >= 2")
    if not 0.0 < overlap < 1.0:
        raise ContractError("overlap floor must be in (0, 1)")
    shared = math.ceil(2.0 * inventory_size * overlap / (1.0 + overlap))
    shared = min(shared, inventory_size - 1)
    own = inventory_size - shared
    out = []
    for spec in specs:
        slug = _family_slug(spec.family)
        inventory = tuple(f"{slug}_s{j:03d}" for j in range(shared))
        inventory += tuple(f"{spec.id}_w{j:03d}" for j in range(own))
        out.append(replace(spec, token_inventory=inventory))
    return out


def default_language_specs(seed: int = 11, n_families: int = 4,
                           per_family: int = 2) -> list[LanguageSpec]:
    """Desk-scale default: 8 languages over 4 families, log-uniform budgets."""
    codes = [("en", "Indo-European"), ("de", "Indo-European"),
             ("ar", "Afro-Asiatic"), ("he", "Afro-Asiatic"),
             ("tr", "Turkic"), ("kk", "Turkic"),
             ("fi", "Uralic"), ("hu", "Uralic")]
    codes = codes[: n_families * per_family]
    rng = np.random.default_rng([seed, 0])
    specs = []
    for i, (code, family) in enumerate(codes):
        budget = math.exp(rng.uniform(math.log(TOKEN_BUDGET_LO), math.log(TOKEN_BUDGET_HI)))
        size = max(1, int(round(budget / MEAN_SENT_LEN)))
        specs.append(LanguageSpec(code, family, size, int(rng.integers(1, 2 ** 31)) + i))
    return build_inventories(specs)


def build_vocab(specs) -> dict[str, int]:
    """Specials, the marker, per-language tags, then the inventory union."""
    vocab = {PAD_TOKEN: PAD_ID, MASK_TOKEN: MASK_ID, CLS_TOKEN: CLS_ID,
             MARKER_TOKEN: MARKER_ID}
    for spec in sorted(specs, key=lambda s: s.id):
        vocab[f"<{spec.id}>"] = len(vocab)
    for tok in sorted({t for spec in specs for t in spec.token_inventory}):
        if tok in vocab:
            raise InputError(f"inventory token {tok!r} collides with a reserved token")
        vocab[tok] = len(vocab)
    return vocab


@dataclass
class Corpus:
    """Per-language sentences as id arrays, plus the vocabulary that maps them."""

    specs: list[LanguageSpec]
    vocab: dict[str, int]
    sentences: dict[str, list[np.ndarray]]

    def languages(self) -> list[str]:
        return sorted(self.sentences)

    def content_ids(self) -> np.ndarray:
        """Ids eligible as random-replacement targets: every non-reserved token."""
        return np.array(sorted(i for t, i in self.vocab.items() if not _RESERVED.match(t)),
                        dtype=np.int64)

    def save(self, root):
        os.makedirs(root, exist_ok=True)
        inverse = {i: t for t, i in self.vocab.items()}
        with open(os.path.join(root, "languages.csv"), "w") as f:
            f.write("id,family,size,seed\n")
            for spec in sorted(self.specs, key=lambda s: s.id):
                f.write(f"{spec.id},{spec.family},{spec.corpus_size},{spec.grammar_seed}\n")
        with open(os.path.join(root, "vocab.tsv"), "w") as f:
            for tok, idx in sorted(self.vocab.items(), key=lambda kv: kv[1]):
                f.write(f"{tok}\t{idx}\n")
        for lang, rows in self.sentences.items():
            with open(os.path.join(root, f"{lang}.txt"), "w") as f:
                for row in rows:
                    f.write(" ".join(inverse[int(i)] for i in row) + "\n")

    @classmethod
    def load(cls, root):
        vocab_path = os.path.join(root, "vocab.tsv")
        if not os.path.exists(vocab_path):
            raise InputError(f"no vocabulary file at {vocab_path}")
        vocab: dict[str, int] = {}
        with open(vocab_path) as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx = line.split("\t")
                vocab[tok] = int(idx)
        rows_by_lang: dict[str, list[np.ndarray]] = {}
        specs = []
        with open(os.path.join(root, "languages.csv")) as f:
            header = f.readline().strip()
            if header != "id,family,size,seed":
                raise InputError(f"unexpected languages.csv header {header!r}")
            for line in f:
                line = line.strip()
                if not line:
                    continue
                lang, family, size, seed = line.split(",")
                rows = []
                seen: set[str] = set()
                with open(os.path.join(root, f"{lang}.txt")) as g:
                    for sent in g:
                        toks = sent.split()
                        try:
                            rows.append(np.array([vocab[t] for t in toks], dtype=np.int64))
                        except KeyError as e:
                            raise InputError(f"{lang}.txt: token {e.args[0]!r} not in vocabulary")
                        seen.update(toks)
                # observed inventory: content tokens that actually occur;
                # the marker is injected, not part of the inventory
                inventory = tuple(sorted(t for t in seen
                                         if not _RESERVED.match(t) and t != MARKER_TOKEN))
                specs.append(LanguageSpec(lang, family, int(size), int(seed), inventory))
                rows_by_lang[lang] = rows
        return cls(specs, vocab, rows_by_lang)


def _gen_language(spec: LanguageSpec, vocab: dict[str, int], seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, spec.grammar_seed])
    ids = np.array([vocab[t] for t in spec.token_inventory], dtype=np.int64)
    n = len(ids)
    k = min(K_SUCC, n)
    succ = np.stack([rng.choice(n, size=k, replace=False) for _ in range(n)])
    probs = rng.dirichlet(np.ones(k), size=n)
    rows = []
    for _ in range(spec.corpus_size):
        length = int(rng.integers(SENT_LEN_LO, SENT_LEN_HI + 1))
        walk = np.empty(length, dtype=np.int64)
        state = int(rng.integers(n))
        for j in range(length):
            walk[j] = ids[state]
            state = int(succ[state, rng.choice(k, p=probs[state])])
        rate = MARKER_RATE_HI if rng.random() < 0.5 else MARKER_RATE_LO
        walk[rng.random(length) < rate] = MARKER_ID
        rows.append(walk)
    return rows


def gen_corpus(specs, seed: int = 0) -> Corpus:
    """Generate every language's sentences from its seeded grammar."""
    specs = list(specs)
    if not specs:
        raise InputError("gen_corpus: no language specs supplied")
    ids = [spec.id for spec in specs]
    if len(set(ids)) != len(ids):
        raise InputError(f"duplicate language ids in {ids}")
    if any(not spec.token_inventory for spec in specs):
        specs = build_inventories(specs)
    vocab = build_vocab(specs)
    # per-language streams are seeded independently, so generation order
    # does not matter and languages could be generated in parallel
    sentences = {spec.id: _gen_language(spec, vocab, seed) for spec in specs}
    return Corpus(specs, vocab, sentences)


@dataclass
class MLMBatch:
    """Masked rows with their gold ids and per-row language."""

    tokens: np.ndarray
    mask_positions: np.ndarray
    gold_ids: np.ndarray
    languages: tuple[str, ...]
    pad_id: int = PAD_ID


@dataclass
class MLMBatchSet:
    """A concrete batch stream plus the count of sentences too short to use."""

    batches: list[MLMBatch]
    n_skipped: int

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)


def _mask_row(tokens, row, length, rng, mask_rate, content_ids):
    hit = np.flatnonzero(rng.random(length) < mask_rate)
    if hit.size == 0:
        hit = np.array([rng.integers(length)])
    for j in hit:
        u = rng.random()
        if u < 0.8:
            tokens[row, j] = MASK_ID
        elif u < 0.9:
            tokens[row, j] = content_ids[rng.integers(len(content_ids))]
    return hit


def mlm_batches(corpus: Corpus, n_batches: int, batch_size: int, seq_len: int,
                mask_rate: float = 0.15, seed: int = 0,
                languages=None) -> MLMBatchSet:
    """Sample masked batches; rows mix languages in proportion to corpus size.

    Per masked position: 80% mask token, 10% random content token, 10% left
    unchanged.  Every row gets at least one mask.  Sentences shorter than
    two tokens are skipped and counted.
    """
    if not 0.0 < mask_rate < 1.0:
        raise ContractError(f"mask_rate must be in (0, 1), got {mask_rate}")
    if n_batches < 1 or batch_size < 1 or seq_len < 2:
        raise ContractError("need n_batches >= 1, batch_size >= 1, seq_len >= 2")
    if languages is None:
        languages = corpus.languages()
    pool: list[tuple[str, np.ndarray]] = []
    skipped = 0
    for lang in languages:
        if lang not in corpus.sentences:
            raise InputError(f"unknown language {lang!r}")
        for row in corpus.sentences[lang]:
            if len(row) < 2:
                skipped += 1
            else:
                pool.append((lang, row))
    if not pool:
        raise InputError("no usable sentences after skipping short ones")
    content_ids = corpus.content_ids()
    rng = np.random.default_rng(_seed_key(seed, 1))
    batches = []
    for _ in range(n_batches):
        picks = rng.integers(len(pool), size=batch_size)
        tokens = np.full((batch_size, seq_len), PAD_ID, dtype=np.int64)
        gold = np.full((batch_size, seq_len), PAD_ID, dtype=np.int64)
        mask = np.zeros((batch_size, seq_len), dtype=bool)
        langs = []
        for r, p in enumerate(picks):
            lang, row = pool[p]
            length = min(len(row), seq_len)
            tokens[r, :length] = row[:length]
            gold[r, :length] = row[:length]
            mask[r, _mask_row(tokens, r, length, rng, mask_rate, content_ids)] = True
            langs.append(lang)
        batches.append(MLMBatch(tokens, mask, gold, tuple(langs)))
    return MLMBatchSet(batches, skipped)


def marker_fraction(row) -> float:
    """Fraction of marker tokens among real (non-pad, non-cls) positions."""
    row = np.asarray(row)
    real = (row != PAD_ID) & (row != CLS_ID)
    if not real.any():
        return 0.0
    return float((row[real] == MARKER_ID).mean())


def probe_label(row) -> int:
    """1 when the realized marker fraction clears the threshold."""
    return int(marker_fraction(row) >= MARKER_THRESHOLD)


@dataclass
class ProbeBatch:
    """Classification rows: cls-prefixed tokens, binary labels, languages."""

    tokens: np.ndarray
    labels: np.ndarray
    languages: tuple[str, ...]
    pad_id: int = PAD_ID


@dataclass
class ProbeSplits:
    train: list[ProbeBatch]
    dev: list[ProbeBatch]
    test: list[ProbeBatch]


def _probe_rows(corpus, seq_len):
    rows = []
    for lang in corpus.languages():
        for sent in corpus.sentences[lang]:
            if len(sent) < 1:
                continue
            row = np.full(seq_len, PAD_ID, dtype=np.int64)
            row[0] = CLS_ID
            length = min(len(sent), seq_len - 1)
            row[1: 1 + length] = sent[:length]
            # the label reads the truncated row, so it stays a deterministic
            # function of exactly what the model sees
            rows.append((lang, row, probe_label(row)))
    return rows


def probe_batches(corpus: Corpus, batch_size: int, seq_len: int, seed: int = 0,
                  fractions=(0.7, 0.15, 0.15)) -> ProbeSplits:
    """Split labeled rows 70/15/15 per language and batch each split."""
    if batch_size < 1 or seq_len < 2:
        raise ContractError("need batch_size >= 1 and seq_len >= 2")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) <= 0:
        raise ContractError(f"split fractions must be three positives summing to 1, got {fractions}")
    rows = _probe_rows(corpus, seq_len)
    rng = np.random.default_rng(_seed_key(seed, 2))
    splits: dict[str, list] = {"train": [], "dev": [], "test": []}
    for lang in corpus.languages():
        mine = [r for r in rows if r[0] == lang]
        order = rng.permutation(len(mine))
        n_train = int(round(fractions[0] * len(mine)))
        n_dev = int(round(fractions[1] * len(mine)))
        for j, k in enumerate(order):
            name = "train" if j < n_train else ("dev" if j < n_train + n_dev else "test")
            splits[name].append(mine[k])
    out = {}
    for name, items in splits.items():
        order = rng.permutation(len(items))
        batches = []
        for start in range(0, len(items), batch_size):
            chunk = [items[k] for k in order[start: start + batch_size]]
            tokens = np.stack([c[1] for c in chunk])
            labels = np.array([c[2] for c in chunk], dtype=np.int64)
            batches.append(ProbeBatch(tokens, labels, tuple(c[0] for c in chunk)))
        out[name] = batches
    return ProbeSplits(out["train"], out["dev"], out["test"])
