"""Command line interface: corpus generation, training runs, sweeps, reports.

Every command resolves a JSON config (defaults <- file <- flags), does its
work under a single root seed, and leaves a manifest next to its outputs so
any result can be reproduced from manifest plus seed alone.  Exit codes:
0 success, 2 configuration problem, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from .analysis import (compact_model, corr_accuracy_size, hamming_matrix,
                       layer_profile, save_plot, size_curve, throughput_bench,
                       time_forward, write_report)
from .corpus import Corpus, default_language_specs, gen_corpus, probe_batches
from .ds import DEFAULT_GRID, DSParams, subnetwork_at
from .encoder import (GateSet, Model, ModelConfig, component_universe,
                      component_weights, count_params, encoder_sparsity)
from .exceptions import ConfigError, PrunelabError
from .grad_prune import NON_SHARED, SHARED
from .trainer import (TrainSchedule, _git_hash, finetune_probe,
                      pretrain_baseline, run_ds_training, run_grad_pruning,
                      run_l0_pruning, write_manifest, write_metrics)

ENV_OUT_ROOT = "PRUNELAB_RUNS"

DEFAULT_CONFIG = {
    "model": {
        "n_layers": 2,
        "n_heads": 2,
        "model_dim": 32,
        "ffn_dim": 64,
        "max_seq_len": 64,
    },
    "schedule": {
        "total_steps": 200,
        "batch_size": 32,
        "seq_len": 16,
        "learning_rate": 1e-3,
        "alpha_lr": 5e-2,
        "warmup_fraction": 0.1,
        "alpha_only_warmup_fraction": 0.1,
        "lambda1": None,
        "lambda2": None,
        "target_size": 0.5,
        "setting": NON_SHARED,
        "algorithm": "grad",
        "mask_rate": 0.15,
        "importance_batches": 8,
    },
    "grid": list(DEFAULT_GRID),
    "seed": 0,
}

_MODEL_KEYS = set(DEFAULT_CONFIG["model"])
_SCHEDULE_KEYS = {f.name for f in fields(TrainSchedule)} - {"seed", "grid"}

PRUNE_ALGOS = {"grad": "grad", "l0": "l0_vanilla", "l0-improved": "l0_improved"}
DS_ALGOS = {"ds-grad": "ds_grad", "ds-l0": "ds_l0"}


# ---------------------------------------------------------------------------
# Config handling


def load_config(path=None) -> dict:
    """Defaults overlaid with a JSON config file; unknown keys rejected."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return cfg
    try:
        with open(path) as f:
            user = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(user, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in (("model", _MODEL_KEYS), ("schedule", _SCHEDULE_KEYS)):
        if section in user:
            if not isinstance(user[section], dict):
                raise ConfigError(f"config section {section!r} must be an object")
            bad = set(user[section]) - allowed
            if bad:
                raise ConfigError(f"unknown {section} config keys: {sorted(bad)}")
            cfg[section].update(user[section])
    if "grid" in user:
        cfg["grid"] = [float(g) for g in user["grid"]]
    if "seed" in user:
        cfg["seed"] = int(user["seed"])
    return cfg


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def _apply_overrides(cfg: dict, args) -> dict:
    """Copy flag values the user actually passed over the config."""
    pairs = [
        ("steps", "schedule", "total_steps"),
        ("batch_size", "schedule", "batch_size"),
        ("seq_len", "schedule", "seq_len"),
        ("lr", "schedule", "learning_rate"),
        ("alpha_lr", "schedule", "alpha_lr"),
        ("lambda1", "schedule", "lambda1"),
        ("lambda2", "schedule", "lambda2"),
        ("target_size", "schedule", "target_size"),
        ("setting", "schedule", "setting"),
        ("mask_rate", "schedule", "mask_rate"),
        ("importance_batches", "schedule", "importance_batches"),
        ("layers", "model", "n_layers"),
        ("heads", "model", "n_heads"),
        ("dim", "model", "model_dim"),
        ("ffn_dim", "model", "ffn_dim"),
        ("max_seq_len", "model", "max_seq_len"),
    ]
    for flag, section, key in pairs:
        v = getattr(args, flag, None)
        if v is not None:
            cfg[section][key] = v
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "grid", None) is not None:
        cfg["grid"] = list(parse_grid(args.grid))
    return cfg


def resolve_config(args) -> dict:
    return _apply_overrides(load_config(getattr(args, "config", None)), args)


def parse_grid(text: str) -> tuple[float, ...]:
    """'start:stop:step' inclusive of both endpoints, e.g. 0.1:0.9:0.2."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must look like start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid must hold numbers, got {text!r}")
    if step <= 0.0 or not 0.0 <= start <= stop <= 1.0:
        raise ConfigError(f"grid needs 0 <= start <= stop <= 1 and step > 0, got {text!r}")
    values = np.round(np.arange(start, stop + 0.5 * step, step), 10)
    return tuple(float(v) for v in values if v <= 1.0)


def model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **cfg["model"])


def schedule_from(cfg: dict, **over) -> TrainSchedule:
    kwargs = dict(cfg["schedule"])
    kwargs.update(over)
    return TrainSchedule(seed=cfg["seed"], grid=tuple(cfg["grid"]), **kwargs)


# ---------------------------------------------------------------------------
# Run directory helpers


def _out_root(args) -> str:
    return args.out_root or os.environ.get(ENV_OUT_ROOT, "runs")


def _new_run_dir(args, command: str, cfg: dict) -> tuple[str, str]:
    runid = args.run_id or f"{command}-s{cfg['seed']}"
    path = os.path.join(_out_root(args), runid)
    os.makedirs(path, exist_ok=True)
    return path, runid


def _find_run_dir(args, ref: str) -> str:
    path = ref if os.path.isdir(ref) else os.path.join(_out_root(args), ref)
    if not os.path.isdir(path):
        raise ConfigError(f"run directory not found: {ref}")
    return path


def _write_json(path, payload: dict):
    payload = dict(payload)
    from . import __version__

    payload.setdefault("package_version", __version__)
    payload.setdefault("git_hash", _git_hash())
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def _load_run_model(run_dir: str) -> Model:
    if not os.path.exists(os.path.join(run_dir, "model.json")):
        raise ConfigError(f"no model checkpoint under {run_dir}")
    return Model.load(run_dir)


def _run_gatesets(run_dir: str, config: ModelConfig) -> dict[str, GateSet]:
    """Hard gate sets stored by a pruning run, keyed by language."""
    out = {}
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("gates_") and name.endswith(".txt"):
            lang = name[len("gates_"):-len(".txt")]
            out[lang] = GateSet.load_text(os.path.join(run_dir, name), config)
    return out


def _run_ds(run_dir: str, config: ModelConfig) -> DSParams | None:
    path = os.path.join(run_dir, "ds.csv")
    if not os.path.exists(path):
        return None
    with open(os.path.join(run_dir, "manifest.json")) as f:
        manifest = json.load(f)
    grid = tuple(manifest["schedule"]["grid"])
    return DSParams.load_csv(path, component_universe(config), grid)


def _subnetworks_at(ds: DSParams, t: float, config: ModelConfig) -> dict[str, GateSet]:
    return {lang: subnetwork_at(ds, t, lang, config) for lang in ds.languages()}


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_corpus(args) -> int:
    cfg = resolve_config(args)
    specs = default_language_specs(cfg["seed"])
    if args.languages is not None:
        if not 1 <= args.languages <= len(specs):
            raise ConfigError(f"--languages must be 1..{len(specs)}")
        specs = specs[: args.languages]
    corpus = gen_corpus(specs, seed=cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    corpus.save(args.out)
    _write_json(os.path.join(args.out, "manifest.json"), {
        "command": "gen-corpus",
        "seed": cfg["seed"],
        "languages": [s.id for s in specs],
        "vocab_size": len(corpus.vocab),
    })
    print(f"corpus: {len(specs)} languages, vocab {len(corpus.vocab)}, at {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    corpus = Corpus.load(args.corpus)
    mc = model_config(cfg, len(corpus.vocab))
    sched = schedule_from(cfg)
    result = pretrain_baseline(mc, corpus, sched)
    run_dir, runid = _new_run_dir(args, "pretrain", cfg)
    result.model.save(run_dir)
    write_metrics(result.records, os.path.join(run_dir, "metrics.csv"))
    write_manifest(run_dir, sched, mc, extra={
        "command": "pretrain", "run_id": runid, "corpus": args.corpus,
    })
    last = result.records[-1]["loss"] if result.records else float("nan")
    print(f"pretrain {runid}: {sched.total_steps} steps, final loss {last:.4f}")
    return 0


def cmd_prune(args) -> int:
    cfg = resolve_config(args)
    corpus = Corpus.load(args.corpus)
    base_dir = _find_run_dir(args, args.baseline)
    model = _load_run_model(base_dir)
    algorithm = PRUNE_ALGOS[args.algo]
    sched = schedule_from(cfg, algorithm=algorithm)
    if algorithm == "grad":
        result = run_grad_pruning(model, corpus, sched)
    else:
        result = run_l0_pruning(model, corpus, sched)
    run_dir, runid = _new_run_dir(args, f"prune-{args.algo}", cfg)
    result.model.save(run_dir)
    for lang, gs in result.profile.gatesets.items():
        gs.save_text(os.path.join(run_dir, f"gates_{lang}.txt"), model.config)
    for lang, table in result.profile.tables.items():
        table.save_csv(os.path.join(run_dir, f"importance_{lang}.csv"))
    if result.hc is not None:
        result.hc.save_csv(os.path.join(run_dir, "alphas.csv"),
                           component_universe(model.config))
    write_metrics(result.records, os.path.join(run_dir, "metrics.csv"))
    write_manifest(run_dir, sched, model.config, extra={
        "command": "prune", "run_id": runid, "corpus": args.corpus,
        "baseline": base_dir, "achieved_sizes": result.achieved_sizes,
    })
    sizes = ", ".join(f"{l}={v:.3f}" for l, v in sorted(result.achieved_sizes.items()))
    print(f"prune {runid}: algorithm {args.algo}, achieved sizes {sizes}")
    return 0


def cmd_ds_train(args) -> int:
    cfg = resolve_config(args)
    corpus = Corpus.load(args.corpus)
    base_dir = _find_run_dir(args, args.baseline)
    model = _load_run_model(base_dir)
    sched = schedule_from(cfg, algorithm=DS_ALGOS[args.algo])
    result = run_ds_training(model, corpus, sched)
    run_dir, runid = _new_run_dir(args, args.algo, cfg)
    result.model.save(run_dir)
    result.ds.save_csv(os.path.join(run_dir, "ds.csv"))
    write_metrics(result.records, os.path.join(run_dir, "metrics.csv"))
    write_manifest(run_dir, sched, model.config, extra={
        "command": "ds-train", "run_id": runid, "corpus": args.corpus,
        "baseline": base_dir,
    })
    print(f"ds-train {runid}: algorithm {args.algo}, "
          f"{len(result.ds.languages())} gate table(s)")
    return 0


def _probe_targets(args, run_dir: str, model: Model) -> dict[str, GateSet]:
    """What to evaluate: DS subnetworks at t, stored gate sets, or dense."""
    ds = _run_ds(run_dir, model.config)
    if ds is not None:
        if args.t is None:
            raise ConfigError("this run holds dynamic sparsification tables; pass --t")
        return _subnetworks_at(ds, args.t, model.config)
    gatesets = _run_gatesets(run_dir, model.config)
    if gatesets:
        return gatesets
    return {"dense": GateSet.ones(model.config)}


def cmd_eval_probe(args) -> int:
    cfg = resolve_config(args)
    corpus = Corpus.load(args.corpus)
    run_dir = _find_run_dir(args, args.run)
    model = _load_run_model(run_dir)
    targets = _probe_targets(args, run_dir, model)
    splits = probe_batches(corpus, batch_size=cfg["schedule"]["batch_size"],
                           seq_len=cfg["schedule"]["seq_len"], seed=cfg["seed"])
    rows = []
    for name in sorted(targets):
        res = finetune_probe(model, targets[name], splits, seed=cfg["seed"],
                             epochs=args.epochs)
        for lang in sorted(res.per_language):
            rows.append({"gates": name, "language": lang,
                         "accuracy": res.per_language[lang]})
        rows.append({"gates": name, "language": "macro", "accuracy": res.mean})
        print(f"probe[{name}]: macro accuracy {res.mean:.3f} (best lr {res.best_lr})")
    out = os.path.join(run_dir, "probe.csv")
    write_report(rows, ("gates", "language", "accuracy"), out)
    _write_json(os.path.join(run_dir, "manifest_eval-probe.json"), {
        "command": "eval-probe", "run": run_dir, "corpus": args.corpus,
        "seed": cfg["seed"], "t": args.t, "epochs": args.epochs,
    })
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    corpus = Corpus.load(args.corpus)
    run_dir = _find_run_dir(args, args.run)
    model = _load_run_model(run_dir)
    ds = _run_ds(run_dir, model.config)
    if ds is None:
        raise ConfigError("sweep needs a ds-train run (no ds.csv found)")
    grid = parse_grid(args.grid) if args.grid else tuple(cfg["grid"])
    splits = probe_batches(corpus, batch_size=cfg["schedule"]["batch_size"],
                           seq_len=cfg["schedule"]["seq_len"], seed=cfg["seed"])
    weights = component_weights(model.config)
    universe = component_universe(model.config)
    wvec = np.array([weights[c] for c in universe])
    bench_seq = args.seq_len or cfg["schedule"]["seq_len"]
    rows = []
    for t in grid:
        for lang, gs in sorted(_subnetworks_at(ds, t, model.config).items()):
            res = finetune_probe(model, gs, splits, seed=cfg["seed"], epochs=args.epochs)
            acc = res.per_language.get(lang, res.mean)
            counts = count_params(model.config, gs)
            vec = gs.to_vector(model.config)
            sps = time_forward(compact_model(model, gs), model.config.vocab_size,
                               bench_seq, reps=args.reps)
            rows.append({
                "t": float(t),
                "language": lang,
                "overall_sparsity": 1.0 - float((vec * wvec).sum() / wvec.sum()),
                "encoder_sparsity": encoder_sparsity(gs, weights),
                "total_params": counts["total_params"],
                "probe_accuracy": acc,
                "sentences_per_sec": sps,
            })
    out = os.path.join(run_dir, "sweep.csv")
    write_report(rows, ("t", "language", "overall_sparsity", "encoder_sparsity",
                        "total_params", "probe_accuracy", "sentences_per_sec"), out)
    _write_json(os.path.join(run_dir, "manifest_sweep.json"), {
        "command": "sweep", "run": run_dir, "corpus": args.corpus,
        "seed": cfg["seed"], "grid": list(grid), "epochs": args.epochs,
        "reps": args.reps, "seq_len": bench_seq,
    })
    print(f"sweep: {len(rows)} rows over {len(grid)} sizes -> {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    run_dir = _find_run_dir(args, args.run)
    model = _load_run_model(run_dir)
    ds = _run_ds(run_dir, model.config)
    weights = component_weights(model.config)
    universe = component_universe(model.config)
    wvec = np.array([weights[c] for c in universe])

    def overall(gs):
        vec = gs.to_vector(model.config)
        return 1.0 - float((vec * wvec).sum() / wvec.sum())

    gatesets: dict[float, GateSet] = {}
    if ds is not None:
        grid = parse_grid(args.grid) if args.grid else tuple(cfg["grid"])
        lang = args.language or ds.languages()[0]
        for t in grid:
            gs = subnetwork_at(ds, float(t), lang, model.config)
            gatesets.setdefault(overall(gs), gs)
    else:
        stored = _run_gatesets(run_dir, model.config)
        if not stored:
            stored = {"dense": GateSet.ones(model.config)}
        for gs in stored.values():
            gatesets.setdefault(overall(gs), gs)
    records = throughput_bench(model, gatesets, seq_len=args.seq_len, reps=args.reps,
                               batch_size=args.batch_size)
    rows = [{"sparsity": r.sparsity, "sentences_per_sec": r.sentences_per_sec,
             "batch_size": r.batch_size, "seq_len": r.seq_len, "hardware": r.hardware}
            for r in records]
    out = os.path.join(run_dir, "bench.csv")
    write_report(rows, ("sparsity", "sentences_per_sec", "batch_size", "seq_len",
                        "hardware"), out)
    _write_json(os.path.join(run_dir, "manifest_bench.json"), {
        "command": "bench", "run": run_dir, "seed": cfg["seed"],
        "batch_size": args.batch_size, "seq_len": args.seq_len, "reps": args.reps,
    })
    for r in records:
        print(f"bench: sparsity {r.sparsity:.3f} -> {r.sentences_per_sec:.1f} sent/sec")
    return 0


def cmd_report(args) -> int:
    run_dir = _find_run_dir(args, args.run)
    runid = os.path.basename(os.path.normpath(run_dir))
    model = _load_run_model(run_dir)
    out = os.path.join(run_dir, f"report_{args.figure}_{runid}.csv")
    if args.figure == "layer-profile":
        gatesets = _run_gatesets(run_dir, model.config)
        if not gatesets:
            raise ConfigError("layer-profile needs stored gate sets (gates_*.txt)")
        rows = []
        for lang in sorted(gatesets):
            for row in layer_profile(gatesets[lang]):
                rows.append({"language": lang, **row})
        write_report(rows, ("language", "layer", "head_sparsity", "hidden_sparsity"), out)
        if args.plot:
            save_plot(rows, "layer", ("head_sparsity", "hidden_sparsity"),
                      out.replace(".csv", ".png"), title="layer profile")
    elif args.figure == "hamming":
        gatesets = _run_gatesets(run_dir, model.config)
        if len(gatesets) < 2:
            raise ConfigError("hamming needs at least two per-language gate sets")
        langs, mat = hamming_matrix(gatesets)
        with open(out, "w") as f:
            f.write("language," + ",".join(langs) + "\n")
            for i, lang in enumerate(langs):
                f.write(lang + "," + ",".join(repr(float(v)) for v in mat[i]) + "\n")
    elif args.figure == "size-curve":
        ds = _run_ds(run_dir, model.config)
        if ds is None:
            raise ConfigError("size-curve needs a ds-train run (no ds.csv found)")
        rows = []
        for lang in ds.languages():
            for row in size_curve(ds, model.config, lang):
                rows.append({"language": lang, **row})
        write_report(rows, ("language", "t", "total_params", "embedding_params",
                            "encoder_params", "encoder_sparsity", "overall_sparsity",
                            "head_sparsity", "hidden_sparsity", "rank_sparsity",
                            "embed_pruning_active"), out)
        if args.plot:
            save_plot(rows, "overall_sparsity", "total_params",
                      out.replace(".csv", ".png"), title="size curve")
    elif args.figure == "corr":
        if not (args.probe_baseline and args.corpus):
            raise ConfigError("corr needs --probe-baseline and --corpus")
        pruned = _read_probe_macroless(os.path.join(run_dir, "probe.csv"))
        base = _read_probe_macroless(args.probe_baseline)
        corpus = Corpus.load(args.corpus)
        sizes = {s.id: s.corpus_size for s in corpus.specs}
        losses = {}
        for lang in sorted(set(base) & set(pruned) & set(sizes)):
            losses[lang] = base[lang] - pruned[lang]
        sizes = {l: sizes[l] for l in losses}
        r = corr_accuracy_size(losses, sizes, scatter_path=out)
        print(f"report corr: Pearson r = {r:.3f}")
    else:
        raise ConfigError(f"unknown figure {args.figure!r}")
    print(f"report: wrote {out}")
    return 0


def _read_probe_macroless(path) -> dict[str, float]:
    if not os.path.exists(path):
        raise ConfigError(f"probe results not found: {path} (run eval-probe first)")
    out = {}
    with open(path) as f:
        header = f.readline().strip().split(",")
        gi, li, ai = header.index("gates"), header.index("language"), header.index("accuracy")
        for line in f:
            cells = line.strip().split(",")
            lang = cells[li]
            # per-language gate rows carry that language's own accuracy
            if lang != "macro" and (cells[gi] == lang or cells[gi] in ("dense", SHARED)):
                out[lang] = float(cells[ai])
    return out


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunelab",
        description="structured pruning experiments for gated transformer encoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, schedule_flags=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-root", help=f"run directory root (or ${ENV_OUT_ROOT})")
        p.add_argument("--run-id", help="name for the run directory")
        p.add_argument("--seed", type=int)
        if schedule_flags:
            p.add_argument("--steps", type=int)
            p.add_argument("--batch-size", type=int)
            p.add_argument("--seq-len", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--alpha-lr", type=float)
            p.add_argument("--lambda1", type=float)
            p.add_argument("--lambda2", type=float)
            p.add_argument("--mask-rate", type=float)
            p.add_argument("--importance-batches", type=int)

    p = sub.add_parser("gen-corpus", help="generate the synthetic multilingual corpus")
    common(p, schedule_flags=False)
    p.add_argument("--out", required=True, help="corpus directory to write")
    p.add_argument("--languages", type=int, help="keep only the first N default languages")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="train a dense baseline with masked language modeling")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--ffn-dim", type=int)
    p.add_argument("--max-seq-len", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("prune", help="prune a baseline with gradient or l0 gates")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--baseline", required=True, help="pretrain run id or directory")
    p.add_argument("--algo", required=True, choices=sorted(PRUNE_ALGOS))
    p.add_argument("--setting", choices=(SHARED, NON_SHARED))
    p.add_argument("--target-size", type=float)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("ds-train", help="train one model across a grid of sizes")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--algo", default="ds-grad", choices=sorted(DS_ALGOS))
    p.add_argument("--setting", choices=(SHARED, NON_SHARED))
    p.add_argument("--grid", help="size grid start:stop:step")
    p.set_defaults(func=cmd_ds_train)

    p = sub.add_parser("eval-probe", help="linear probe accuracy on frozen features")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--run", required=True, help="run to evaluate")
    p.add_argument("--t", type=float, help="size for dynamic sparsification runs")
    p.add_argument("--epochs", type=int, default=10)
    p.set_defaults(func=cmd_eval_probe)

    p = sub.add_parser("sweep", help="accuracy/size/throughput across a size grid")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--run", required=True, help="ds-train run to sweep")
    p.add_argument("--grid", help="size grid start:stop:step")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="CPU throughput of compacted subnetworks")
    common(p, schedule_flags=False)
    p.add_argument("--run", required=True)
    p.add_argument("--grid", help="size grid start:stop:step (ds runs)")
    p.add_argument("--language", help="language table to bench (ds runs)")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="figure-analog CSV from stored artifacts")
    common(p, schedule_flags=False)
    p.add_argument("--run", required=True)
    p.add_argument("--figure", required=True,
                   choices=("layer-profile", "hamming", "size-curve", "corr"))
    p.add_argument("--corpus", help="corpus directory (corr)")
    p.add_argument("--probe-baseline", help="probe.csv of the dense baseline (corr)")
    p.add_argument("--plot", action="store_true", help="also write a PNG when possible")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except PrunelabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
