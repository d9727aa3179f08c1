"""Experiment runner and command-line entry point.

Every kind writes into its output directory:

* ``metrics.csv``: one row per candidate (train) or per sweep cell, with
  the columns in :data:`CSV_COLUMNS` plus ``A_1 .. A_K``;
* ``summary.json``: versioned summary, valid against ``summary.schema.json``;
* ``config.yaml``: the fully resolved configuration;
* ``encoder.ckpt``: the selected encoder (absent for ``bound-grid``, which
  trains and discards one encoder per cell and writes ``bounds.csv``).

Nothing time-dependent is written, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .config import ConfigError, RunConfig, parse_config, render_config
from .contrastive import NegativeMix
from .crosseval import beta_reward_value, evaluate_crossmodal, zeta_grid
from .encoder import init_encoder, save_checkpoint
from .miverify import BoundBudget, bound_grid_specs, verify_tnce_bound
from .rng import DATA, INIT, VALIDATION, child_seed, substream
from .sampleopt import CandidateFailure, HyperDist, LoopConfig, run_alternating
from .synthgen import AugmentParams, make_validation_set, sample_batch
from .training import Adam, Learner, TrainConfig, train_epoch

__all__ = [
    "CSV_COLUMNS",
    "RunFailure",
    "SUMMARY_VERSION",
    "csv_header",
    "main",
    "run_experiment",
    "summary_schema",
    "write_report",
]

log = logging.getLogger("tupleinfonce")

SUMMARY_VERSION = 1
CSV_COLUMNS = ("epoch", "target", "candidate_id", "candidate_values", "reward", "chosen", "loss")
BOUND_COLUMNS = (
    "cell", "spec_id", "seed", "alpha", "noise_std", "N", "loss", "estimate", "rhs", "slack", "passed", "converged", "steps",
)
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RunFailure(RuntimeError):
    """A run could not complete (diverged training or I/O)."""


def csv_header(K: int) -> list[str]:
    return [*CSV_COLUMNS, *(f"A_{k + 1}" for k in range(K))]


def summary_schema() -> dict:
    text = resources.files("tupleinfonce").joinpath("summary.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _json_num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _row(epoch, target, cid, values, reward, chosen, loss, accs) -> list[str]:
    return [
        str(epoch), target, str(cid), ";".join(_num(v) for v in values),
        _num(reward), "true" if chosen else "false", _num(loss), *(_num(a) for a in accs),
    ]


def write_report(rows: list[list[str]], summary: dict, outdir, K: int) -> None:
    """Write ``metrics.csv`` and ``summary.json``; the summary is schema-checked first."""
    outdir = Path(outdir)
    jsonschema.validate(summary, summary_schema())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(K))
    writer.writerows(rows)
    (outdir / "metrics.csv").write_text(buf.getvalue(), encoding="utf-8")
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class _Setup:
    cfg: RunConfig
    spec: object
    train_set: object
    validation: object
    template: AugmentParams
    train_cfg: TrainConfig

    def fresh_learner(self) -> Learner:
        e = self.cfg.encoder
        enc = init_encoder(self.spec.dims, e.hidden, e.mod_dim, e.embed_dim, rng=substream(self.cfg.seed, INIT))
        return Learner(enc, Adam(self.cfg.train.lr))


def _setup(cfg: RunConfig) -> _Setup:
    spec = cfg.scene.build()
    train_set = sample_batch(spec, cfg.scene.train_size, substream(cfg.seed, DATA, "train"))
    tmpl = cfg.beta_template()
    val = make_validation_set(spec, cfg.M, tmpl.with_vector(tmpl.vector(), role="validation"), child_seed(cfg.seed, VALIDATION))
    t = cfg.train
    tc = TrainConfig(t.batch_size, t.steps_per_epoch, t.lr, cfg.tau, cfg.dropout)
    return _Setup(cfg, spec, train_set, val, tmpl, tc)


def _train_fixed(setup: _Setup, alpha: NegativeMix, beta: AugmentParams, epochs: int, tc: TrainConfig | None = None):
    """Train from the configured initialisation; one retry on divergence with a fresh substream."""
    tc = tc or setup.train_cfg
    for attempt, seed in enumerate((setup.cfg.seed, child_seed(setup.cfg.seed, "retry"))):
        learner = setup.fresh_learner()
        loss = float("nan")
        for e in range(epochs):
            loss = train_epoch(learner, setup.train_set, alpha, beta, tc, seed, e)
            if not np.isfinite(loss):
                break
        if np.isfinite(loss):
            return learner, loss
        log.warning("non-finite loss (attempt %d)", attempt + 1)
    raise RunFailure("training diverged twice; giving up")


def _as_zeta(beta: AugmentParams) -> AugmentParams:
    return beta.with_vector(beta.vector(), role="validation")


def _noise_beta(setup: _Setup, noise: float) -> AugmentParams:
    K = setup.spec.K
    v = np.zeros(3 * K)
    v[:K] = np.minimum(noise, setup.template.max_noise)
    return setup.template.with_vector(v)


def _run_train(cfg: RunConfig, outdir: Path) -> dict:
    s = _setup(cfg)
    K = s.spec.K
    alpha_dist = HyperDist.for_alpha(K, cfg.alpha_start(), sigma=cfg.sigma, lr=cfg.eta, n_candidates=cfg.candidates, baseline=cfg.reward_baseline)
    beta_dist = HyperDist.for_beta(s.template.bounds(), cfg.beta_start(), sigma=cfg.sigma, lr=cfg.eta, n_candidates=cfg.candidates, baseline=cfg.reward_baseline)
    loop = LoopConfig(cfg.tau, cfg.lam, 9, s.train_cfg)
    try:
        learner, trace, alpha_dist, beta_dist = run_alternating(
            s.fresh_learner(), alpha_dist, beta_dist, cfg.epochs, s.train_set, s.validation, s.template, cfg.seed, loop
        )
    except CandidateFailure as exc:
        raise RunFailure(str(exc)) from None
    rows = [
        _row(r["epoch"], r["target"], r["candidate_id"], r["candidate_values"], r["reward"], r["chosen"], r["loss"], r["accuracies"])
        for r in trace.rows()
    ]
    final_beta = s.template.with_vector(beta_dist.values(beta_dist.clip(beta_dist.mean)), role="validation")
    final = evaluate_crossmodal(learner.encoder, s.validation, cfg.tau, final_beta)
    results = {
        "mu_alpha": [float(x) for x in alpha_dist.mean],
        # effective augmentation: the search mean clipped into bounds, in real units
        "mu_beta": [float(x) for x in beta_dist.values(beta_dist.clip(beta_dist.mean))],
        "chosen_rewards": [_json_num(rec.rewards[rec.chosen]) for rec in trace.epochs],
        "final_accuracies": [float(a) for a in final.accuracies],
        "final_reward": float(final.total),
    }
    return {"rows": rows, "results": results, "encoder": learner.encoder}


def _run_alpha_sweep(cfg: RunConfig, outdir: Path) -> dict:
    s = _setup(cfg)
    K = s.spec.K
    sw = cfg.alpha_sweep
    beta = _noise_beta(s, sw.beta_noise)
    rows, rewards, encoders = [], [], []
    for i, a in enumerate(sw.values):
        w = np.zeros(K + 1)
        w[0], w[1 + sw.modality] = 1.0 - a, a
        learner, loss = _train_fixed(s, NegativeMix(w), beta, sw.epochs)
        res = evaluate_crossmodal(learner.encoder, s.validation, cfg.tau, _as_zeta(beta))
        rewards.append(res.total)
        encoders.append(learner.encoder)
        rows.append((i, w, res.total, loss, res.accuracies))
    best = int(np.argmax(rewards))
    out = [_row(sw.epochs, "alpha", i, w, r, i == best, loss, acc) for i, w, r, loss, acc in rows]
    results = {"values": list(sw.values), "rewards": [float(r) for r in rewards], "best_index": best}
    return {"rows": out, "results": results, "encoder": encoders[best]}


def _run_beta_sweep(cfg: RunConfig, outdir: Path) -> dict:
    s = _setup(cfg)
    K = s.spec.K
    sw = cfg.beta_sweep
    coord = {"noise": 0, "mask": 1, "rotation": 2}[sw.coordinate] * K + sw.modality
    hi = s.template.bounds()
    if hi[coord] <= 0:
        raise ConfigError(f"beta_max.{sw.coordinate}", "swept coordinate needs a positive bound")
    values = zeta_grid(hi, sw.points)[coord]
    search = [np.zeros(1)] * hi.size
    search[coord] = values
    rows, rewards, encoders, stars = [], [], [], []
    alpha = NegativeMix.ordinary(K)
    for i, b in enumerate(values):
        v = np.zeros(hi.size)
        v[coord] = b
        beta = s.template.with_vector(v)
        learner, loss = _train_fixed(s, alpha, beta, sw.epochs)
        totals = [
            evaluate_crossmodal(learner.encoder, s.validation, cfg.tau, beta.with_vector(_set(v, coord, z), role="validation")).total
            for z in values
        ]
        zs = float(values[int(np.argmax(totals))])
        res = evaluate_crossmodal(learner.encoder, s.validation, cfg.tau, beta.with_vector(v, role="validation"))
        r = beta_reward_value(res.total / K, v, _set(v, coord, zs), hi, cfg.lam)
        rewards.append(r)
        stars.append(zs)
        encoders.append(learner.encoder)
        rows.append((i, v, r, loss, res.accuracies))
    best = int(np.argmax(rewards))
    out = [_row(sw.epochs, "beta", i, v, r, i == best, loss, acc) for i, v, r, loss, acc in rows]
    results = {
        "coordinate": sw.coordinate,
        "modality": sw.modality,
        "grid_step": float(values[1] - values[0]),
        "betas": [float(b) for b in values],
        "zeta_star": stars,
        "rewards": [float(r) for r in rewards],
        "best_index": best,
    }
    return {"rows": out, "results": results, "encoder": encoders[best]}


def _set(v: np.ndarray, i: int, value: float) -> np.ndarray:
    out = v.copy()
    out[i] = value
    return out


def _run_naive(cfg: RunConfig, outdir: Path) -> dict:
    s = _setup(cfg)
    K = s.spec.K
    nv = cfg.naive
    d = nv.disturb
    beta = _noise_beta(s, nv.beta_noise)
    per_mod = np.r_[1.0 - d, np.full(K, d / K)]
    naive = np.array([1.0 - d, d])
    arms = []
    for w, flag in ((per_mod, False), (naive, True)):
        tc = replace(s.train_cfg, naive=flag)
        learner, loss = _train_fixed(s, NegativeMix(w), beta, nv.epochs, tc)
        res = evaluate_crossmodal(learner.encoder, s.validation, cfg.tau, _as_zeta(beta))
        arms.append((w, res.total, loss, res.accuracies, learner.encoder))
    best = 0 if arms[0][1] >= arms[1][1] else 1
    rows = [_row(nv.epochs, "alpha", i, w, r, i == best, loss, acc) for i, (w, r, loss, acc, _) in enumerate(arms)]
    results = {"per_modality_reward": float(arms[0][1]), "naive_reward": float(arms[1][1])}
    return {"rows": rows, "results": results, "encoder": arms[best][4]}


def _run_bound_grid(cfg: RunConfig, outdir: Path) -> dict:
    bc = cfg.bound
    budget = BoundBudget(batch_size=bc.N, max_steps=bc.max_steps, tau=cfg.tau)
    cells, lines = [], []
    for sid, (spec, noise) in enumerate(bound_grid_specs(tuple(bc.targets), bc.modality_noise)):
        for alpha in bc.alphas:
            for r in range(bc.seeds):
                seed = child_seed(cfg.seed, "bound", sid, r)
                rep = verify_tnce_bound(spec, alpha, noise, budget, bc.tolerance, seed)
                cells.append(rep)
                lines.append([
                    str(len(lines)), str(sid), str(seed), ";".join(_num(a) for a in rep.alpha), _num(noise), str(rep.N),
                    _num(rep.loss), _num(rep.estimate), _num(rep.rhs), _num(rep.slack),
                    "true" if rep.passed else "false", "true" if rep.converged else "false", str(rep.steps),
                ])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BOUND_COLUMNS)
    writer.writerows(lines)
    (outdir / "bounds.csv").write_text(buf.getvalue(), encoding="utf-8")
    converged = [c for c in cells if c.converged]
    results = {
        "cells": len(cells),
        "converged": len(converged),
        "violations": sum(not c.passed for c in converged),
        "max_excess": _json_num(max((c.estimate - c.rhs for c in cells), default=0.0)),
    }
    return {"rows": [], "results": results, "encoder": None}


_KINDS = {
    "train": _run_train,
    "alpha-sweep": _run_alpha_sweep,
    "beta-sweep": _run_beta_sweep,
    "naive-vs-tuple": _run_naive,
    "bound-grid": _run_bound_grid,
}


def run_experiment(cfg: RunConfig, out: str | Path | None = None) -> dict:
    """Run ``cfg.kind`` and write its artifacts; returns the JSON summary.

    Raises :class:`RunFailure` on divergence or an unwritable directory and
    :class:`ConfigError` for settings only detectable at run time.
    """
    outdir = Path(out if out is not None else cfg.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "config.yaml").write_text(render_config(cfg), encoding="utf-8")
    except OSError as exc:
        raise RunFailure(f"cannot write to {outdir}: {exc}") from None
    produced = _KINDS[cfg.kind](cfg, outdir)
    summary = {
        "schema_version": SUMMARY_VERSION,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "K": cfg.K,
        "rows": len(produced["rows"]),
        "results": produced["results"],
    }
    try:
        write_report(produced["rows"], summary, outdir, cfg.K)
        if produced["encoder"] is not None:
            save_checkpoint(outdir / "encoder.ckpt", produced["encoder"])
    except OSError as exc:
        raise RunFailure(f"cannot write to {outdir}: {exc}") from None
    return summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tupleinfonce", description="Run a tuple-contrastive experiment.")
    p.add_argument("--config", help="YAML run configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--kind", choices=list(_KINDS), help="override the experiment kind")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, {"seed": args.seed, "out": args.out, "kind": args.kind})
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, FloatingPointError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        print(json.dumps(summary["results"], sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
