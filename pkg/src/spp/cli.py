"""Command-line surface: sample, check, fit, predict, eval, synth.

Every flag can also live in a TOML config file (flat keys named like the
long flags, underscores for dashes); explicit flags win over the file.
SPP_SEED is the last-resort seed default.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dataio, render, serialize
from .grid import ArrayShape, Partition
from .mcmc import ChainConfig, MtmConfig, SmcConfig, run_chain
from .prior import HyperParams, sample_partition_candidate
from .projection import (
    SubArraySpec,
    check_intensity_equality,
    check_self_consistency_mc,
    projected_position_pmf,
)
from .prior import candidate_pmf, direct_pmf
from .relmodel import PosteriorSample, predict, sample_relations
from .serialize import SCHEMA_VERSION


def _parse_dims(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _opt(args, cfg: dict, key: str, default=None):
    """CLI flag if given, else config file, else default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in cfg:
        return cfg[key]
    return default


def _seed(args, cfg: dict) -> int:
    val = _opt(args, cfg, "seed")
    if val is not None:
        return int(val)
    env = os.environ.get("SPP_SEED")
    return int(env) if env else 0


def cmd_sample(args, cfg):
    dims = _parse_dims(_opt(args, cfg, "dims", "500,500"))
    hp = HyperParams(
        tau=float(_opt(args, cfg, "tau", 0.2)),
        theta=float(_opt(args, cfg, "theta", 0.95)),
        gamma=float(_opt(args, cfg, "gamma", 0.01)),
    )
    seed = _seed(args, cfg)
    rng = np.random.default_rng(seed)
    part = sample_partition_candidate(ArrayShape(dims), hp, rng)
    serialize.save_state(args.out, part, hp)
    print(f"sampled {len(part)} patches on {dims} (seed {seed}) -> {args.out}")
    if args.render:
        render.render_partition(part, args.render, mode=args.mode)
        print(f"rendered -> {args.render}")
    return 0


def _exact_grid():
    specs = []
    for n_x in range(1, 6):
        for extra in (1, 2, 3):
            n_y = n_x + extra
            specs.append(SubArraySpec(ArrayShape((n_y,)), (0,), (n_x,)))
            specs.append(SubArraySpec(ArrayShape((n_y,)), (extra,), (n_x,)))
    return specs


def cmd_check(args, cfg):
    seed = _seed(args, cfg)
    thetas = [0.1, 0.5, 0.9]
    report = {"version": SCHEMA_VERSION, "suite": args.suite, "seed": seed, "checks": []}

    # construction equivalence: candidate-conditioned pmf == direct pmf
    cases = []
    for n in range(1, 7):
        for theta in (0.0, 0.3, 0.5, 0.9, 1.0):
            cand = candidate_pmf(n, theta)[:, 1:]
            cond = cand / cand.sum()
            tv = 0.5 * float(np.abs(cond - direct_pmf(n, theta)).sum())
            cases.append({"n": n, "theta": theta, "tv": tv, "passed": bool(tv < 1e-12)})
    report["checks"].append(
        {"name": "construction_equivalence", "passed": all(c["passed"] for c in cases), "cases": cases}
    )

    specs = _exact_grid()
    report["checks"].append(check_intensity_equality(specs, thetas).to_dict())

    cases = []
    for spec in specs:
        for theta in thetas:
            pmf = projected_position_pmf(spec, theta, 0)
            tv = 0.5 * float(np.abs(pmf - direct_pmf(spec.inner_dims[0], theta)).sum())
            cases.append(
                {
                    "outer": list(spec.outer.dims),
                    "offset": list(spec.offset),
                    "inner": list(spec.inner_dims),
                    "theta": theta,
                    "tv": tv,
                    "passed": bool(tv < 1e-12),
                }
            )
    report["checks"].append(
        {"name": "position_identity", "passed": all(c["passed"] for c in cases), "cases": cases}
    )

    if not args.exact_only:
        spec = SubArraySpec(ArrayShape((6, 6)), (0, 0), (5, 5))
        hp = HyperParams(tau=2.0, theta=0.5, gamma=0.01)
        mc = check_self_consistency_mc(
            spec,
            hp,
            draws=int(_opt(args, cfg, "draws", 20000)),
            rng=np.random.default_rng(seed),
            workers=int(_opt(args, cfg, "workers", 1)),
        )
        report["checks"].append(mc.to_dict())

    report["passed"] = all(c["passed"] for c in report["checks"])
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n"
        )
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    print(f"overall: {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


TRACE_COLUMNS = [
    "iter",
    "loglik_train",
    "K",
    "accept_birth",
    "accept_death",
    "accept_cost",
    "accept_mtm_row",
    "accept_mtm_col",
    "wallclock_s",
]


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow(
                [row["iter"], repr(row["loglik_train"]), row["K"]]
                + [repr(row[c]) for c in TRACE_COLUMNS[3:8]]
                + [f"{row['wallclock_s']:.3f}"]
            )


def cmd_fit(args, cfg):
    seed = _seed(args, cfg)
    r, nodes = dataio.ingest(args.data, top_k=_opt(args, cfg, "top_k"))
    holdout = float(_opt(args, cfg, "holdout", 0.1))
    split_seed = int(_opt(args, cfg, "split_seed", seed))
    if holdout > 0:
        split = dataio.make_split(r, holdout, split_seed)
        mask = split.train_mask
    else:
        split = None
        mask = np.ones(r.shape, dtype=bool)

    hp = HyperParams(
        tau=float(_opt(args, cfg, "tau", 0.5)),
        theta=float(_opt(args, cfg, "theta", 0.99)),
        gamma=float(_opt(args, cfg, "gamma", 0.01)),
        p_birth=float(_opt(args, cfg, "p_birth", 0.5)),
    )
    chain = ChainConfig(
        iterations=int(_opt(args, cfg, "iters", 500)),
        hp=hp,
        smc=SmcConfig(
            particles=int(_opt(args, cfg, "particles", 5)),
            stages=_opt(args, cfg, "stages"),
        ),
        mtm=MtmConfig(proposals=int(_opt(args, cfg, "mtm_z", 5))),
        intensity_scale=_opt(args, cfg, "intensity_scale"),
        seed=seed,
        burn_in=_opt(args, cfg, "burn_in"),
        thin=int(_opt(args, cfg, "thin", 10)),
        checkpoint_every=_opt(args, cfg, "checkpoint_every"),
    )

    init = None
    if args.resume:
        part, _, row_of, col_of = serialize.load_state(args.resume)
        if part.shape.dims != r.shape:
            raise SystemExit(f"resume state is {part.shape.dims}, data is {r.shape}")
        if row_of is None:
            row_of = np.arange(r.shape[0])
        if col_of is None:
            col_of = np.arange(r.shape[1])
        init = PosteriorSample(part, row_of, col_of, hp.gamma)

    ckpt_path = str(args.samples) + ".ckpt"

    def checkpoint(it, state):
        serialize.save_state(ckpt_path, state.part, hp, state.row_of, state.col_of)

    t0 = time.perf_counter()
    result = run_chain(r, mask, chain, init=init, checkpoint_cb=checkpoint)
    elapsed = time.perf_counter() - t0

    _write_trace(args.trace, result.trace)
    meta = {
        "seed": seed,
        "iterations": chain.iterations,
        "burn_in": chain.iterations // 5 if chain.burn_in is None else chain.burn_in,
        "thin": chain.thin,
        "holdout": holdout,
        "split_seed": split_seed,
        "nodes": len(nodes),
    }
    serialize.save_samples(args.samples, result.samples, hp, meta)
    print(
        f"fit: {chain.iterations} iterations in {elapsed:.1f}s, "
        f"{len(result.samples)} samples -> {args.samples}"
    )
    if split is not None:
        report = dataio.evaluate(result.samples, split, r)
        print(f"held-out AUC: {report['auc_mean']:.4f}")
    return 0


def cmd_predict(args, cfg):
    samples, _, _ = serialize.load_samples(args.samples)
    pairs = dataio.read_pairs(args.pairs)
    scores = predict(samples, pairs)
    dataio.write_predictions(args.out, pairs, scores)
    print(f"wrote {len(scores)} scores -> {args.out}")
    return 0


def cmd_eval(args, cfg):
    pairs, scores = dataio.read_predictions(args.preds)
    labels = dataio.read_labels(args.labels)
    missing = [p for p in map(tuple, pairs) if p not in labels]
    if missing:
        raise SystemExit(f"{len(missing)} predicted cells have no label")
    y = np.array([labels[tuple(p)] for p in pairs])
    value = dataio.auc(scores, y)
    print(f"AUC: {value:.6f} over {len(y)} cells")
    return 0


def cmd_synth(args, cfg):
    dims = _parse_dims(_opt(args, cfg, "dims", "100,100"))
    hp = HyperParams(
        tau=float(_opt(args, cfg, "tau", 0.5)),
        theta=float(_opt(args, cfg, "theta", 0.9)),
        gamma=float(_opt(args, cfg, "gamma", 0.01)),
    )
    seed = _seed(args, cfg)
    rng = np.random.default_rng(seed)
    from .relmodel import generate_synthetic

    r, state = generate_synthetic(ArrayShape(dims), hp, rng)
    with open(args.out, "w") as fh:
        fh.write(f"# synthetic relations, dims={dims}, seed={seed}\n")
        for i, j in zip(*np.nonzero(r)):
            fh.write(f"n{i + 1}\tn{j + 1}\n")
    print(f"wrote {int(r.sum())} edges over {dims} -> {args.out}")
    if args.truth:
        serialize.save_state(args.truth, state.part, hp, state.row_of, state.col_of)
        print(f"ground truth -> {args.truth}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="spp", description=__doc__)
    top.add_argument("--config", help="TOML file with flag defaults")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a prior partition")
    p.add_argument("--dims")
    p.add_argument("--tau", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--render")
    p.add_argument("--mode", choices=["rate", "outline"], default="rate")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="run the self-consistency verification suite")
    p.add_argument("--suite", choices=["consistency"], default="consistency")
    p.add_argument("--exact-only", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("fit", help="fit the relational model by MCMC")
    p.add_argument("--data", required=True)
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--holdout", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--stages", type=int)
    p.add_argument("--mtm-z", type=int, dest="mtm_z")
    p.add_argument("--tau", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--p-birth", type=float, dest="p_birth")
    p.add_argument("--intensity-scale", type=float, dest="intensity_scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.add_argument("--trace", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="score node pairs with posterior samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="AUC of a predictions file against labels")
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic relational data")
    p.add_argument("--dims")
    p.add_argument("--tau", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_synth)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _load_config(args.config)
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
