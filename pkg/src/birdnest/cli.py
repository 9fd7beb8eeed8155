"""Command-line pipeline: simulate, fit, score, rank, export-plots.

Every run writes a resolved-config JSON echo beside its outputs, and all
randomness flows from a single --seed (drawn and printed when absent), so any
run can be replayed exactly.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/degenerate.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from . import fit as fit_mod
from . import kernels
from . import score as score_mod
from . import synth as synth_mod
from .errors import DataError, DegenerateModelError, DomainError
from .ingest import BucketingConfig, build_histograms, choose_base, parse_ratings

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="birdnest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_in=False, scoring=False):
        p.add_argument("--input", required=True, help="input events CSV")
        p.add_argument("--output", required=True, help="output path")
        p.add_argument("--stars", type=int, default=5, help="star scale s (default 5)")
        p.add_argument("--buckets", type=int, default=20, help="target temporal bucket count")
        p.add_argument("--seed", type=int, default=None, help="global seed (drawn if absent)")
        p.add_argument("--threads", type=int, default=1, help="worker cap (results are schedule-independent)")
        if model_in:
            p.add_argument("--model", required=True, help="fitted model JSON")
        else:
            p.add_argument("--k", type=int, default=None, help="fixed cluster count")
            p.add_argument("--k-min", type=int, default=None)
            p.add_argument("--k-max", type=int, default=None)
            p.add_argument("--max-iters", type=int, default=100)
            p.add_argument("--tol", type=float, default=1e-5)
            p.add_argument("--restarts", type=int, default=5)
        if scoring:
            p.add_argument("--samples", type=int, default=score_mod.DEFAULT_N_SAMPLES,
                           help="Monte Carlo draws per user per side")

    p_fit = sub.add_parser("fit", help="fit the mixture model, write model JSON")
    common(p_fit)

    p_score = sub.add_parser("score", help="score users under an existing model")
    common(p_score, model_in=True, scoring=True)

    p_rank = sub.add_parser("rank", help="fit + score in one pass")
    common(p_rank, scoring=True)
    p_rank.add_argument("--model", default=None, help="also write the fitted model JSON here")

    p_sim = sub.add_parser("simulate", help="sample a synthetic population to an events CSV")
    p_sim.add_argument("--spec", required=True, help="generative-spec JSON")
    p_sim.add_argument("--output", required=True, help="events CSV path")
    p_sim.add_argument("--seed", type=int, default=None, help="overrides the spec's seed")
    p_sim.add_argument("--base", type=float, default=2.0, help="log base for gap materialization")
    p_sim.add_argument("--min-gap", type=int, default=1)
    p_sim.add_argument("--threads", type=int, default=1)

    p_plots = sub.add_parser("export-plots", help="emit plot-data CSVs (no images)")
    common(p_plots, model_in=True, scoring=True)
    p_plots.add_argument("--top", type=int, default=50, help="size of the flagged group")
    p_plots.add_argument("--posterior-draws", type=int, default=10_000,
                         help="draws per user for posterior-mean-rating samples")
    return parser


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbelow(2**31)
        print(f"seed drawn: {args.seed}")
    return args.seed


def _echo_config(args, output: str, extra: dict | None = None) -> None:
    doc = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    doc["command"] = args.command
    if extra:
        doc.update(extra)
    path = Path(output).with_suffix(Path(output).suffix + ".config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, default=str)
        f.write("\n")


def _load_histograms(args, cfg: BucketingConfig | None = None):
    if not Path(args.input).exists():
        raise DataError(f"input file not found: {args.input}")
    events, report = parse_ratings(args.input, s=args.stars)
    if report.rejected:
        report.write(str(args.input) + ".errors.txt")
    if cfg is None:
        cfg = choose_base(events, target_buckets=args.buckets)
    return build_histograms(events, cfg, s=args.stars), cfg


def _limits(args) -> fit_mod.FitLimits:
    return fit_mod.FitLimits(max_outer=args.max_iters, tol=args.tol, restarts=args.restarts)


def _fit(args, histograms):
    if args.k is not None:
        return fit_mod.fit_bird(histograms, args.k, seed=args.seed, limits=_limits(args))
    k_lo = args.k_min or 1
    k_hi = args.k_max or max(k_lo, 3)
    return fit_mod.select_k(histograms, range(k_lo, k_hi + 1), seed=args.seed, limits=_limits(args))


def _bucketing_dict(cfg: BucketingConfig, stars: int) -> dict:
    return {"base": cfg.base, "num_buckets": cfg.num_buckets, "min_gap": cfg.min_gap, "stars": stars}


def _cmd_fit(args) -> int:
    _resolve_seed(args)
    histograms, cfg = _load_histograms(args)
    model = _fit(args, histograms)
    fit_mod.save_model(model, args.output, bucketing=_bucketing_dict(cfg, args.stars))
    _echo_config(args, args.output, {"chosen_k": model.K, "bucketing": _bucketing_dict(cfg, args.stars)})
    print(f"fitted K={model.K} log_likelihood={model.total_log_likelihood:.6f} bic={model.bic:.6f}")
    return EXIT_OK


def _write_scores(records, output: str) -> None:
    score_mod.write_scores_csv(records, output)
    score_mod.write_scores_json(records, str(Path(output).with_suffix(".json")))


def _cmd_score(args) -> int:
    _resolve_seed(args)
    if not Path(args.model).exists():
        raise DataError(f"model file not found: {args.model}")
    model, bucketing = fit_mod.load_model(args.model)
    cfg = None
    if bucketing:
        cfg = BucketingConfig(bucketing["base"], bucketing["num_buckets"], bucketing["min_gap"])
    histograms, cfg = _load_histograms(args, cfg)
    fit_mod.attach_posteriors(model, histograms)
    records = score_mod.nest_scores(model, histograms, n_samples=args.samples, seed=args.seed)
    _write_scores(records, args.output)
    _echo_config(args, args.output)
    print(f"scored {len(records)} users -> {args.output}")
    return EXIT_OK


def _cmd_rank(args) -> int:
    _resolve_seed(args)
    histograms, cfg = _load_histograms(args)
    model = _fit(args, histograms)
    if args.model:
        fit_mod.save_model(model, args.model, bucketing=_bucketing_dict(cfg, args.stars))
    records = score_mod.nest_scores(model, histograms, n_samples=args.samples, seed=args.seed)
    _write_scores(records, args.output)
    _echo_config(args, args.output, {"chosen_k": model.K, "bucketing": _bucketing_dict(cfg, args.stars)})
    print(f"ranked {len(records)} users (K={model.K}) -> {args.output}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if not Path(args.spec).exists():
        raise DataError(f"spec file not found: {args.spec}")
    spec = synth_mod.SynthSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    args.seed = spec.seed
    cfg = BucketingConfig(base=args.base, num_buckets=spec.betas.shape[1], min_gap=args.min_gap)
    events = synth_mod.generate_events(spec, cfg)
    synth_mod.write_events_csv(events, args.output)
    histograms, truth = synth_mod.generate(spec)
    synth_mod.write_labels_csv(histograms, truth, str(Path(args.output)) + ".labels.csv")
    _echo_config(args, args.output, {"num_events": len(events), "num_users": len(histograms)})
    print(f"simulated {len(histograms)} users, {len(events)} events -> {args.output}")
    return EXIT_OK


def _cmd_export_plots(args) -> int:
    _resolve_seed(args)
    if not Path(args.model).exists():
        raise DataError(f"model file not found: {args.model}")
    model, bucketing = fit_mod.load_model(args.model)
    cfg = None
    if bucketing:
        cfg = BucketingConfig(bucketing["base"], bucketing["num_buckets"], bucketing["min_gap"])
    histograms, cfg = _load_histograms(args, cfg)
    fit_mod.attach_posteriors(model, histograms)
    records = score_mod.nest_scores(model, histograms, n_samples=args.samples, seed=args.seed)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    index = {uid: i for i, uid in enumerate(histograms.user_ids)}
    top_ids = {r.user_id for r in records[: args.top]}
    flagged = np.array([uid in top_ids for uid in histograms.user_ids])

    _write_group_averages(out / "rating_distributions.csv", histograms.rating, flagged)
    _write_group_averages(out / "temporal_distributions.csv", histograms.temporal, flagged)

    rng_draws = args.posterior_draws
    star_values = np.arange(1, histograms.num_stars + 1, dtype=float)
    with open(out / "posterior_mean_rating_samples.csv", "w", encoding="utf-8", newline="") as f:
        f.write("user_id,draw,posterior_mean_rating\n")
        for r in records[: args.top]:
            i = model.user_ids.index(r.user_id)
            rng = score_mod._user_rng(args.seed, r.user_id, score_mod.RATING_SIDE)
            samples = kernels.sample_dirichlet_many(model.posterior_rating[i], rng_draws, rng)
            means = samples @ star_values
            for j, v in enumerate(means):
                f.write(f"{r.user_id},{j},{float(v)!r}\n")
    _echo_config(args, str(out / "plots"), {"top": args.top})
    print(f"exported plot data for top {args.top} users -> {out}")
    return EXIT_OK


def _write_group_averages(path, counts: np.ndarray, flagged: np.ndarray) -> None:
    """Average of per-user normalized histograms, flagged group vs the rest."""
    totals = counts.sum(axis=1, keepdims=True)
    dists = np.divide(counts, totals, out=np.zeros_like(counts, dtype=float), where=totals > 0)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("group," + ",".join(f"bin_{i}" for i in range(counts.shape[1])) + "\n")
        for name, mask in (("flagged", flagged), ("rest", ~flagged)):
            avg = dists[mask].mean(axis=0) if mask.any() else np.zeros(counts.shape[1])
            f.write(name + "," + ",".join(repr(float(v)) for v in avg) + "\n")


_COMMANDS = {
    "fit": _cmd_fit,
    "score": _cmd_score,
    "rank": _cmd_rank,
    "simulate": _cmd_simulate,
    "export-plots": _cmd_export_plots,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error code={EXIT_USAGE} kind=usage msg={exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error code={EXIT_DATA} kind=data msg={exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateModelError, DomainError, FloatingPointError) as exc:
        print(f"error code={EXIT_NUMERIC} kind=numeric msg={exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error code={EXIT_USAGE} kind=usage msg={exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
