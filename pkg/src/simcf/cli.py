"""Command-line experiment runner.

Subcommands: ``prepare`` (tuning split), ``train-eval``, ``grid``, ``synth``,
``bench``. All outputs are CSV with a header row; every command is
reproducible given identical flags and seed (timing columns excepted).

Exit codes: 0 success, 1 validation error, 2 I/O error.

A config file (``--config``) holds ``key = value`` lines mirroring the long
flag names; explicit flags override file values. Presets bundle the
published final hyperparameters and refuse silent modification: overriding
a preset key requires ``--allow-preset-override``.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path

import numpy as np

from . import data as datamod
from .errors import ParseError, SimcfError, ValidationError
from .evaluation import evaluate, popularity_scores
from .models import StaticScores, predictive_factor_to_dims, save_params
from .retrieval import bench_retrieval
from .synthetic import SynthConfig, run_synth
from .training import AdamConfig, SgdConfig, train_learned, train_mf

PRESETS: dict[str, dict] = {
    # final recommender settings (256-epoch budget)
    "movielens-final": {"eta": 0.002, "m": 8, "reg": 0.005, "epochs": 256},
    "pinterest-final": {"eta": 0.007, "m": 10, "reg": 0.01, "epochs": 256},
    # first-pass tuning grid (reduced epoch budget, no regularization)
    "coarse-grid": {"eta": "0.001,0.003,0.01", "m": "4,8,16", "reg": "0", "epochs": 128},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; usage errors are 1
        raise ValidationError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_csv(path: str | Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[col]) for col in header) + "\n")


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(line_no, f"expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_settings(args, parser_defaults: dict, typed: dict):
    """Resolve defaults < preset < config file < explicit flags.

    Preset keys may only be changed (by flag or file) together with
    --allow-preset-override.
    """
    config_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    preset = {}
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ValidationError(
                f"unknown preset {args.preset!r}; choices: {', '.join(sorted(PRESETS))}"
            )
        preset = PRESETS[args.preset]
    for key, caster in typed.items():
        explicit = getattr(args, key) is not None
        from_file = key in config_values
        if key in preset:
            if (explicit or from_file) and not args.allow_preset_override:
                raise ValidationError(
                    f"--{key.replace('_', '-')} conflicts with preset {args.preset!r}; "
                    "pass --allow-preset-override to change a preset value"
                )
        if explicit:
            continue
        if from_file:
            setattr(args, key, caster(config_values[key]))
        elif key in preset:
            value = preset[key]
            setattr(args, key, caster(value) if isinstance(value, str) else value)
        else:
            setattr(args, key, parser_defaults[key])


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok != ""]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in str(text).split(",") if tok != ""]


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare(args) -> int:
    corpus = datamod.load_ratings(args.ratings)
    train, heldout = datamod.make_tuning_split(corpus)
    eval_set = datamod.sample_eval_negatives(train, heldout, args.n_neg, args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{args.name}.train.rating", "w", encoding="utf-8") as fh:
        datamod.write_ratings(train, fh)
    with open(out_dir / f"{args.name}.test.rating", "w", encoding="utf-8") as fh:
        for user, item in heldout:
            ts = int(corpus.timestamps[corpus.indptr[user + 1] - 1])
            fh.write(f"{user}\t{item}\t1\t{ts}\n")
    with open(out_dir / f"{args.name}.test.negative", "w", encoding="utf-8") as fh:
        datamod.write_negatives(eval_set, fh)
    print(
        f"wrote {args.name}.train.rating ({train.num_interactions} interactions), "
        f"{args.name}.test.rating ({len(heldout)} cases), "
        f"{args.name}.test.negative ({args.n_neg} negatives/case) to {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# train-eval


def _load_train_and_eval(train_path, negatives_path):
    eval_set = datamod.load_negatives(negatives_path)
    max_user = max((c.user for c in eval_set.cases), default=-1)
    max_item = max(
        (max(c.positive, int(c.negatives.max()) if len(c.negatives) else -1)
         for c in eval_set.cases),
        default=-1,
    )
    probe = datamod.load_ratings(train_path)
    corpus = (
        probe
        if probe.num_users > max_user and probe.num_items > max_item
        else datamod.load_ratings(
            train_path,
            num_users=max(probe.num_users, max_user + 1),
            num_items=max(probe.num_items, max_item + 1),
        )
    )
    return corpus, eval_set


def _resolve_dim(args) -> int:
    if (args.d is None) == (args.factor is None):
        raise ValidationError("exactly one of --d / --factor must be given")
    if args.factor is not None:
        return predictive_factor_to_dims(args.factor, args.model)
    return args.d


def _train_one(payload: dict) -> dict:
    """One seeded train+evaluate cycle (worker-pool entry point)."""
    corpus = payload["corpus"]
    eval_set = payload["eval_set"]
    cfg = SgdConfig(
        eta=payload["eta"], lam=payload["reg"], m=payload["m"],
        epochs=payload["epochs"], init_std=payload["init_std"], seed=payload["seed"],
    )
    epoch_rows: list[dict] = []

    def on_epoch(epoch, loss):
        epoch_rows.append({"seed": cfg.seed, "epoch": epoch, "mean_train_loss": loss})

    if payload["model"] == "mf":
        params = train_mf(corpus, cfg, payload["d"], on_epoch=on_epoch)
    else:
        params = train_learned(
            corpus, payload["model"], cfg, AdamConfig(lr=payload["adam_lr"]),
            payload["d"], on_epoch=on_epoch,
        )
    result = evaluate(params, eval_set, k=payload["k"])
    return {
        "hr": result.hr,
        "ndcg": result.ndcg,
        "seed": cfg.seed,
        "params": params if payload["keep_params"] else None,
        "epoch_rows": epoch_rows,
    }


def _run_jobs(payloads: list[dict], workers: int) -> list[dict]:
    if workers <= 1 or len(payloads) <= 1:
        return [_train_one(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_one, payloads))


def cmd_train_eval(args) -> int:
    corpus, eval_set = _load_train_and_eval(args.train, args.negatives)
    d = _resolve_dim(args)
    dataset = args.dataset_name or Path(args.train).name.split(".")[0]

    payloads = [
        {
            "corpus": corpus, "eval_set": eval_set, "model": args.model, "d": d,
            "eta": args.eta, "m": args.m, "reg": args.reg, "epochs": args.epochs,
            "init_std": args.init_std, "adam_lr": args.adam_lr, "k": args.k,
            "seed": args.seed + r, "keep_params": bool(args.save_model),
        }
        for r in range(args.repeats)
    ]
    results = _run_jobs(payloads, args.workers)
    results.sort(key=lambda r: r["seed"])

    metric_cols = [f"hr@{args.k}", f"ndcg@{args.k}"]
    header = ["model", "dataset", "d", "seed", "epoch"] + metric_cols
    rows = [
        {
            "model": args.model, "dataset": dataset, "d": d, "seed": res["seed"],
            "epoch": args.epochs, metric_cols[0]: res["hr"], metric_cols[1]: res["ndcg"],
        }
        for res in results
    ]
    rows.append(
        {
            "model": args.model, "dataset": dataset, "d": d, "seed": "mean",
            "epoch": args.epochs,
            metric_cols[0]: float(np.mean([r["hr"] for r in results])),
            metric_cols[1]: float(np.mean([r["ndcg"] for r in results])),
        }
    )
    write_csv(args.out, header, rows)

    if args.epoch_log:
        log_rows = [row for res in results for row in res["epoch_rows"]]
        write_csv(args.epoch_log, ["seed", "epoch", "mean_train_loss"], log_rows)
    if args.save_model:
        for res in results:
            path = Path(args.save_model)
            if args.repeats > 1:
                path = path.with_name(f"{path.stem}.seed{res['seed']}{path.suffix}")
            save_params(res["params"], path)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_popularity(args) -> int:
    corpus, eval_set = _load_train_and_eval(args.train, args.negatives)
    result = evaluate(StaticScores(popularity_scores(corpus)), eval_set, k=args.k)
    dataset = args.dataset_name or Path(args.train).name.split(".")[0]
    header = ["model", "dataset", "d", "seed", "epoch", f"hr@{args.k}", f"ndcg@{args.k}"]
    rows = [{
        "model": "popularity", "dataset": dataset, "d": 0, "seed": "-", "epoch": 0,
        f"hr@{args.k}": result.hr, f"ndcg@{args.k}": result.ndcg,
    }]
    write_csv(args.out, header, rows)
    print(f"popularity: hr@{args.k}={result.hr:.4f} ndcg@{args.k}={result.ndcg:.4f}")
    return 0


# ---------------------------------------------------------------------------
# grid


def cmd_grid(args) -> int:
    corpus, eval_set = _load_train_and_eval(args.train, args.negatives)
    d = _resolve_dim(args)
    dataset = args.dataset_name or Path(args.train).name.split(".")[0]

    etas = _float_list(args.eta)
    ms = _int_list(args.m)
    regs = _float_list(args.reg)
    if not etas or not ms or not regs:
        raise ValidationError("all grids must be non-empty")

    payloads = [
        {
            "corpus": corpus, "eval_set": eval_set, "model": args.model, "d": d,
            "eta": eta, "m": m, "reg": reg, "epochs": args.epochs,
            "init_std": args.init_std, "adam_lr": args.adam_lr, "k": args.k,
            "seed": args.seed, "keep_params": False,
        }
        for eta, m, reg in product(etas, ms, regs)
    ]
    results = _run_jobs(payloads, args.workers)

    metric_cols = [f"hr@{args.k}", f"ndcg@{args.k}"]
    header = ["model", "dataset", "d", "seed", "epoch", "eta", "m", "reg"] + metric_cols
    rows = [
        {
            "model": args.model, "dataset": dataset, "d": d, "seed": args.seed,
            "epoch": args.epochs, "eta": payload["eta"], "m": payload["m"],
            "reg": payload["reg"], metric_cols[0]: res["hr"], metric_cols[1]: res["ndcg"],
        }
        for payload, res in zip(payloads, results)
    ]
    rows.sort(key=lambda r: (-r[metric_cols[0]], -r[metric_cols[1]], r["eta"], r["m"], r["reg"]))
    write_csv(args.out, header, rows)
    print(f"wrote {len(rows)} grid cells to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# synth / bench


def cmd_synth(args) -> int:
    header = [
        "d", "M", "N", "h", "repeat", "train_pairs",
        "rmse_mlp_observed", "rmse_mlp_fresh", "rmse_dot_empirical",
        "approx_err_observed", "approx_err_fresh",
    ]
    rows: list[dict] = []
    for d in _int_list(args.d):
        for factor in _float_list(args.h_factor):
            h = max(1, int(round(factor * d)))
            for m_users in _int_list(args.M):
                config = SynthConfig(
                    d=d, M=m_users, N=args.N, h=h,
                    samples_per_user=args.samples_per_user, repeats=args.repeats,
                    seed=args.seed, epochs=args.epochs, batch_size=args.batch_size,
                    adam=AdamConfig(lr=args.adam_lr),
                )
                rows.extend(run_synth(config))
    write_csv(args.out, header, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_bench(args) -> int:
    rows = bench_retrieval(_int_list(args.d), args.n, args.k, args.trials, seed=args.seed)
    write_csv(args.out, ["head", "d", "n", "k", "median_us_per_query"], rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_train_flags(sub, with_grid: bool):
    sub.add_argument("--train", required=True, help="training *.rating file")
    sub.add_argument("--negatives", required=True, help="evaluation *.negative file")
    sub.add_argument("--model", choices=["mf", "gmf", "mlp", "neumf"], default="mf")
    sub.add_argument("--d", type=int, default=None, help="embedding dimension")
    sub.add_argument("--factor", type=int, default=None,
                     help="predictive factor (alternative sizing; maps to d)")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--init-std", dest="init_std", type=float, default=None)
    sub.add_argument("--adam-lr", dest="adam_lr", type=float, default=None,
                     help="Adam learning rate for the learned heads")
    sub.add_argument("--k", type=int, default=None, help="ranking cutoff")
    sub.add_argument("--dataset-name", dest="dataset_name", default=None)
    sub.add_argument("--preset", default=None)
    sub.add_argument("--allow-preset-override", action="store_true")
    sub.add_argument("--config", default=None, help="key = value settings file")
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", required=True, help="results CSV path")
    if with_grid:
        sub.add_argument("--eta", default=None, help="comma-separated learning rates")
        sub.add_argument("--m", default=None, help="comma-separated negative counts")
        sub.add_argument("--reg", default=None, help="comma-separated L2 strengths")
    else:
        sub.add_argument("--eta", type=float, default=None)
        sub.add_argument("--m", type=int, default=None)
        sub.add_argument("--reg", type=float, default=None)


_TRAIN_DEFAULTS = {
    "eta": 0.002, "m": 8, "reg": 0.0, "epochs": 128, "init_std": 0.1,
    "adam_lr": 0.001, "k": 10, "seed": 0, "workers": 1, "repeats": 1,
}
_GRID_DEFAULTS = {
    "eta": "0.001,0.003,0.01", "m": "4,8,16", "reg": "0", "epochs": 128,
    "init_std": 0.1, "adam_lr": 0.001, "k": 10, "seed": 0, "workers": 1,
}


def _cast_like(default):
    if isinstance(default, int) and not isinstance(default, bool):
        return int
    if isinstance(default, float):
        return float
    return str


def build_parser() -> _Parser:
    parser = _Parser(prog="simcf", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    prep = subs.add_parser("prepare", help="build a leave-one-out tuning split")
    prep.add_argument("--ratings", required=True)
    prep.add_argument("--out", required=True, help="output directory")
    prep.add_argument("--name", default="tuning")
    prep.add_argument("--n-neg", dest="n_neg", type=int, default=100)
    prep.add_argument("--seed", type=int, default=0)
    prep.set_defaults(func=cmd_prepare, _defaults={}, _typed={})

    te = subs.add_parser("train-eval", help="seeded train+evaluate repeats")
    _add_train_flags(te, with_grid=False)
    te.add_argument("--repeats", type=int, default=None)
    te.add_argument("--epoch-log", dest="epoch_log", default=None,
                    help="per-epoch loss CSV path")
    te.add_argument("--save-model", dest="save_model", default=None,
                    help="checkpoint path (per-repeat suffix added)")
    te.set_defaults(func=cmd_train_eval, _defaults=_TRAIN_DEFAULTS,
                    _typed={k: _cast_like(v) for k, v in _TRAIN_DEFAULTS.items()})

    pop = subs.add_parser("popularity", help="evaluate the popularity baseline")
    pop.add_argument("--train", required=True)
    pop.add_argument("--negatives", required=True)
    pop.add_argument("--k", type=int, default=10)
    pop.add_argument("--dataset-name", dest="dataset_name", default=None)
    pop.add_argument("--out", required=True)
    pop.set_defaults(func=cmd_popularity, _defaults={}, _typed={})

    grid = subs.add_parser("grid", help="hyperparameter grid on the tuning split")
    _add_train_flags(grid, with_grid=True)
    grid.set_defaults(func=cmd_grid, _defaults=_GRID_DEFAULTS,
                      _typed={k: _cast_like(v) for k, v in _GRID_DEFAULTS.items()})

    synth = subs.add_parser("synth", help="dot-product approximation study")
    synth.add_argument("--d", default="8,16,32,64", help="comma-separated dimensions")
    synth.add_argument("--h-factor", dest="h_factor", default="1",
                       help="hidden width as a multiple of d (e.g. 0.5,1,2)")
    synth.add_argument("--M", default="4000", help="comma-separated user counts")
    synth.add_argument("--N", type=int, default=None, help="item count (default M)")
    synth.add_argument("--samples-per-user", dest="samples_per_user", type=int, default=100)
    synth.add_argument("--repeats", type=int, default=5)
    synth.add_argument("--epochs", type=int, default=50)
    synth.add_argument("--batch-size", dest="batch_size", type=int, default=512)
    synth.add_argument("--adam-lr", dest="adam_lr", type=float, default=0.001)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth, _defaults={}, _typed={})

    bench = subs.add_parser("bench", help="retrieval latency benchmark")
    bench.add_argument("--d", default="16,32,64,128")
    bench.add_argument("--n", type=int, default=5000, help="catalog size")
    bench.add_argument("--k", type=int, default=10)
    bench.add_argument("--trials", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_bench, _defaults={}, _typed={})

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args._typed:
            _merge_settings(args, args._defaults, args._typed)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
