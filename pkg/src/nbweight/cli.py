"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Outputs land next to a JSON run manifest recording the resolved
configuration, seed, tool version and SHA-256 digests of the inputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (PRESETS, NoiseMode, PointStatus, generate, load_csv, load_domain, preset,
                      write_csv)
from .errors import DataError, NumericalError
from .experiments import (ScoreWeighting, bias_variance, compare_bias_variance, grid_search,
                          paired_evaluation, prepare)
from .knn import neighborhoods, write_neighborhoods_csv
from .scoring import read_scores_csv, score_dataset, write_scores_csv
from .trainer import TrainConfig, evaluate, save_model, train
from .weighting import (GROUP_NAMES, DEFAULT_WEIGHT_GRID, WeightMapConfig, default_beta,
                        group_weights, logistic_weight, random_groups, read_weights_csv,
                        split_groups, write_weights_csv)

OUTPUT_DIR_ENV = "NBWEIGHT_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / name


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path: Path, command: str, args: argparse.Namespace, inputs, outputs) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("command", "func")}
    manifest = {
        "tool": "nbweight",
        "version": __version__,
        "subcommand": command,
        "seed": getattr(args, "seed", None),
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _sidecar(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _out_dir(args) -> Path:
    out = Path(args.out_dir) if args.out_dir else _default_out(args.command)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# flag groups
# --------------------------------------------------------------------------


def _add_domain_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS, help="built-in synthetic domain")
    src.add_argument("--domain-config", type=Path, help="JSON domain description (see README)")
    p.add_argument("--noise", choices=("posterior", "boundary-flip"),
                   help="override the domain's label-noise mode")
    p.add_argument("--flip-rate", type=float, help="boundary-flip peak flip probability")
    p.add_argument("--flip-bandwidth", type=float, help="boundary-flip posterior-margin bandwidth")


def _add_input_flags(p):
    p.add_argument("--input", type=Path, required=True, help="CSV file with a header row")
    p.add_argument("--label-col", required=True, help="name of the label column")
    p.add_argument("--k-classes", type=int, help="declared class count (default: labels found)")


def _add_knn_flags(p):
    p.add_argument("--k", type=int, default=5, help="neighborhood size including the point (default 5)")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean",
                   help="distance metric (default euclidean)")


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs, help=f"training epochs (default {d.epochs})")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help=f"mini-batch size (default {d.batch_size})")
    p.add_argument("--lr", type=float, default=d.learning_rate, help=f"learning rate (default {d.learning_rate})")
    p.add_argument("--hidden", type=int, default=d.hidden, help=f"hidden width (default {d.hidden})")
    p.add_argument("--activation", choices=("relu", "tanh"), default=d.activation, help="hidden activation")
    p.add_argument("--renormalize", action="store_true",
                   help="divide the batch loss by the weight total instead of the sample count")


def _add_weight_map_flags(p):
    d = WeightMapConfig()
    p.add_argument("--alpha", type=float, help=f"logistic steepness (default {d.alpha})")
    p.add_argument("--beta", help=f"logistic center, a number or 'median' (default {d.beta})")
    p.add_argument("--gamma", type=float, help=f"weight range (default {d.gamma})")
    p.add_argument("--eta", type=float, help=f"weight floor (default {d.eta})")


def _add_split_flags(p):
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="held-out fraction, stratified by class (default 0.2)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV}/<command>)")


def _train_config(args, seed=0) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       hidden=args.hidden, seed=seed, activation=args.activation,
                       renormalize=args.renormalize)


def _weight_map(args, scores=None) -> WeightMapConfig:
    d = WeightMapConfig()
    beta = d.beta
    if args.beta is not None:
        if args.beta == "median":
            if scores is None:
                raise UsageError("--beta median needs scores")
            beta = default_beta(scores)
        else:
            try:
                beta = float(args.beta)
            except ValueError:
                raise UsageError(f"--beta must be a number or 'median', got {args.beta!r}") from None
    return WeightMapConfig(alpha=d.alpha if args.alpha is None else args.alpha, beta=beta,
                           gamma=d.gamma if args.gamma is None else args.gamma,
                           eta=d.eta if args.eta is None else args.eta)


def _domain(args):
    dom = preset(args.preset) if args.preset else load_domain(args.domain_config)
    if args.noise or args.flip_rate is not None or args.flip_bandwidth is not None:
        kind = args.noise or dom.noise.kind
        if kind == "posterior" and (args.flip_rate is not None or args.flip_bandwidth is not None):
            raise UsageError("--flip-rate/--flip-bandwidth require boundary-flip noise")
        rate = dom.noise.rate if args.flip_rate is None else args.flip_rate
        bw = dom.noise.bandwidth if args.flip_bandwidth is None else args.flip_bandwidth
        dom = dom.with_noise(NoiseMode(kind, rate, bw) if kind == "boundary-flip" else NoiseMode())
    return dom


def _domain_inputs(args):
    return [args.domain_config] if getattr(args, "domain_config", None) else []


def _grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    dom = _domain(args)
    out = Path(args.out) if args.out else _default_out("data.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data, post, status = generate(dom, args.n, args.seed)
    write_csv(data, out, label_column=args.label_col)
    truth = out.with_name(out.stem + ".truth.csv")
    with truth.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *(f"posterior_{c}" for c in range(dom.class_count)), "status"])
        for i, row, st in zip(data.ids, post, status):
            w.writerow([int(i), *(repr(float(v)) for v in row), st.value])
    (out.with_name(out.stem + ".domain.json")).write_text(
        json.dumps(dom.to_dict(), indent=1) + "\n", encoding="utf-8")
    _write_manifest(_sidecar(out), "gen-data", args, _domain_inputs(args), [out, truth])
    n_unc = sum(s is PointStatus.UNCERTAIN for s in status)
    print(f"wrote {data.n} samples ({n_unc} uncertain) to {out}")


def cmd_score(args) -> None:
    data = load_csv(args.input, args.label_col, args.k_classes)
    out = Path(args.out) if args.out else _default_out("scores.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    exclude = None
    if args.exclude_ids:
        exclude = [int(line) for line in args.exclude_ids.read_text().split() if line.strip()]
    scores = score_dataset(data, args.k, args.metric, exclude_ids=exclude)
    write_scores_csv(scores, data, out)
    outputs = [out]
    if args.neighbors_out:
        keep = data if exclude is None else data.subset(~np.isin(data.ids, exclude))
        write_neighborhoods_csv(neighborhoods(keep, args.k, args.metric), args.neighbors_out)
        outputs.append(Path(args.neighbors_out))
    inputs = [args.input] + ([args.exclude_ids] if args.exclude_ids else [])
    _write_manifest(_sidecar(out), "score", args, inputs, outputs)
    n_zero = sum(s.score == 0 for s in scores)
    print(f"scored {len(scores)} samples ({n_zero} zero scores) -> {out}")


def cmd_weight(args) -> None:
    logistic_flags = [f for f in ("alpha", "beta", "gamma", "eta") if getattr(args, f) is not None]
    group_flags = [f for f in ("g0", "g1", "g2") if getattr(args, f) is not None]
    if args.mode == "logistic" and (group_flags or args.assignment != "nb"):
        raise UsageError(f"--mode logistic conflicts with --{', --'.join(group_flags) or 'assignment'}")
    if args.mode == "groups" and logistic_flags:
        raise UsageError(f"--mode groups conflicts with --{', --'.join(logistic_flags)}")
    scores = read_scores_csv(args.scores)
    if not scores:
        raise DataError(f"{args.scores}: no scores")
    ids = [s.sample_id for s in scores]
    values = {s.sample_id: s.score for s in scores}
    out = Path(args.out) if args.out else _default_out("weights.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mode == "logistic":
        cfg = _weight_map(args, list(values.values()))
        rows = [(i, values[i], "", logistic_weight(values[i], cfg)) for i in ids]
    else:
        w = (1.0 if args.g0 is None else args.g0, 1.0 if args.g1 is None else args.g1,
             1.0 if args.g2 is None else args.g2)
        split = split_groups(values)
        if args.assignment == "random":
            split = random_groups(split.sizes, ids, args.seed)
        wmap = group_weights(split, w, ids, grid=args.grid)
        groups = split.group_of()
        rows = [(i, values[i], GROUP_NAMES[groups[i]], wmap[i]) for i in ids]
    write_weights_csv(rows, out)
    _write_manifest(_sidecar(out), "weight", args, [args.scores], [out])
    print(f"wrote {len(rows)} weights -> {out}")


def cmd_train(args) -> None:
    data = load_csv(args.input, args.label_col, args.k_classes)
    weights = read_weights_csv(args.weights) if args.weights else np.ones(data.n)
    eval_data = None
    if args.eval_input:
        eval_data = load_csv(args.eval_input, args.label_col, data.class_count)
    cfg = _train_config(args, args.seed)
    model = train(data, weights, cfg)
    out = Path(args.out) if args.out else _default_out("model.npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    metrics = {"train_accuracy": model.accuracy, "loss_trace": list(model.loss_trace), "seed": args.seed}
    if eval_data is not None:
        ev = evaluate(model, eval_data)
        metrics["eval_accuracy"] = ev.accuracy
        metrics["confusion"] = ev.confusion.tolist()
    metrics_path = out.with_name(out.stem + ".metrics.json")
    metrics_path.write_text(json.dumps(metrics, indent=1) + "\n", encoding="utf-8")
    inputs = [args.input] + [p for p in (args.weights, args.eval_input) if p]
    _write_manifest(_sidecar(out), "train", args, inputs, [out, metrics_path])
    msg = f"train accuracy {model.accuracy:.4f}"
    if eval_data is not None:
        msg += f", eval accuracy {metrics['eval_accuracy']:.4f}"
    print(f"{msg} -> {out}")


def cmd_grid_search(args) -> None:
    data = load_csv(args.input, args.label_col, args.k_classes)
    out = _out_dir(args)
    train_set, test_set, scores = prepare(data, args.k, args.metric, args.test_fraction, args.seed)
    report = grid_search(train_set, test_set, scores, args.grid, args.n_seeds,
                         _train_config(args), args.seed, args.jobs)
    report.write(out)
    _write_manifest(out / "manifest.json", "grid-search", args, [args.input],
                    [out / "grid_search.json", out / "grid_search.csv"])
    best = report.records[0]
    print(f"baseline {report.baseline_mean:.4f}; best {best.mode} "
          f"{'/'.join(map(str, best.weights))} {best.delta:+.4f} -> {out}")


def cmd_paired_eval(args) -> None:
    data = load_csv(args.input, args.label_col, args.k_classes)
    out = _out_dir(args)
    train_set, test_set, scores = prepare(data, args.k, args.metric, args.test_fraction, args.seed)
    wcfg = _weight_map(args, [s.score for s in scores])
    report = paired_evaluation(train_set, test_set, args.n_pairs, _train_config(args), scores=scores,
                               weight_map=wcfg, master_seed=args.seed, n_boot=args.n_boot, jobs=args.jobs)
    report.write(out)
    _write_manifest(out / "manifest.json", "paired-eval", args, [args.input],
                    [out / "paired_eval.json", out / "paired_runs.csv", out / "histogram.csv"])
    print(f"baseline {report.baseline_mean:.4f} (sd {report.baseline_var ** 0.5:.4f}), "
          f"weighted {report.weighted_mean:.4f} (sd {report.weighted_var ** 0.5:.4f}) -> {out}")


def cmd_bias_var(args) -> None:
    dom = _domain(args)
    out = _out_dir(args)
    cfg = _train_config(args)
    if args.compare:
        wcfg = _weight_map(args) if args.beta != "median" else WeightMapConfig()
        weighting = ScoreWeighting(args.k, args.metric, wcfg, median_beta=args.beta == "median")
        result = compare_bias_variance(dom, cfg, args.draws, args.n_train, args.n_test, weighting,
                                       args.seed, args.jobs)
        summary = (f"baseline bias {result.baseline.bias:.5f} var {result.baseline.variance:.5f}; "
                   f"weighted bias {result.weighted.bias:.5f} var {result.weighted.variance:.5f}")
    else:
        result = bias_variance(dom, cfg, args.draws, args.n_train, args.n_test, args.seed, None, args.jobs)
        summary = f"bias {result.bias:.5f} variance {result.variance:.5f} mse {result.mse:.5f}"
    report = out / "bias_variance.json"
    report.write_text(json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8")
    _write_manifest(out / "manifest.json", "bias-var", args, _domain_inputs(args), [report])
    print(f"{summary} -> {out}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nbweight", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nbweight {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="sample a synthetic dataset with known posteriors")
    _add_domain_flags(p)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--label-col", default="y", help="label column name (default y)")
    p.add_argument("--out", help=f"output CSV (default ${OUTPUT_DIR_ENV}/data.csv)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("score", help="neighborhood uncertainty score per sample")
    _add_input_flags(p)
    _add_knn_flags(p)
    p.add_argument("--exclude-ids", type=Path, help="file of whitespace-separated ids never used as neighbors")
    p.add_argument("--neighbors-out", help="optional neighborhood dump CSV")
    p.add_argument("--out", help=f"score CSV (default ${OUTPUT_DIR_ENV}/scores.csv)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("weight", help="convert scores to sample weights")
    p.add_argument("--scores", type=Path, required=True, help="score CSV from 'score'")
    p.add_argument("--mode", choices=("logistic", "groups"), required=True, help="weighting scheme")
    _add_weight_map_flags(p)
    p.add_argument("--g0", type=float, help="weight of zero-score group (groups mode, default 1.0)")
    p.add_argument("--g1", type=float, help="weight of low-score half (groups mode, default 1.0)")
    p.add_argument("--g2", type=float, help="weight of high-score half (groups mode, default 1.0)")
    p.add_argument("--grid", type=_grid, default=DEFAULT_WEIGHT_GRID,
                   help="allowed group weights, comma-separated (default 0.25,0.6,1.0,1.5,2.0)")
    p.add_argument("--assignment", choices=("nb", "random"), default="nb",
                   help="score-based groups or a size-matched random control (groups mode)")
    p.add_argument("--seed", type=int, default=0, help="seed for random assignment (default 0)")
    p.add_argument("--out", help=f"weight CSV (default ${OUTPUT_DIR_ENV}/weights.csv)")
    p.set_defaults(func=cmd_weight)

    p = sub.add_parser("train", help="train the weighted MLP")
    _add_input_flags(p)
    p.add_argument("--weights", type=Path, help="weight CSV from 'weight' (default all 1.0)")
    p.add_argument("--eval-input", type=Path, help="held-out CSV to report accuracy on")
    p.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
    _add_train_flags(p)
    p.add_argument("--out", help=f"checkpoint path, .npz or .json (default ${OUTPUT_DIR_ENV}/model.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid-search", help="group-weight grid search, score-based vs random groups")
    _add_input_flags(p)
    _add_knn_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.add_argument("--grid", type=_grid, default=DEFAULT_WEIGHT_GRID,
                   help="group weights, comma-separated (default 0.25,0.6,1.0,1.5,2.0)")
    p.add_argument("--n-seeds", type=int, default=10, help="runs per combination (default 10)")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("paired-eval", help="baseline vs logistic-weighted models over paired seeds")
    _add_input_flags(p)
    _add_knn_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    _add_weight_map_flags(p)
    p.add_argument("--n-pairs", type=int, default=1000, help="number of seed pairs (default 1000)")
    p.add_argument("--n-boot", type=int, default=10_000, help="bootstrap resamples (default 10000)")
    p.set_defaults(func=cmd_paired_eval)

    p = sub.add_parser("bias-var", help="Monte Carlo bias-variance decomposition on a synthetic domain")
    _add_domain_flags(p)
    _add_knn_flags(p)
    _add_train_flags(p)
    _add_weight_map_flags(p)
    p.add_argument("--draws", type=int, default=10, help="independent dataset draws R (default 10)")
    p.add_argument("--n-train", type=int, default=500, help="samples per draw (default 500)")
    p.add_argument("--n-test", type=int, default=500, help="fixed test points (default 500)")
    p.add_argument("--compare", action="store_true", help="also run the score-weighted arm on the same draws")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV}/bias-var)")
    p.set_defaults(func=cmd_bias_var)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
