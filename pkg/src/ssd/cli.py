"""Command-line entry point: ``ssd <subcommand> ...``.

All randomness flows from ``--seed``; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import detector as det
from . import experiments as ex
from . import persist
from .data import SynthSpec, atomic_write, generate, load_features, partition, save_features
from .losses import ToyEncoder
from .metrics import EvalReport, evaluate_scores

PRESETS = {
    "anisotropic-train": lambda seed: ex.anisotropic_specs(seed)[0],
    "anisotropic-test": lambda seed: ex.anisotropic_specs(seed)[1],
    "anisotropic-ood": lambda seed: ex.anisotropic_specs(seed)[2],
    "near-train": lambda seed: ex.near_ood_specs(seed)[0],
    "near-test": lambda seed: ex.near_ood_specs(seed)[1],
    "near-ood": lambda seed: ex.near_ood_specs(seed)[2],
    "near-shots": lambda seed: ex.near_ood_specs(seed)[3],
}


class CliError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {value}")
    return value


def _open_fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {value}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be >= 1")
    return values


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _load_scorer(path):
    obj = persist.load(path)
    if isinstance(obj, det.DetectorModel):
        return obj, lambda x: det.ssd_scores(obj, x)
    if isinstance(obj, det.FewShotModel):
        return obj, lambda x: det.ssd_k_scores(obj, x)
    raise CliError(f"{path} holds a calibration, not a model")


def _scores_tsv(scores: np.ndarray) -> str:
    return "row\tscore\n" + "".join(f"{i}\t{float(s)!r}\n" for i, s in enumerate(scores))


def _read_scores_tsv(path) -> np.ndarray:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("row"):
            continue
        parts = line.split("\t")
        try:
            values.append(float(parts[-1]))
        except ValueError:
            raise CliError(f"{path}: line {lineno}: cannot parse score {parts[-1]!r}")
    return np.array(values)


def _report_text(report: EvalReport, tsv: bool) -> str:
    if tsv:
        return report.to_tsv() + "\n"
    return report.to_json() + "\n"


def _sweep_tsv(key: str, rows) -> str:
    lines = [f"{key}\t{EvalReport.TSV_HEADER}"]
    lines += [f"{k}\t{r.to_tsv()}" for k, r in rows]
    return "\n".join(lines) + "\n"


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> None:
    if args.preset:
        spec = PRESETS[args.preset](args.seed)
    elif args.spec:
        spec = SynthSpec.from_json(Path(args.spec).read_text())
    else:
        var = _float_list(args.variances)
        spec = SynthSpec(
            kind=args.kind, d=args.d, n=args.n, components=args.components, seed=args.seed,
            variances=var[0] if len(var) == 1 else var, spread=args.spread, shift=args.shift,
            shift_dims=[int(v) for v in args.shift_dims.split(",")] if args.shift_dims else [],
        )
    if args.n_override is not None:
        spec.n = args.n_override
    x, labels = generate(spec)
    save_features(x, args.out, args.format)
    if args.labels_out:
        atomic_write(args.labels_out, "".join(f"{int(v)}\n" for v in labels))


def cmd_fit(args) -> None:
    x = load_features(args.features)
    if args.split is not None:
        x, cal = partition(x, args.split, args.seed)
        if args.cal_out:
            save_features(cal, args.cal_out, "binary" if args.cal_out.endswith(".ssdf") else "csv")
    model = det.fit(x, args.clusters, args.seed, normalize=not args.no_normalize)
    persist.save(model, args.out)


def cmd_calibrate(args) -> None:
    _, scorer = _load_scorer(args.model)
    if args.features:
        cal = load_features(args.features)
    elif args.in_features:
        _, cal = partition(load_features(args.in_features), args.split, args.seed)
    else:
        raise CliError("calibrate needs --features or --in")
    calibration = det.calibrate(scorer(cal), args.tpr)
    _emit(persist.dumps(persist.calibration_to_dict(calibration)), args.out)


def cmd_score(args) -> None:
    _, scorer = _load_scorer(args.model)
    _emit(_scores_tsv(scorer(load_features(args.features))), args.out)


def cmd_classify(args) -> None:
    cal = persist.load(args.calibration)
    if not isinstance(cal, det.Calibration):
        raise CliError(f"{args.calibration} is not a calibration document")
    scores = _read_scores_tsv(args.scores)
    flags = det.classify(scores, cal)
    body = "".join(
        f"{i}\t{float(s)!r}\t{'true' if f else 'false'}\n" for i, (s, f) in enumerate(zip(scores, flags))
    )
    _emit("row\tscore\toutlier\n" + body, args.out)


def cmd_evaluate(args) -> None:
    _, scorer = _load_scorer(args.model)
    report = evaluate_scores(
        scorer(load_features(args.in_test)), scorer(load_features(args.ood_test)), args.tpr
    )
    _emit(_report_text(report, args.tsv), args.out)


def cmd_fewshot(args) -> None:
    x_in = load_features(args.in_features)
    shots = load_features(args.shots)
    if args.k is not None:
        if args.k > shots.shape[0]:
            raise CliError(f"--k {args.k} exceeds the {shots.shape[0]} shots available")
        shots = shots[: args.k]
    base = det.fit(x_in, 1, args.seed, normalize=not args.no_normalize)
    model = det.fewshot_fit(x_in, shots, args.augment, args.jitter, args.seed, in_model=base)
    if args.out:
        persist.save(model, args.out)
    if args.in_test and args.ood_test:
        t_in, t_ood = load_features(args.in_test), load_features(args.ood_test)
        rows = [
            ("ssd", evaluate_scores(det.ssd_scores(base, t_in), det.ssd_scores(base, t_ood), args.tpr)),
            ("ssd_k", evaluate_scores(det.ssd_k_scores(model, t_in), det.ssd_k_scores(model, t_ood), args.tpr)),
        ]
        _emit(_sweep_tsv("detector", rows), args.report)


def cmd_eigen_report(args) -> None:
    model = persist.load_model(args.model)
    report = det.eigen_discrimination_report(
        model, load_features(args.in_test), load_features(args.ood_test)
    )
    _emit(report.to_tsv(), args.out)


def cmd_train_toy(args) -> None:
    run = ex.toy_training(args.seed, args.steps, args.lr, args.tau)
    if args.trace:
        atomic_write(args.trace, "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(run.losses)))
    if args.encoder_out:
        atomic_write(args.encoder_out, json.dumps(run.encoder.to_dict()) + "\n")
    _emit(
        "encoder\tauroc\tloss\n"
        f"random\t{run.auroc_random!r}\t{run.losses[0]!r}\n"
        f"trained\t{run.auroc_trained!r}\t{run.losses[-1]!r}\n",
        args.out,
    )


def cmd_sweep_clusters(args) -> None:
    rows = ex.sweep_clusters(
        load_features(args.in_features), load_features(args.in_test), load_features(args.ood_test),
        args.clusters, args.seed, args.tpr, normalize=not args.no_normalize,
    )
    _emit(_sweep_tsv("clusters", rows), args.out)


def cmd_sweep_augment(args) -> None:
    shots = load_features(args.shots)
    if args.k is not None:
        shots = shots[: args.k]
    rows = ex.sweep_augment(
        load_features(args.in_features), shots, load_features(args.in_test),
        load_features(args.ood_test), args.augment, args.jitter, args.seed, args.tpr,
        normalize=not args.no_normalize,
    )
    _emit(_sweep_tsv("n_augment", rows), args.out)


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("synth", cmd_synth, "generate synthetic features")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--spec", help="JSON file with SynthSpec fields")
    p.add_argument("--kind", default="gmm", choices=["gmm", "shifted-gmm", "blobs2d"])
    p.add_argument("--d", type=_positive_int, default=2)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--n-override", type=int, help="replace n of a preset or spec file")
    p.add_argument("--components", type=_positive_int, default=1)
    p.add_argument("--variances", default="1.0", help="scalar or comma-separated diagonal")
    p.add_argument("--spread", type=float, default=4.0)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--shift-dims", default="", help="comma-separated eigendirection indices")
    p.add_argument("--format", choices=["csv", "binary"], default=None)
    p.add_argument("--labels-out")
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit a detector on in-distribution features")
    p.add_argument("--features", required=True)
    p.add_argument("--clusters", type=_positive_int, default=1)
    p.add_argument("--split", type=_open_fraction, help="hold out a calibration part first")
    p.add_argument("--cal-out", help="where to write the held-out calibration rows")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = add("calibrate", cmd_calibrate, "pick a threshold on calibration scores")
    p.add_argument("--model", required=True)
    p.add_argument("--features", help="calibration features")
    p.add_argument("--in", dest="in_features", help="in-distribution file to re-split")
    p.add_argument("--split", type=_open_fraction, default=0.9)
    p.add_argument("--tpr", type=_fraction, default=0.95)
    p.add_argument("--out")

    p = add("score", cmd_score, "score features with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out")

    p = add("classify", cmd_classify, "flag scores above a calibrated threshold")
    p.add_argument("--scores", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "AUROC / AUPR / FPR at TPR for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--in-test", required=True)
    p.add_argument("--ood-test", required=True)
    p.add_argument("--tpr", type=_fraction, default=0.95)
    p.add_argument("--tsv", action="store_true", help="one-line TSV instead of JSON")
    p.add_argument("--out")

    p = add("fewshot", cmd_fewshot, "fit a few-shot detector from OOD examples")
    p.add_argument("--in", dest="in_features", required=True)
    p.add_argument("--shots", required=True)
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--augment", type=_positive_int, default=10)
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--in-test")
    p.add_argument("--ood-test")
    p.add_argument("--tpr", type=_fraction, default=0.95)
    p.add_argument("--out", help="few-shot model file")
    p.add_argument("--report", help="evaluation TSV (stdout if omitted)")

    p = add("eigen-report", cmd_eigen_report, "per-eigenvector AUROC table")
    p.add_argument("--model", required=True)
    p.add_argument("--in-test", required=True)
    p.add_argument("--ood-test", required=True)
    p.add_argument("--out")

    p = add("train-toy", cmd_train_toy, "train the toy encoder and compare detection")
    p.add_argument("--steps", type=_positive_int, default=300)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--trace", help="loss trace CSV")
    p.add_argument("--encoder-out")
    p.add_argument("--out")

    p = add("sweep-clusters", cmd_sweep_clusters, "AUROC table over cluster counts")
    p.add_argument("--in", dest="in_features", required=True)
    p.add_argument("--in-test", required=True)
    p.add_argument("--ood-test", required=True)
    p.add_argument("--clusters", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--tpr", type=_fraction, default=0.95)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out")

    p = add("sweep-augment", cmd_sweep_augment, "AUROC table over augmentation copies")
    p.add_argument("--in", dest="in_features", required=True)
    p.add_argument("--shots", required=True)
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--in-test", required=True)
    p.add_argument("--ood-test", required=True)
    p.add_argument("--augment", type=_int_list, default=[1, 5, 10, 20, 50])
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--tpr", type=_fraction, default=0.95)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (CliError, ValueError, OSError, ArithmeticError, KeyError) as exc:
        print(f"ssd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
