"""Command-line interface: ``gramtraj <command> [options]``.

Exit codes: 0 success, 2 usage, 3 data validation, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .classify import (
    ClassifierSpec,
    DistanceSpec,
    PpfSvmModel,
    cross_validate,
    predict,
    proximity_matrix,
    train_ppfsvm,
)
from .data import (
    FORMATS,
    SequenceRecord,
    SynthSpec,
    load_sequences,
    synth_generate,
    write_sequences,
)
from .errors import (
    DegenerateFrame,
    DimensionMismatch,
    EmptySequence,
    GramTrajError,
    InconsistentFrameShape,
    InsufficientClasses,
    InvalidInput,
    InvalidParameter,
    LengthMismatch,
    NotPositiveDefinite,
    ParseError,
)
from .geometry import (
    DEFAULT_K,
    closeness,
    flat_distance,
    point_from_landmarks,
    regularized_spd_distance,
)
from .trajectory import (
    DISTANCES,
    auto_zeta,
    build_trajectory,
    cost_matrix,
    _dtw_from_cost,
    interpolate,
    lockstep_distance,
    resample,
)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DATA_ERRORS = (
    DegenerateFrame,
    DimensionMismatch,
    EmptySequence,
    InconsistentFrameShape,
    InsufficientClasses,
    InvalidInput,
    LengthMismatch,
    ParseError,
)


class UsageError(Exception):
    pass


def _c_value(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'auto', got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("C must be positive")
    return value


def _common(parser):
    g = parser.add_argument_group("pipeline options")
    g.add_argument("--k", type=float, default=DEFAULT_K, help="weight of the covariance term (default %(default)s)")
    g.add_argument("--zeta1", type=float, help="drop threshold for re-sampling")
    g.add_argument("--zeta2", type=float, help="insertion threshold for re-sampling")
    g.add_argument("--auto-zeta", action="store_true",
                   help="derive thresholds from the (training) data; the default when none are given")
    g.add_argument("--no-resample", action="store_true", help="disable adaptive re-sampling")
    g.add_argument("--no-dtw", action="store_true", help="lockstep comparison instead of DTW")
    g.add_argument("--distance", choices=DISTANCES, default="closeness")
    g.add_argument("--epsilon", type=float, help="regularization for --distance spd-reg")
    g.add_argument("--classifier", choices=("ppfsvm", "knn"), default="ppfsvm")
    g.add_argument("--K", type=int, default=1, help="neighbours for --classifier knn")
    g.add_argument("--C", type=_c_value, default=1.0, help="SVM cost, or 'auto' for inner CV")
    g.add_argument("--folds", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--format", choices=("text", "machine"), default="text")
    g.add_argument("--input-format", choices=("auto",) + FORMATS, default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramtraj", description="Shape trajectories on S+(2, n).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="closeness between frames or DTW dissimilarity between sequences")
    p.add_argument("inputs", nargs="+", help="one file holding both records, or two files")
    p.add_argument("--ids", nargs=2, metavar=("ID1", "ID2"))
    _common(p)

    p = sub.add_parser("align", help="print the optimal DTW path between two sequences")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--ids", nargs=2, metavar=("ID1", "ID2"))
    _common(p)

    p = sub.add_parser("resample", help="adaptively re-sample sequences")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _common(p)

    p = sub.add_parser("train", help="train a ppfSVM model")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _common(p)

    p = sub.add_parser("predict", help="classify sequences with a trained model")
    p.add_argument("model")
    p.add_argument("input")
    _common(p)

    p = sub.add_parser("eval", help="cross-validated evaluation")
    p.add_argument("input")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic labeled dataset")
    p.add_argument("-o", "--output", required=True)
    d = SynthSpec()
    p.add_argument("--classes", type=int, default=d.n_classes)
    p.add_argument("--per-class", type=int, default=d.per_class)
    p.add_argument("--landmarks", type=int, default=d.n_landmarks)
    p.add_argument("--frames-min", type=int, default=d.frames[0])
    p.add_argument("--frames-max", type=int, default=d.frames[1])
    p.add_argument("--stretch-rate", type=float, default=d.stretch_rate)
    p.add_argument("--articulation-amp", type=float, default=d.articulation_amp)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--rate-warp", type=float, default=d.rate_warp)
    p.add_argument("--jitter", type=float, default=d.subject_jitter)
    p.add_argument("--no-rigid", action="store_true")
    p.add_argument("--seed", type=int, default=d.seed)

    p = sub.add_parser("bench", help="time the three frame distances")
    p.add_argument("--n", type=int, default=68)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "machine"), default="text")

    p = sub.add_parser("convert", help="convert between sequence file formats")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--from", dest="src_format", choices=("auto",) + FORMATS, default="auto")
    p.add_argument("--to", dest="dst_format", choices=("auto",) + FORMATS, default="auto")
    return parser


# --------------------------------------------------------------------------
# helpers

def _out(text):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load(path, fmt="auto", min_frames=2):
    records, errors = load_sequences(path, fmt, min_frames=min_frames)
    for err in errors:
        print(f"warning: skipped {err}", file=sys.stderr)
    if not records:
        raise InvalidInput(f"{path}: no valid sequences")
    return records


def _trajectory(rec: SequenceRecord):
    try:
        return build_trajectory(rec.frames, rec.id, rec.label)
    except DegenerateFrame as exc:
        raise DegenerateFrame(exc.index, f"record {rec.id!r}: {exc.reason}") from exc


def _distance_spec(args) -> DistanceSpec:
    if args.k < 0:
        raise InvalidParameter("--k must be nonnegative")
    if args.epsilon is not None and not args.epsilon > 0:
        raise InvalidParameter("--epsilon must be positive")
    return DistanceSpec(k=args.k, distance=args.distance, epsilon=args.epsilon, use_dtw=not args.no_dtw)


def _fixed_zeta(args):
    """Explicit thresholds, or None when they are to be derived from data."""
    given = (args.zeta1 is not None, args.zeta2 is not None)
    if any(given) and args.auto_zeta:
        raise UsageError("--auto-zeta conflicts with --zeta1/--zeta2")
    if any(given) and not all(given):
        raise UsageError("--zeta1 and --zeta2 must be given together")
    if all(given):
        if not 0 <= args.zeta1 < args.zeta2:
            raise InvalidParameter("need 0 <= zeta1 < zeta2")
        return (args.zeta1, args.zeta2)
    return None


def _pick_pair(args, min_frames):
    if len(args.inputs) > 2:
        raise UsageError("expected one or two input files")
    if len(args.inputs) == 2:
        a = _load(args.inputs[0], args.input_format, min_frames)
        b = _load(args.inputs[1], args.input_format, min_frames)
        if args.ids:
            return _by_id(a, args.ids[0]), _by_id(b, args.ids[1])
        return a[0], b[0]
    recs = _load(args.inputs[0], args.input_format, min_frames)
    if args.ids:
        return _by_id(recs, args.ids[0]), _by_id(recs, args.ids[1])
    if len(recs) != 2:
        raise UsageError("a single input file must hold exactly two records, or use --ids")
    return recs[0], recs[1]


def _by_id(records, rid):
    for r in records:
        if r.id == rid:
            return r
    raise InvalidInput(f"no record with id {rid!r}")


# --------------------------------------------------------------------------
# commands

def cmd_dist(args):
    spec = _distance_spec(args)
    ra, rb = _pick_pair(args, min_frames=1)
    if len(ra.frames) == 1 and len(rb.frames) == 1:
        pa, pb = point_from_landmarks(ra.frames[0]), point_from_landmarks(rb.frames[0])
        if pa.n != pb.n:
            raise DimensionMismatch(f"frames have n={pa.n} and n={pb.n}")
        if spec.distance == "flat":
            value = flat_distance(pa, pb)
        elif spec.distance == "spd-reg":
            value = regularized_spd_distance(pa, pb, spec.epsilon)
        else:
            value = closeness(pa, pb, spec.k)
        kind = "frame"
    else:
        a, b = _trajectory(ra), _trajectory(rb)
        a, b = _maybe_resample(args, [a, b], spec.k)
        value = spec.pair()(a, b)
        kind = "dtw" if spec.use_dtw else "lockstep"
    if args.format == "machine":
        _out(json.dumps({"kind": kind, "ids": [ra.id, rb.id], "distance": spec.distance, "value": value}))
    else:
        _out(f"{value:.9f}")


def _maybe_resample(args, trajs, k):
    if args.no_resample:
        return trajs
    zeta = _fixed_zeta(args)
    if zeta is None:
        return trajs
    return [resample(t, zeta[0], zeta[1], k) for t in trajs]


def cmd_align(args):
    spec = _distance_spec(args)
    ra, rb = _pick_pair(args, min_frames=2)
    a, b = _maybe_resample(args, [_trajectory(ra), _trajectory(rb)], spec.k)
    path = _dtw_from_cost(cost_matrix(a, b, spec.k, spec.distance, spec.epsilon))
    if args.format == "machine":
        _out(json.dumps({"ids": [ra.id, rb.id], "steps": [list(s) for s in path.steps],
                         "total_cost": path.total_cost, "normalized_cost": path.normalized_cost}))
    else:
        _out(f"total_cost: {path.total_cost:.9f}")
        _out(f"normalized_cost: {path.normalized_cost:.9f}")
        _out(f"steps ({len(path.steps)}): " + " ".join(f"{i},{j}" for i, j in path.steps))


def cmd_resample(args):
    recs = _load(args.input, args.input_format)
    trajs = [_trajectory(r) for r in recs]
    zeta = _fixed_zeta(args) or auto_zeta(trajs, args.k)
    out = [resample(t, zeta[0], zeta[1], args.k) for t in trajs]
    records = [SequenceRecord(t.id, [p.landmarks() for p in t.points], t.label) for t in out]
    write_sequences(records, args.output)
    if args.format == "machine":
        _out(json.dumps({"zeta": list(zeta), "lengths": {t.id: [len(s), len(t)] for s, t in zip(trajs, out)}}))
    else:
        _out(f"zeta1: {zeta[0]:.9g}  zeta2: {zeta[1]:.9g}")
        for s, t in zip(trajs, out):
            _out(f"{t.id}: {len(s)} -> {len(t)}")


def _prepare_training(args, trajs, spec):
    zeta = None
    if not args.no_resample:
        zeta = _fixed_zeta(args) or auto_zeta(trajs, spec.k)
        trajs = [resample(t, zeta[0], zeta[1], spec.k) for t in trajs]
    if not spec.use_dtw:
        length = max(len(t) for t in trajs)
        trajs = [interpolate(t, length) for t in trajs]
    return trajs, zeta


def cmd_train(args):
    if args.classifier != "ppfsvm":
        raise UsageError("train only supports --classifier ppfsvm (k-NN has no model)")
    spec = _distance_spec(args)
    recs = _load(args.input, args.input_format)
    trajs = [_trajectory(r) for r in recs]
    if any(t.label is None for t in trajs):
        raise InvalidInput("training records need labels")
    trajs, zeta = _prepare_training(args, trajs, spec)
    model = train_ppfsvm(trajs, C=args.C, seed=args.seed, spec=spec, zeta=zeta, threads=args.threads)
    model.save(args.output)
    msg = {"model": args.output, "classes": model.classes, "references": len(model.references),
           "C": model.C, "zeta": list(zeta) if zeta else None, "duality_gaps": model.gaps}
    _out(json.dumps(msg) if args.format == "machine" else
         "\n".join(f"{key}: {value}" for key, value in msg.items()))


def cmd_predict(args):
    model = PpfSvmModel.load(args.model)
    recs = _load(args.input, args.input_format)
    for rec in recs:
        label, scores = predict(model, _trajectory(rec), threads=args.threads)
        if args.format == "machine":
            _out(json.dumps({"id": rec.id, "label": label,
                             "scores": dict(zip(model.classes, map(float, scores)))}))
        else:
            _out(f"{rec.id} {label} " + " ".join(f"{c}={s:.6f}" for c, s in zip(model.classes, scores)))


def cmd_eval(args):
    spec = _distance_spec(args)
    if args.folds < 2:
        raise InvalidParameter("--folds must be at least 2")
    recs = _load(args.input, args.input_format)
    trajs = [_trajectory(r) for r in recs]
    clf = ClassifierSpec(kind=args.classifier, K=args.K, C=args.C)
    report = cross_validate(trajs, args.folds, clf, args.seed, spec, resampling=not args.no_resample,
                            zeta=_fixed_zeta(args), threads=args.threads)
    if args.format == "machine":
        _out(json.dumps(report.to_dict(), sort_keys=True))
    else:
        _out(report.format_text())


def cmd_synth(args):
    spec = SynthSpec(
        n_classes=args.classes, per_class=args.per_class, n_landmarks=args.landmarks,
        frames=(args.frames_min, args.frames_max), stretch_rate=args.stretch_rate,
        articulation_amp=args.articulation_amp, rigid_motion=not args.no_rigid,
        rate_warp=args.rate_warp, noise=args.noise, subject_jitter=args.jitter, seed=args.seed,
    )
    records = synth_generate(spec)
    write_sequences(records, args.output)
    _out(f"wrote {len(records)} sequences to {args.output}")


def bench(n=68, pairs=1000, seed=0):
    """Mean per-pair seconds of the three frame distances on random configurations."""
    rng = np.random.default_rng(seed)
    pts = [(point_from_landmarks(rng.normal(size=(n, 2))), point_from_landmarks(rng.normal(size=(n, 2))))
           for _ in range(pairs)]
    out = {}
    for name, fn in (("closeness", lambda a, b: closeness(a, b, DEFAULT_K)),
                     ("flat", flat_distance),
                     ("spd-reg", regularized_spd_distance)):
        t0 = time.perf_counter()
        for a, b in pts:
            fn(a, b)
        out[name] = (time.perf_counter() - t0) / pairs
    return out


def cmd_bench(args):
    if args.n < 3 or args.pairs < 1:
        raise InvalidParameter("--n must be >= 3 and --pairs >= 1")
    times = bench(args.n, args.pairs, args.seed)
    ratios = {"spd-reg/closeness": times["spd-reg"] / times["closeness"],
              "closeness/flat": times["closeness"] / times["flat"]}
    if args.format == "machine":
        _out(json.dumps({"n": args.n, "pairs": args.pairs, "seconds_per_pair": times, "ratios": ratios}))
        return
    _out(f"n={args.n} pairs={args.pairs}")
    for name, t in times.items():
        _out(f"{name:10s} {t * 1e6:10.1f} us/pair")
    for name, r in ratios.items():
        _out(f"{name:18s} {r:6.2f}x")


def cmd_convert(args):
    records, errors = load_sequences(args.input, args.src_format)
    for err in errors:
        print(f"warning: skipped {err}", file=sys.stderr)
    write_sequences(records, args.output, args.dst_format)
    _out(f"converted {len(records)} sequences ({len(errors)} skipped)")


COMMANDS = {
    "dist": cmd_dist,
    "align": cmd_align,
    "resample": cmd_resample,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "convert": cmd_convert,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gramtraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"gramtraj: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"gramtraj: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NotPositiveDefinite, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gramtraj: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidParameter as exc:
        parser.print_usage(sys.stderr)
        print(f"gramtraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GramTrajError as exc:
        print(f"gramtraj: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
