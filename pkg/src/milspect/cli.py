"""Batch command-line surface: simulate | train | detect | eval | sweep.

All inputs and outputs are explicit file paths; every command is
deterministic given its files and flags (seeds live in the configs and can
be overridden with --seed).  Exit codes: 0 ok, 2 config error, 3 training
failure, 4 detection/IO failure.

File formats
------------
bag CSV        one row per instance: ``bag_id,bag_label,f0,...,f{d-1}``
truth CSV      ``instance_id,truth,target_fraction`` with
               ``instance_id = <bag_id>:<index within bag>``
scores CSV     ``instance_id,score`` plus ``truth`` when ground truth is known
trace CSV      ``iter,gm,fidelity,incoherence,total``
ROC CSV        ``fpr,tpr``
sweep CSV      ``param_or_grid_id,value(s),median_auc,min_auc,max_auc,failed``
model JSON     schema_version, hyperparams, dictionary, background stats,
               training metadata; write -> read -> write is byte-identical

Numeric CSV fields are written with 17 significant digits so values
round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_DETECT_IO = 4

SCHEMA_VERSION = 1


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _load_json(path, exit_code=EXIT_CONFIG):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(exit_code, f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(exit_code, f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")


def _check_keys(obj: dict, allowed: set, context: str):
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise CliError(EXIT_CONFIG, f"{context}: unknown key(s): {', '.join(unknown)}")


def _check_schema(obj: dict, context: str):
    if not isinstance(obj, dict):
        raise CliError(EXIT_CONFIG, f"{context}: expected a JSON object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CliError(
            EXIT_CONFIG,
            f"{context}: schema_version must be {SCHEMA_VERSION}, got {version!r}",
        )


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# config parsing

_SIM_KEYS = {
    "target_names", "background_names", "bags_pos", "bags_neg", "pts_per_bag",
    "target_pts_per_pos_bag", "target_mean", "snr_db", "bag_background_subsets",
    "dirichlet_scale", "seed",
}

_HP_KEYS = {
    "T", "M", "rho", "b", "beta", "lambda", "alpha_incoh", "max_outer_iters",
    "change_tolerance", "ista_iters", "ista_tolerance", "armijo", "seed",
    "reuse_codes_within_iteration", "background_init",
}

_ARMIJO_KEYS = {"initial_step", "shrink_factor", "sufficient_decrease_c", "max_backtracks"}


def _parse_library(obj, context):
    from .simgen import SpectralLibrary, demo_library

    if not isinstance(obj, dict):
        raise CliError(EXIT_CONFIG, f"{context}: 'library' must be an object")
    _check_keys(obj, {"builtin", "csv"}, f"{context}.library")
    if ("builtin" in obj) == ("csv" in obj):
        raise CliError(EXIT_CONFIG, f"{context}.library: give exactly one of 'builtin', 'csv'")
    if "builtin" in obj:
        if obj["builtin"] != "demo":
            raise CliError(EXIT_CONFIG, f"{context}.library: unknown builtin {obj['builtin']!r}")
        return demo_library()
    try:
        return SpectralLibrary.from_csv(obj["csv"])
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{context}.library: {exc}")


def _parse_sim(obj, context, seed_override=None):
    from .simgen import SimConfig

    if not isinstance(obj, dict):
        raise CliError(EXIT_CONFIG, f"{context}: 'sim' must be an object")
    _check_keys(obj, _SIM_KEYS, f"{context}.sim")
    required = {"target_names", "background_names", "bags_pos", "bags_neg",
                "pts_per_bag", "target_pts_per_pos_bag", "target_mean", "snr_db"}
    missing = sorted(required - set(obj))
    if missing:
        raise CliError(EXIT_CONFIG, f"{context}.sim: missing key(s): {', '.join(missing)}")
    kwargs = dict(obj)
    if kwargs.get("bag_background_subsets") is not None:
        kwargs["bag_background_subsets"] = tuple(
            tuple(s) for s in kwargs["bag_background_subsets"]
        )
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        cfg = SimConfig(**kwargs)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{context}.sim: {exc}")
    return cfg


def _parse_hyperparams(obj, context, seed_override=None):
    from .model import ArmijoParams, HyperParams

    if not isinstance(obj, dict):
        raise CliError(EXIT_CONFIG, f"{context}: 'hyperparams' must be an object")
    _check_keys(obj, _HP_KEYS, f"{context}.hyperparams")
    required = {"T", "M", "rho", "b", "beta", "lambda"}
    missing = sorted(required - set(obj))
    if missing:
        raise CliError(EXIT_CONFIG, f"{context}.hyperparams: missing key(s): {', '.join(missing)}")
    kwargs = dict(obj)
    kwargs["lam"] = kwargs.pop("lambda")
    armijo = kwargs.pop("armijo", None)
    if armijo is not None:
        _check_keys(armijo, _ARMIJO_KEYS, f"{context}.hyperparams.armijo")
        kwargs["armijo"] = ArmijoParams(**armijo)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        hp = HyperParams(**kwargs)
        hp.validate()
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{context}.hyperparams: {exc}")
    return hp


def _hyperparams_to_json(hp) -> dict:
    from dataclasses import asdict

    data = asdict(hp)
    data["lambda"] = data.pop("lam")
    return data


# ---------------------------------------------------------------------------
# dataset and score file I/O

def _write_bag_csv(path, ds):
    d = ds.d
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bag_id", "bag_label"] + [f"f{i}" for i in range(d)])
        for bag in ds.bags:
            for row in bag.instances:
                writer.writerow([bag.bag_id, bag.label] + [_fmt(v) for v in row])


def _read_bag_csv(path, exit_code):
    import numpy as np

    from .model import Bag, BagDataset

    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(exit_code, f"cannot read {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["bag_id", "bag_label"]:
            raise CliError(exit_code, f"{path}: expected header 'bag_id,bag_label,f0,...'")
        order: list[str] = []
        rows: dict[str, list] = {}
        labels: dict[str, int] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CliError(exit_code, f"{path}:{line_no}: wrong field count")
            bag_id, label = row[0], row[1]
            try:
                label = int(label)
                features = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise CliError(exit_code, f"{path}:{line_no}: {exc}")
            if bag_id not in rows:
                order.append(bag_id)
                rows[bag_id] = []
                labels[bag_id] = label
            elif labels[bag_id] != label:
                raise CliError(exit_code, f"{path}:{line_no}: bag {bag_id!r} changes label")
            rows[bag_id].append(features)
    if not order:
        raise CliError(exit_code, f"{path}: no instances")
    bags = tuple(
        Bag(bag_id=b, label=labels[b], instances=np.asarray(rows[b], dtype=np.float64))
        for b in order
    )
    return BagDataset(bags=bags)


def _instance_ids(ds):
    ids = []
    for bag in ds.bags:
        ids.extend(f"{bag.bag_id}:{j}" for j in range(bag.n_instances))
    return ids


def _write_truth_csv(path, ds, truth):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance_id", "truth", "target_fraction"])
        for instance_id, label, fraction in zip(
            _instance_ids(ds), truth.labels, truth.target_fraction
        ):
            writer.writerow([instance_id, int(label), _fmt(fraction)])


def _read_truth_csv(path, exit_code):
    truth = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(exit_code, f"cannot read {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["instance_id", "truth"]:
            raise CliError(exit_code, f"{path}: expected header 'instance_id,truth,...'")
        for row in reader:
            if row:
                truth[row[0]] = int(row[1])
    return truth


def _write_scores_csv(path, scores):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if scores.truth is None:
            writer.writerow(["instance_id", "score"])
            for instance_id, value, _ in scores.entries():
                writer.writerow([instance_id, _fmt(value)])
        else:
            writer.writerow(["instance_id", "score", "truth"])
            for instance_id, value, label in scores.entries():
                writer.writerow([instance_id, _fmt(value), int(label)])


def _read_scores_csv(path, truth_map=None):
    import numpy as np

    from .evaluation import ScoreSet

    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(EXIT_DETECT_IO, f"cannot read {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["instance_id", "score"]:
            raise CliError(EXIT_DETECT_IO, f"{path}: expected header 'instance_id,score[,truth]'")
        has_truth = len(header) > 2 and header[2] == "truth"
        ids, values, labels = [], [], []
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            values.append(float(row[1]))
            if truth_map is not None:
                if row[0] not in truth_map:
                    raise CliError(EXIT_DETECT_IO, f"{path}: no truth for instance {row[0]!r}")
                labels.append(truth_map[row[0]])
            elif has_truth:
                labels.append(int(row[2]))
    truth = np.asarray(labels, dtype=np.intp) if labels else None
    return ScoreSet(ids=tuple(ids), scores=np.asarray(values), truth=truth)


# ---------------------------------------------------------------------------
# model file

def _matrix_to_json(m) -> dict:
    return {"shape": list(m.shape), "data": [float(v) for v in m.ravel(order="C")]}


def _matrix_from_json(obj, context):
    import numpy as np

    try:
        return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DETECT_IO, f"{context}: malformed matrix: {exc}")


def _write_model(path, hp, dictionary, background, report):
    obj = {
        "schema_version": SCHEMA_VERSION,
        "hyperparams": _hyperparams_to_json(hp),
        "dictionary": {
            "targets": _matrix_to_json(dictionary.targets),
            "backgrounds": _matrix_to_json(dictionary.backgrounds),
        },
        "background_stats": {
            "mu": [float(v) for v in background.mu],
            "sigma": _matrix_to_json(background.sigma),
        },
        "training": {
            "seed": hp.seed,
            "iterations": report.iterations_run,
            "stop_reason": report.stop_reason,
            "final_objective": (
                {
                    "gm": report.objective_trace[-1].gm_term,
                    "fidelity": report.objective_trace[-1].fidelity_term,
                    "incoherence": report.objective_trace[-1].incoherence_term,
                    "total": report.objective_trace[-1].total,
                }
                if report.objective_trace
                else None
            ),
        },
    }
    _dump_json(obj, path)


def _read_model(path):
    from .detectors import BackgroundStats, fit_background  # noqa: F401  (type import)
    from .model import ConceptDictionary

    obj = _load_json(path, exit_code=EXIT_DETECT_IO)
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise CliError(EXIT_DETECT_IO, f"{path}: unsupported model schema")
    try:
        hp = _parse_hyperparams(obj["hyperparams"], path)
        dictionary = ConceptDictionary(
            _matrix_from_json(obj["dictionary"]["targets"], path),
            _matrix_from_json(obj["dictionary"]["backgrounds"], path),
        )
        import numpy as np

        stats = obj["background_stats"]
        mu = np.asarray(stats["mu"], dtype=np.float64)
        sigma = _matrix_from_json(stats["sigma"], path)
        eigvals, eigvecs = np.linalg.eigh(sigma)
        if eigvals[0] <= 0:
            raise CliError(EXIT_DETECT_IO, f"{path}: stored covariance is not positive definite")
        background = BackgroundStats(mu=mu, sigma=sigma, sigma_inv=(eigvecs / eigvals) @ eigvecs.T)
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_DETECT_IO, f"{path}: malformed model file: {exc}")
    return hp, dictionary, background


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    obj = _load_json(args.config)
    _check_schema(obj, args.config)
    _check_keys(obj, {"schema_version", "library", "sim"}, args.config)
    if "library" not in obj or "sim" not in obj:
        raise CliError(EXIT_CONFIG, f"{args.config}: needs 'library' and 'sim'")
    library = _parse_library(obj["library"], args.config)
    sim = _parse_sim(obj["sim"], args.config, seed_override=args.seed)

    from .simgen import generate_dataset

    try:
        ds, truth = generate_dataset(library, sim)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"{args.config}: {exc}")

    os.makedirs(args.out, exist_ok=True)
    _write_bag_csv(os.path.join(args.out, "bags.csv"), ds)
    _write_truth_csv(os.path.join(args.out, "truth.csv"), ds, truth)
    print(
        f"wrote {args.out}/bags.csv and truth.csv: "
        f"K+={ds.n_positive_bags} K-={ds.n_negative_bags} "
        f"N={ds.n_instances} d={ds.d}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    obj = _load_json(args.params)
    _check_schema(obj, args.params)
    _check_keys(obj, {"schema_version", "hyperparams"}, args.params)
    if "hyperparams" not in obj:
        raise CliError(EXIT_CONFIG, f"{args.params}: needs 'hyperparams'")
    hp = _parse_hyperparams(obj["hyperparams"], args.params, seed_override=args.seed)

    ds = _read_bag_csv(args.data, EXIT_TRAINING)

    from .detectors import fit_background
    from .trainer import TrainingError, train

    try:
        report = train(ds, hp)
        negatives = ds.instance_matrix[:, ds.negative_columns].T
        background = fit_background(negatives)
    except (TrainingError, ValueError) as exc:
        raise CliError(EXIT_TRAINING, f"training failed: {exc}")

    _write_model(args.model_out, hp, report.final_dictionary, background, report)
    trace_path = args.trace_out or os.path.splitext(args.model_out)[0] + ".trace.csv"
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "gm", "fidelity", "incoherence", "total"])
        for i, entry in enumerate(report.objective_trace):
            writer.writerow(
                [i, _fmt(entry.gm_term), _fmt(entry.fidelity_term),
                 _fmt(entry.incoherence_term), _fmt(entry.total)]
            )
    print(
        f"trained {report.iterations_run} iteration(s), stop={report.stop_reason}; "
        f"model -> {args.model_out}, trace -> {trace_path}"
    )
    return EXIT_OK


def cmd_detect(args) -> int:
    hp, dictionary, background = _read_model(args.model)
    ds = _read_bag_csv(args.scene, EXIT_DETECT_IO)
    if ds.d != dictionary.d:
        raise CliError(
            EXIT_DETECT_IO,
            f"dimension mismatch: scene d={ds.d}, model d={dictionary.d}",
        )
    truth = None
    if args.truth:
        truth_map = _read_truth_csv(args.truth, EXIT_DETECT_IO)
        try:
            truth = [truth_map[i] for i in _instance_ids(ds)]
        except KeyError as exc:
            raise CliError(EXIT_DETECT_IO, f"{args.truth}: no truth for instance {exc}")

    from .detectors import detect

    scores = detect(
        ds.instance_matrix.T,
        args.method,
        dictionary=dictionary,
        background=background,
        lam=hp.lam,
        ista_cfg=hp.ista_config(),
        truth=truth,
        instance_ids=_instance_ids(ds),
    )
    _write_scores_csv(args.scores_out, scores)
    print(f"scored {len(scores)} instance(s) with {args.method} -> {args.scores_out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    truth_map = _read_truth_csv(args.truth, EXIT_DETECT_IO) if args.truth else None
    scores = _read_scores_csv(args.scores, truth_map)
    if scores.truth is None:
        raise CliError(EXIT_DETECT_IO, "no ground truth: give --truth or a truth column")

    from .evaluation import auc, nauc, roc_curve

    try:
        points = roc_curve(scores)
        metrics = {
            "auc": auc(scores),
            "n_instances": len(scores),
            "n_positive": int(scores.truth.sum()),
            "n_negative": int(len(scores) - scores.truth.sum()),
        }
        if args.nauc_far is not None:
            metrics["nauc"] = nauc(scores, args.nauc_far, args.area_per_sample)
            metrics["nauc_far"] = args.nauc_far
            metrics["area_per_sample"] = args.area_per_sample
    except ValueError as exc:
        raise CliError(EXIT_DETECT_IO, f"evaluation failed: {exc}")

    _dump_json(metrics, args.metrics_out)
    with open(args.roc_out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            writer.writerow([_fmt(fpr), _fmt(tpr)])
    print(f"auc={metrics['auc']:.6f} -> {args.metrics_out}, roc -> {args.roc_out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base_obj = _load_json(args.base)
    _check_schema(base_obj, args.base)
    _check_keys(
        base_obj,
        {"schema_version", "library", "sim", "hyperparams", "method", "ridge"},
        args.base,
    )
    for key in ("library", "sim", "hyperparams"):
        if key not in base_obj:
            raise CliError(EXIT_CONFIG, f"{args.base}: needs {key!r}")
    library = _parse_library(base_obj["library"], args.base)
    sim = _parse_sim(base_obj["sim"], args.base, seed_override=args.seed)
    hp = _parse_hyperparams(base_obj["hyperparams"], args.base)
    method = base_obj.get("method", "ace")
    if method not in ("hsd", "ace", "smf"):
        raise CliError(EXIT_CONFIG, f"{args.base}: unknown method {method!r}")

    spec_obj = _load_json(args.spec)
    _check_schema(spec_obj, args.spec)
    _check_keys(spec_obj, {"schema_version", "parameters", "runs_per_setting"}, args.spec)
    if "parameters" not in spec_obj:
        raise CliError(EXIT_CONFIG, f"{args.spec}: needs 'parameters'")

    from .evaluation import (
        DEFAULT_PARAM_RANGES,
        ExperimentConfig,
        SweepSpec,
        run_sweep,
    )

    parameters = {}
    for name, values in spec_obj["parameters"].items():
        parameters[name] = tuple(values) if values is not None else DEFAULT_PARAM_RANGES.get(name)
    try:
        spec = SweepSpec(
            parameters=parameters,
            runs_per_setting=spec_obj.get("runs_per_setting", 5),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"{args.spec}: {exc}")

    cfg = ExperimentConfig(
        library=library, sim=sim, hp=hp, method=method, ridge=base_obj.get("ridge")
    )
    rows = run_sweep(cfg, spec)

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["param_or_grid_id", "value(s)", "median_auc", "min_auc", "max_auc", "failed"]
        )
        for row in rows:
            values = ";".join(f"{k}={v:g}" for k, v in row.params.items())
            writer.writerow(
                [row.grid_id, values, _fmt(row.median_auc), _fmt(row.min_auc),
                 _fmt(row.max_auc), int(row.failed)]
            )
    print(f"swept {len(rows)} setting(s) -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milspect",
        description="Bag-labeled spectral concept learning and sub-pixel detection",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap the BLAS thread count used by the numerics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic bag dataset")
    p.add_argument("config", help="simulation config JSON")
    p.add_argument("out", help="output directory for bags.csv and truth.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="learn target/background concepts from bags")
    p.add_argument("data", help="bag CSV")
    p.add_argument("params", help="hyperparameter JSON")
    p.add_argument("model_out", help="output model JSON")
    p.add_argument("--trace-out", default=None, help="objective trace CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a scene with a trained model")
    p.add_argument("model", help="model JSON from train")
    p.add_argument("scene", help="bag CSV to score")
    p.add_argument("scores_out", help="output scores CSV")
    p.add_argument("--method", choices=("hsd", "ace", "smf"), default="hsd")
    p.add_argument("--truth", default=None, help="truth CSV to join into the output")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="ROC metrics from a scores file")
    p.add_argument("scores", help="scores CSV")
    p.add_argument("--truth", default=None, help="truth CSV (if scores lack a truth column)")
    p.add_argument("--metrics-out", required=True, help="output metrics JSON")
    p.add_argument("--roc-out", required=True, help="output ROC CSV")
    p.add_argument("--nauc-far", type=float, default=None,
                   help="false-alarm-rate cutoff for NAUC (alarms per unit area)")
    p.add_argument("--area-per-sample", type=float, default=1.0,
                   help="scene area represented by one instance")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="median AUC over a hyperparameter grid")
    p.add_argument("base", help="base experiment config JSON")
    p.add_argument("spec", help="sweep spec JSON")
    p.add_argument("out", help="output sweep CSV")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        # must happen before numpy is imported anywhere in this process
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
