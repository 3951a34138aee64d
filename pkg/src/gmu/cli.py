"""``gmu`` command line: fit, score, evaluate, project and synthesize.

Every command writes a ``*.echo.toml`` next to its main output holding the
effective configuration; ``gmu replay <echo>`` re-runs it.  Exit codes:
0 success, 2 usage or data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataio
from .dataio.synth import tomllib
from .ensemble import DEFAULT_ENSEMBLE_SIZE, build_posterior, sample_ensemble
from .errors import BadReport, GmuError, InvariantViolation, LengthMismatch
from .gmm import DEFAULT_JITTER_REL, FeatureSet, fit_gmm
from .metrics import DEFAULT_BINS, confusion_from_counts, ece, fit_temperature, ood_confusion, softmax_confidence
from .ood import DEFAULT_ALPHA, REPORT_COLUMNS, make_policy, score_arrays

DEFAULT_GEOMETRY = "64,2048,3,-25"


@dataclass
class RunConfig:
    command: str
    # paths
    features: Optional[str] = None
    labels: Optional[str] = None
    model: Optional[str] = None
    input: Optional[str] = None
    truth: Optional[str] = None
    scan: Optional[str] = None
    label_map: Optional[str] = None
    spec: Optional[str] = None
    output: Optional[str] = None
    val_logits: Optional[str] = None
    val_labels: Optional[str] = None
    # hyperparameters
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    jitter_rel: float = DEFAULT_JITTER_REL
    classes: Optional[int] = None
    class_names: Optional[str] = None
    bins: int = DEFAULT_BINS
    baseline: str = "responsibility"
    temperature: Optional[float] = None
    id_only: bool = False
    geometry: str = DEFAULT_GEOMETRY
    threads: Optional[int] = None

    def echo_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if v is None:
                continue
            if isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, (int, float)):
                lines.append(f"{k} = {v!r}")
            else:
                lines.append(f"{k} = {json.dumps(str(v))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_echo(cls, path) -> "RunConfig":
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown or "command" not in data:
            raise GmuError(f"{path}: not a gmu echo file (unknown keys {sorted(unknown)})")
        return cls(**data)


def resolve_threads(requested: Optional[int]) -> int:
    if requested:
        return max(1, requested)
    env = os.environ.get("GMU_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise GmuError(f"GMU_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def fmt_float(x: float) -> str:
    return "%.17g" % x


def _write_echo(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.echo_text(), encoding="utf-8")


def _require(path: Optional[str], what: str) -> Path:
    if path is None:
        raise GmuError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise GmuError(f"{what} not found: {path}")
    return p


def _read_features(path: str) -> np.ndarray:
    x = dataio.read_tensor(_require(path, "features file"))
    if x.ndim != 2:
        raise GmuError(f"{path}: features must be a rank-2 tensor, got shape {x.shape}")
    return x.astype(np.float64)


def _read_labels(path: str, n: int) -> np.ndarray:
    y = dataio.read_tensor(_require(path, "labels file"))
    if y.ndim != 1 or y.shape[0] != n:
        raise LengthMismatch(f"{path}: expected {n} labels, got shape {y.shape}")
    if y.dtype.kind == "f":
        if not np.all(y == np.round(y)):
            raise GmuError(f"{path}: labels must be integers")
    return y.astype(np.int64)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig) -> int:
    x = _read_features(cfg.features)
    y = _read_labels(cfg.labels, x.shape[0])
    names = cfg.class_names.split(",") if cfg.class_names else None
    model = fit_gmm(FeatureSet(x, y), cfg.classes, cfg.jitter_rel, class_names=names)
    out = Path(cfg.output)
    dataio.save_model(model, out)
    with open(f"{out}.summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "name", "count", "prior", "log_prior", "condition_estimate"])
        for comp in model.components:
            diag = np.diag(comp.factor.lower)
            cond = (diag.max() / diag.min()) ** 2
            name = model.class_names[comp.class_id] if model.class_names else ""
            w.writerow([comp.class_id, name, comp.count, fmt_float(np.exp(comp.log_pi)),
                        fmt_float(comp.log_pi), fmt_float(cond)])
    _write_echo(cfg, f"{out}.echo.toml")
    print(f"fitted {model.num_classes} classes in d={model.d} from {x.shape[0]} samples -> {out}")
    return 0


def ensemble_path_for(out_csv: str) -> Path:
    p = Path(out_csv)
    return p.with_name(p.stem + ".ensemble.gmu")


def write_report_csv(path, cols: dict) -> None:
    n = len(cols["predicted_class"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for i in range(n):
            w.writerow([
                i,
                int(cols["predicted_class"][i]),
                fmt_float(cols["epistemic"][i]),
                fmt_float(cols["aleatoric"][i]),
                fmt_float(cols["min_d2"][i]),
                "true" if cols["is_ood"][i] else "false",
                "true" if cols["aleatoric_valid"][i] else "false",
                fmt_float(cols["ddu_score"][i]),
                fmt_float(cols["confidence"][i]),
            ])


def read_report_csv(path, required=("predicted_class", "is_ood")) -> dict:
    with open(_require(path, "report CSV"), newline="") as fh:
        rows = list(csv.DictReader(fh))
        header = rows[0].keys() if rows else []
    missing = [c for c in required if c not in header] if rows else []
    if missing:
        raise BadReport(f"{path}: missing column(s) {missing}")
    out = {}
    try:
        for col in header:
            vals = [r[col] for r in rows]
            if col in ("is_ood", "aleatoric_valid"):
                out[col] = np.array([v == "true" for v in vals], dtype=bool)
            elif col in ("index", "predicted_class"):
                out[col] = np.array([int(v) for v in vals], dtype=np.int64)
            else:
                out[col] = np.array([float(v) for v in vals])
    except ValueError as exc:
        raise BadReport(f"{path}: {exc}") from None
    for col in required:
        out.setdefault(col, np.empty(0))
    return out


def cmd_score(cfg: RunConfig) -> int:
    model = dataio.load_model(_require(cfg.model, "model file"))
    x = _read_features(cfg.features)
    posterior = build_posterior(model)
    ensemble = sample_ensemble(posterior, cfg.ensemble_size, cfg.seed)
    policy = make_policy(model.d, cfg.alpha)
    cols = score_arrays(model, ensemble, policy, x, threads=resolve_threads(cfg.threads))
    if not np.array_equal(cols["aleatoric_valid"], ~cols["is_ood"]):
        raise InvariantViolation("aleatoric_valid must equal not is_ood")
    write_report_csv(cfg.output, cols)
    dataio.save_ensemble(ensemble, ensemble_path_for(cfg.output))
    _write_echo(cfg, f"{cfg.output}.echo.toml")
    n_ood = int(np.sum(cols["is_ood"]))
    print(f"scored {x.shape[0]} samples with T={ensemble.t}; {n_ood} flagged OOD "
          f"(threshold {policy.threshold:.6g}) -> {cfg.output}")
    return 0


def _na(v: Optional[float]) -> str:
    return "NA" if v is None or (isinstance(v, float) and np.isnan(v)) else fmt_float(v)


def cmd_eval_ood(cfg: RunConfig) -> int:
    report = read_report_csv(cfg.input)
    truth = dataio.read_tensor(_require(cfg.truth, "truth tensor")).ravel()
    if truth.shape[0] != report["is_ood"].shape[0]:
        raise LengthMismatch(f"{report['is_ood'].shape[0]} report rows vs {truth.shape[0]} truth flags")
    conf = ood_confusion(report["is_ood"], truth.astype(bool))
    m = conf.column_normalized
    rows = [("tp", str(conf.tp)), ("fp", str(conf.fp)), ("fn", str(conf.fn)), ("tn", str(conf.tn)),
            ("precision", _na(conf.precision)), ("recall", _na(conf.recall)), ("f1", _na(conf.f1)),
            ("pred_ood_true_ood", _na(m[0, 0])), ("pred_ood_true_id", _na(m[0, 1])),
            ("pred_id_true_ood", _na(m[1, 0])), ("pred_id_true_id", _na(m[1, 1]))]
    with open(cfg.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(rows)
    _write_echo(cfg, f"{cfg.output}.echo.toml")
    print(" ".join(f"{k}={v}" for k, v in rows[:7]))
    return 0


def write_calibration_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "weight", "confidence", "accuracy"])
        for b in range(report.num_bins):
            w.writerow([fmt_float(report.bin_edges[b]), fmt_float(report.bin_edges[b + 1]),
                        fmt_float(report.bin_weight[b]), fmt_float(report.bin_confidence[b]),
                        fmt_float(report.bin_accuracy[b])])


def cmd_eval_calibration(cfg: RunConfig) -> int:
    temperature = None
    if cfg.baseline == "responsibility":
        report = read_report_csv(cfg.input, required=("predicted_class", "confidence", "is_ood"))
        n = report["predicted_class"].shape[0]
        labels = _read_labels(cfg.labels, n)
        keep = ~report["is_ood"] if cfg.id_only else np.ones(n, dtype=bool)
        conf = report["confidence"][keep]
        correct = report["predicted_class"][keep] == labels[keep]
    elif cfg.baseline == "softmax":
        logits = _read_features(cfg.input)
        labels = _read_labels(cfg.labels, logits.shape[0])
        if cfg.val_logits or cfg.val_labels:
            vl = _read_features(cfg.val_logits)
            fit = fit_temperature(vl, _read_labels(cfg.val_labels, vl.shape[0]))
            temperature = fit.temperature
        else:
            temperature = cfg.temperature if cfg.temperature is not None else 1.0
        conf = softmax_confidence(logits, temperature)
        correct = np.argmax(logits, axis=1) == labels
    else:
        raise GmuError(f"unknown baseline {cfg.baseline!r}")
    report = ece(conf, correct, cfg.bins)
    write_calibration_csv(cfg.output, report)
    _write_echo(cfg, f"{cfg.output}.echo.toml")
    extra = "" if temperature is None else f" temperature={fmt_float(temperature)}"
    print(f"ece={fmt_float(report.ece)} bins={cfg.bins} n={conf.size}{extra}")
    return 0


def parse_geometry(text: str) -> tuple[int, int, float, float]:
    try:
        h, w, up, down = text.split(",")
        return int(h), int(w), float(up), float(down)
    except ValueError:
        raise GmuError(f"--geometry must be H,W,FOV_UP,FOV_DOWN, got {text!r}") from None


def cmd_project(cfg: RunConfig) -> int:
    h, w, up, down = parse_geometry(cfg.geometry)
    cloud = dataio.read_kitti_scan(_require(cfg.scan, "scan file"))
    if cfg.labels and cfg.labels != "-":
        lmap = None
        if cfg.label_map and cfg.label_map != "-":
            lmap = dataio.read_label_map(None if cfg.label_map == "default" else _require(cfg.label_map, "label map"))
        raw_n = cloud.kept.shape[0] if cloud.kept is not None else cloud.n
        labels = dataio.read_kitti_labels(_require(cfg.labels, "label file"), raw_n, lmap)
        dataio.attach_labels(cloud, labels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        img = dataio.spherical_project(cloud, h, w, up, down)
    for wmsg in caught:
        print(f"gmu: warning: {wmsg.message}", file=sys.stderr)
    dataio.write_range_image(img, cfg.output)
    info = [("points", cloud.n), ("dropped_nonfinite", cloud.dropped_nonfinite),
            ("dropped_degenerate", img.dropped_degenerate), ("dropped_collision", img.dropped_collision),
            ("valid_pixels", int(img.mask.sum())), ("height", h), ("width", w), ("empty", int(img.empty))]
    with open(f"{cfg.output}_info.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["key", "value"])
        wr.writerows(info)
    _write_echo(cfg, f"{cfg.output}_echo.toml")
    print(" ".join(f"{k}={v}" for k, v in info))
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.spec == "default":
        text = dataio.default_spec_text()
    else:
        text = _require(cfg.spec, "synthetic spec").read_text(encoding="utf-8")
    spec = dataio.parse_synth_spec(text)
    data = dataio.synth_generate(spec, cfg.seed)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.toml").write_text(text, encoding="utf-8")
    sets = {"train": data.train, "test": data.test, "ood": data.ood}
    for name, fs in sets.items():
        feats = np.empty((0, spec.dim)) if fs is None else fs.features
        labs = np.empty(0, dtype=np.int64) if fs is None else fs.labels
        dataio.write_tensor(out / f"{name}_features.gmt", feats.astype(np.float64))
        dataio.write_tensor(out / f"{name}_labels.gmt", labs.astype(np.uint32))
    test_x = sets["test"].features if sets["test"] is not None else np.empty((0, spec.dim))
    ood_x = sets["ood"].features if sets["ood"] is not None else np.empty((0, spec.dim))
    test_y = sets["test"].labels if sets["test"] is not None else np.empty(0, dtype=np.int64)
    ood_y = sets["ood"].labels if sets["ood"] is not None else np.empty(0, dtype=np.int64)
    dataio.write_tensor(out / "eval_features.gmt", np.concatenate([test_x, ood_x]).astype(np.float64))
    dataio.write_tensor(out / "eval_labels.gmt", np.concatenate([test_y, ood_y]).astype(np.uint32))
    truth = np.concatenate([np.zeros(test_x.shape[0]), np.ones(ood_x.shape[0])]).astype(np.uint8)
    dataio.write_tensor(out / "eval_truth_ood.gmt", truth)
    _write_echo(cfg, out / "config.echo.toml")
    print(f"wrote train={data.train.n} test={test_x.shape[0]} ood={ood_x.shape[0]} samples to {out}")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "score": cmd_score,
    "eval-ood": cmd_eval_ood,
    "eval-calibration": cmd_eval_calibration,
    "project": cmd_project,
    "synth": cmd_synth,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $GMU_THREADS or all cores); results do not depend on it")

    parser = argparse.ArgumentParser(prog="gmu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit the class-conditional GMM")
    p.add_argument("features")
    p.add_argument("labels")
    p.add_argument("output", metavar="out_model")
    p.add_argument("--jitter-rel", type=float, default=DEFAULT_JITTER_REL)
    p.add_argument("--classes", type=int, default=None, help="number of classes (default: max label + 1)")
    p.add_argument("--class-names", default=None, help="comma-separated class names")

    p = sub.add_parser("score", parents=[common], help="per-sample uncertainty and OOD report")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("output", metavar="out_csv")
    p.add_argument("--ensemble-size", type=int, default=DEFAULT_ENSEMBLE_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)

    p = sub.add_parser("eval-ood", parents=[common], help="OOD confusion matrix and precision/recall/F1")
    p.add_argument("input", metavar="report_csv")
    p.add_argument("truth", metavar="truth_tensor")
    p.add_argument("output", metavar="out_csv")

    p = sub.add_parser("eval-calibration", parents=[common], help="expected calibration error")
    p.add_argument("input", metavar="report_csv_or_logits")
    p.add_argument("labels")
    p.add_argument("output", metavar="out_csv")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--baseline", choices=("responsibility", "softmax"), default="responsibility")
    p.add_argument("--val-logits", default=None, help="validation logits for temperature fitting")
    p.add_argument("--val-labels", default=None)
    p.add_argument("--temperature", type=float, default=None, help="fixed temperature (softmax baseline)")
    p.add_argument("--id-only", action="store_true", help="ignore rows flagged OOD")

    p = sub.add_parser("project", parents=[common], help="spherical range-view projection of a scan")
    p.add_argument("scan")
    p.add_argument("labels", help="label file or '-'")
    p.add_argument("label_map", help="raw_id,train_id,name CSV, 'default' or '-'")
    p.add_argument("output", metavar="out_prefix")
    p.add_argument("--geometry", default=DEFAULT_GEOMETRY, help="H,W,FOV_UP,FOV_DOWN (degrees)")

    p = sub.add_parser("synth", parents=[common], help="generate synthetic train/test/OOD features")
    p.add_argument("spec", help="TOML spec file or 'default'")
    p.add_argument("output", metavar="out_dir")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("replay", parents=[common], help="re-run a command from its echo file")
    p.add_argument("echo")
    return parser


def run(cfg: RunConfig) -> int:
    return COMMANDS[cfg.command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            cfg = RunConfig.from_echo(_require(args.echo, "echo file"))
            if args.threads:
                cfg.threads = args.threads
        else:
            cfg = RunConfig(**vars(args))
        return run(cfg)
    except InvariantViolation as exc:
        print(f"gmu: internal error: {exc}", file=sys.stderr)
        return 3
    except (GmuError, OSError, ValueError) as exc:
        print(f"gmu: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
