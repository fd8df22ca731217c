"""Command line interface: ``collateral <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifiers, dae, dqn, pipeline, serialize, synthgen
from .config import Settings, dump_config, load_config
from .errors import CollateralError, ConfigError, DataError, FormatError, ValidationError
from .roi_env import iou
from .volume import CubeState, extract_cube, load_vvol, normalize_unit

log = logging.getLogger("collateral")
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


# ---------------------------------------------------------------- data access

class _Sample:
    """Phantom-like view of one sample on disk (label, ROI and the three maps)."""

    def __init__(self, root: Path, sid: str, label: int, roi: CubeState):
        self.root, self.sid, self.label, self.roi = root, sid, label, roi
        self._vols = None

    @property
    def volumes(self):
        if self._vols is None:
            self._vols = tuple(load_vvol(self.root / f"{self.sid}_{m}.vvol") for m in ("tmax", "rbf", "rbv"))
        return self._vols

    @property
    def tmax(self):
        return self.volumes[0]


def load_samples(data_dir) -> list[tuple[str, _Sample]]:
    root = Path(data_dir)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise FormatError(f"{manifest} not found")
    return [(sid, _Sample(root, sid, label, roi)) for sid, label, roi in synthgen.read_manifest(manifest)]


def write_rois(rows, path) -> Path:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "roi_x", "roi_y", "roi_z", "edge", "iou"])
        for sid, roi, score in rows:
            w.writerow([sid, *roi.corner, roi.edge, f"{score:.6f}"])
    return Path(path)


def read_rois(path) -> dict:
    out = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["sample_id"]] = CubeState((int(row["roi_x"]), int(row["roi_y"]), int(row["roi_z"])),
                                              int(row["edge"]))
    return out


def write_eval(reports, path) -> Path:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "classifier", "scheme", "fold", "accuracy"])
        for r in reports:
            for f, acc in enumerate(r.fold_accuracies):
                w.writerow([r.mode, r.classifier, r.scheme, f, repr(float(acc))])
    return Path(path)


def read_eval(path) -> list[pipeline.EvalReport]:
    groups: dict = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["mode"], row["classifier"], row["scheme"])
            groups.setdefault(key, []).append(float(row["accuracy"]))
    if not groups:
        raise DataError(f"{path}: no evaluation rows")
    return [pipeline.EvalReport(m, c, s, accs, np.zeros((0, 0))) for (m, c, s), accs in groups.items()]


def _dataset_from_features(path) -> pipeline.Dataset:
    rows = serialize.read_features(path)
    if not rows:
        raise DataError(f"{path}: no feature rows")
    schemes = {r[2] for r in rows}
    if len(schemes) != 1:
        raise DataError(f"{path}: mixed schemes {sorted(schemes)}")
    dims = {len(r[3]) for r in rows}
    if len(dims) != 1:
        raise DataError(f"{path}: feature dimension varies")
    scheme = schemes.pop()
    X = np.stack([r[3] for r in rows])
    if scheme in ("RAW", "ROI", "ROI+M"):
        # cube schemes are stored flat; restore (C, E, E, E)
        c = 6 if scheme == "ROI+M" else 3
        e = round((X.shape[1] / c) ** (1 / 3))
        if c * e ** 3 != X.shape[1]:
            raise FormatError(f"{path}: {X.shape[1]} values do not form {c} cubes")
        X = X.reshape(len(X), c, e, e, e)
    return pipeline.Dataset([r[0] for r in rows], np.array([r[1] for r in rows]), X, scheme)


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, cfg: Settings, out: Path):
    n = tuple(int(x) for x in args.n_per_class.split(",")) if args.n_per_class else cfg.synth.n_per_class
    if len(n) != 3:
        raise ConfigError("--n-per-class needs three comma-separated counts")
    samples = synthgen.gen_dataset(n, cfg.seed, cfg.synth.dims, cfg.synth.edge)
    synthgen.write_dataset(samples, out)
    print(f"wrote {len(samples)} phantoms to {out}")


def _agent_cfg(cfg: Settings):
    return dataclasses.replace(cfg.agent, seed=cfg.seed)


def cmd_train_roi(args, cfg: Settings, out: Path):
    samples = load_samples(args.data)
    edges = {s.roi.edge for _, s in samples}
    if edges != {cfg.env.edge}:
        raise ConfigError(f"env.edge = {cfg.env.edge} but the dataset ROIs have edge {sorted(edges)}")
    net, tlog = dqn.train_agent([(s.tmax, s.roi) for _, s in samples], _agent_cfg(cfg), cfg.env)
    serialize.save_qnet(net, out / "qnet.qnet")
    with (out / "train_log.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "steps", "success"])
        for i, (st, ok) in enumerate(zip(tlog.episode_steps, tlog.episode_success)):
            w.writerow([i, st, int(ok)])
    print(f"trained on {len(samples)} volumes; success rate {np.mean(tlog.episode_success):.2f}")


def cmd_locate(args, cfg: Settings, out: Path):
    net = serialize.load_qnet(args.model)
    samples = load_samples(args.data)
    rows = []
    for k, (sid, s) in enumerate(samples):
        roi = dqn.localize(net, s.tmax, cfg.locate.n_starts, cfg.seed + k, cfg.env, cfg.locate.how)
        rows.append((sid, roi, iou(roi, s.roi)))
    write_rois(rows, out / "rois.csv")
    print(f"mean IoU {np.mean([r[2] for r in rows]):.3f} over {len(rows)} samples")


def _dae_net(args, cfg: Settings, samples, rois, out: Path):
    if args.dae:
        return serialize.load_qnet(args.dae)
    cubes = [normalize_unit(extract_cube(s.volumes, rois[sid] if rois else s.roi)) for sid, s in samples]
    net, losses = dae.dae_train(cubes, cfg.dae, cfg.seed)
    serialize.save_qnet(net, out / "dae.qnet")
    with (out / "dae_loss.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mse"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])
    return net


def _build(args, cfg: Settings, out: Path, scheme: str) -> pipeline.Dataset:
    samples = load_samples(args.data)
    rois = read_rois(args.rois) if args.rois else None
    net = _dae_net(args, cfg, samples, rois, out) if scheme == "DAE" else None
    return pipeline.build_feature_dataset(samples, scheme, "agent" if rois else "ground_truth", rois, net)


def cmd_features(args, cfg: Settings, out: Path):
    scheme = args.scheme or cfg.eval.scheme
    ds = _build(args, cfg, out, scheme)
    name = scheme.replace("+", "_").lower()
    path = serialize.write_features(
        [(sid, y, scheme, x) for sid, y, x in zip(ds.ids, ds.labels, ds.X)], out / f"features_{name}.csv")
    print(f"wrote {len(ds)} x {ds.dim} features to {path}")


def _load_dataset(args, cfg: Settings, out: Path) -> pipeline.Dataset:
    if args.features:
        return _dataset_from_features(args.features)
    if args.data:
        return _build(args, cfg, out, args.scheme or cfg.eval.scheme)
    raise ConfigError("give --features or --data")


def _spec(kind: str, cfg: Settings) -> pipeline.ClassifierSpec:
    return pipeline.ClassifierSpec(kind, cfg.seed, tuple(sorted(cfg.classifier_hyper(kind).items())))


def cmd_train_clf(args, cfg: Settings, out: Path):
    kind = args.kind or cfg.eval.kind
    ds = _load_dataset(args, cfg, out)
    clf = _spec(kind, cfg).build(3)
    clf.fit(ds.X, ds.labels)
    path = out / f"model_{kind}.clf"
    classifiers.save_classifier(clf, path)
    print(f"trained {kind} on {len(ds)} samples ({ds.scheme}); training accuracy {clf.score(ds.X, ds.labels):.2f}")


def cmd_eval(args, cfg: Settings, out: Path):
    kind = args.kind or cfg.eval.kind
    mode = args.mode or cfg.eval.mode
    ds = _load_dataset(args, cfg, out)
    spec = _spec(kind, cfg)
    if mode == "direct":
        reports = [pipeline.evaluate_direct(ds, spec, cfg.eval.k, cfg.seed)]
    elif mode == "cascaded":
        reports = list(pipeline.evaluate_cascaded(ds, spec, spec, cfg.eval.k, cfg.seed))
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    name = f"eval_{mode}_{kind}_{ds.scheme.replace('+', '_').lower()}.csv"
    write_eval(reports, out / name)
    for r in reports:
        print(f"{r.mode} {r.classifier} {r.scheme}: {r.cell()}")


def cmd_report(args, cfg: Settings, out: Path):
    reports = [r for p in args.evals for r in read_eval(p)]
    csv_path, svg_path = pipeline.report_emit(reports, out)
    print(f"wrote {csv_path} and {svg_path}")


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    def global_opts(defaults: bool) -> argparse.ArgumentParser:
        # subcommands accept the global flags too, without overwriting values given before them
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        g.add_argument("--seed", type=int, default=d(None), help="global seed (overrides the config file)")
        g.add_argument("--config", type=Path, default=d(None), help="flat key = value settings file")
        g.add_argument("--out", type=Path, default=d(Path("out")), help="output directory")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_opts(False)
    p = argparse.ArgumentParser(prog="collateral", description=__doc__, parents=[global_opts(True)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a phantom dataset")
    s.add_argument("--n-per-class", default=None, help="counts for grades 0,1,2, e.g. 20,5,5")

    s = sub.add_parser("train-roi", parents=[common], help="train the cube-search agent")
    s.add_argument("--data", required=True, type=Path)

    s = sub.add_parser("locate", parents=[common], help="localize ROIs with a trained agent")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--model", required=True, type=Path)

    def data_opts(s, required):
        s.add_argument("--data", type=Path, required=required)
        s.add_argument("--scheme", choices=pipeline.SCHEMES, default=None)
        s.add_argument("--rois", type=Path, default=None, help="rois.csv from locate (default: ground truth)")
        s.add_argument("--dae", type=Path, default=None, help="trained auto-encoder for the DAE scheme")

    s = sub.add_parser("features", parents=[common], help="compute a feature CSV")
    data_opts(s, True)

    for name, helptext in (("train-clf", "fit one classifier on all samples"),
                           ("eval", "k-fold evaluation")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        data_opts(s, False)
        s.add_argument("--features", type=Path, default=None)
        s.add_argument("--kind", choices=sorted(classifiers.KINDS), default=None)
        if name == "eval":
            s.add_argument("--mode", choices=("direct", "cascaded"), default=None)

    s = sub.add_parser("report", parents=[common], help="table and chart from eval outputs")
    s.add_argument("evals", nargs="+", type=Path)
    return p


COMMANDS = {"synth": cmd_synth, "train-roi": cmd_train_roi, "locate": cmd_locate, "features": cmd_features,
            "train-clf": cmd_train_clf, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else Settings()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "settings.txt").write_text(dump_config(cfg), encoding="utf-8")
        COMMANDS[args.command](args, cfg, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CollateralError, OSError, ValueError, RuntimeError, MemoryError) as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
