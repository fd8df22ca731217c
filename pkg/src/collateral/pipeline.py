"""Feature assembly, stratified k-fold evaluation (direct and cascaded) and reports."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import Classifier, make_classifier
from .dae import encode
from .descriptors import hog_histogram, lbp_histogram
from .errors import ConfigError, DataError, ShapeError
from .volume import CubeState, Volume3D, extract_cube, mirror_corner

SCHEMES = ("RAW", "ROI", "ROI+M", "DAE", "HOG", "LBP")
MODES = ("three_class", "cascaded_stage", "cascaded_final")
MODE_TITLES = {"three_class": "Three classes", "cascaded_stage": "Cascaded two classes",
               "cascaded_final": "Cascaded final"}
GOOD = 2


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    ids: list
    labels: np.ndarray
    X: np.ndarray
    scheme: str
    rois: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(set(self.ids)) != len(self.ids):
            raise DataError("sample ids are not unique")
        if not len(self.ids) == len(self.labels) == len(self.X):
            raise ShapeError("ids, labels and features differ in length")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(np.prod(self.X.shape[1:]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset([self.ids[i] for i in idx], self.labels[idx], self.X[idx], self.scheme,
                       {self.ids[i]: self.rois[self.ids[i]] for i in idx if self.ids[i] in self.rois})


def mean_pool(data: np.ndarray, size: int = 64) -> np.ndarray:
    """Block means down to ``size`` per axis; every axis must be a multiple of ``size``."""
    f = []
    for n in data.shape:
        if n % size:
            raise ShapeError(f"axis of length {n} is not a multiple of {size}")
        f.append(n // size)
    return data.reshape(size, f[0], size, f[1], size, f[2]).mean(axis=(1, 3, 5))


def _unit(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    return ((a - lo) / (hi - lo)).astype(np.float32) if hi > lo else np.zeros_like(a, dtype=np.float32)


def _roi_channels(vols, roi: CubeState) -> np.ndarray:
    cube = extract_cube(vols, roi)
    return np.stack([_unit(c) for c in cube.channels])


def _roi_mirror_channels(vols, roi: CubeState) -> np.ndarray:
    dims = vols[0].dims
    a = extract_cube(vols, roi)
    b = extract_cube(vols, mirror_corner(roi, dims))
    out = []
    # each map is scaled jointly with its mirror so the side-to-side contrast survives
    for ca, cb in zip(a.channels, b.channels):
        lo, hi = min(ca.min(), cb.min()), max(ca.max(), cb.max())
        span = hi - lo if hi > lo else 1.0
        out += [(ca - lo) / span, (cb - lo) / span]
    return np.stack(out[0::2] + out[1::2]).astype(np.float32)


def sample_features(vols, roi: CubeState, scheme: str, dae_net=None, raw_size: int = 64) -> np.ndarray:
    """Feature array of one sample (cube channels for RAW/ROI/ROI+M, vectors otherwise)."""
    vols = [v if isinstance(v, Volume3D) else Volume3D(v) for v in vols]
    if scheme == "RAW":
        return np.stack([_unit(mean_pool(v.data, raw_size)) for v in vols])
    if scheme == "ROI":
        return _roi_channels(vols, roi)
    if scheme == "ROI+M":
        return _roi_mirror_channels(vols, roi)
    if scheme == "DAE":
        if dae_net is None:
            raise ConfigError("scheme DAE needs a trained auto-encoder")
        return encode(dae_net, _roi_channels(vols, roi)).astype(np.float32)
    if scheme == "HOG":
        return hog_histogram(extract_cube(vols, roi)).astype(np.float32)
    if scheme == "LBP":
        return lbp_histogram(extract_cube(vols, roi)).astype(np.float32)
    raise ConfigError(f"unknown scheme {scheme!r}")


def build_feature_dataset(phantoms, scheme: str, roi_source: str = "ground_truth", rois: dict | None = None,
                          dae_net=None, raw_size: int = 64) -> Dataset:
    """Features for ``[(sample_id, Phantom), ...]``.

    ``roi_source="agent"`` takes the cube of each sample from ``rois``
    (sample id -> CubeState), e.g. the output of ``dqn.localize``.
    """
    if roi_source not in ("ground_truth", "agent"):
        raise ConfigError(f"roi_source must be ground_truth or agent, got {roi_source!r}")
    if roi_source == "agent" and rois is None:
        raise ConfigError("roi_source=agent needs localized ROIs")
    ids, labels, feats, used = [], [], [], {}
    for sid, ph in phantoms:
        roi = ph.roi if roi_source == "ground_truth" else rois[sid]
        ids.append(sid)
        labels.append(ph.label)
        feats.append(sample_features(ph.volumes, roi, scheme, dae_net, raw_size))
        used[sid] = roi
    return Dataset(ids, np.array(labels), np.stack(feats), scheme, used)


# ---------------------------------------------------------------- folds

def kfold_split(labels, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Stratified partition of ``range(len(labels))`` into ``k`` test folds.

    Each class is shuffled and dealt round-robin, continuing where the
    previous class stopped, so per-class counts differ by at most one across
    folds. A class with fewer than ``k`` members cannot appear in every fold;
    a warning is issued and the split is still an exact partition.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ConfigError("k must be >= 2")
    if n < k:
        raise DataError(f"{n} samples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    pos = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            warnings.warn(f"class {c} has {len(members)} < {k} members; folds are not fully stratified",
                          stacklevel=2)
        for i in rng.permutation(members):
            folds[pos % k].append(int(i))
            pos += 1
    return [np.array(sorted(f), dtype=int) for f in folds]


def leak_check(train_ids, test_ids) -> int:
    """Number of ids shared by the two sets; evaluation refuses to run when it is not 0."""
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise DataError(f"train/test leak: {sorted(overlap)[:5]}")
    return 0


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    seed: int = 0
    hyper: tuple = ()

    def build(self, n_classes: int) -> Classifier:
        hyper = dict(self.hyper)
        if self.kind == "cnn":
            hyper.setdefault("n_classes", n_classes)
        return make_classifier(self.kind, self.seed, **hyper)


def _resolve(spec) -> ClassifierSpec | object:
    return ClassifierSpec(spec) if isinstance(spec, str) else spec


def _fit_predict(spec, Xtr, ytr, Xte, n_classes):
    if isinstance(spec, ClassifierSpec):
        clf = spec.build(n_classes)
    else:
        factory = isinstance(spec, type) or (callable(spec) and not hasattr(spec, "fit"))
        clf = spec(n_classes) if factory else spec
    clf.fit(Xtr, ytr)
    return np.asarray(clf.predict(Xte))


@dataclass
class EvalReport:
    mode: str
    classifier: str
    scheme: str
    fold_accuracies: list
    confusion: np.ndarray
    predictions: dict = field(default_factory=dict)
    leak_checks: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))

    @property
    def accuracy(self) -> float:
        """Pooled accuracy over all test predictions."""
        return float(np.trace(self.confusion) / np.sum(self.confusion))

    def cell(self) -> str:
        return format_cell(self.mean, self.std)


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f}(±{std:.2f})"


def _name(spec) -> str:
    if isinstance(spec, ClassifierSpec):
        return spec.kind
    return getattr(spec, "kind", spec.__name__ if isinstance(spec, type) else type(spec).__name__)


def evaluate_direct(ds: Dataset, spec, k: int = 5, seed: int = 0) -> EvalReport:
    """Three-class k-fold accuracy of one classifier on one dataset."""
    spec = _resolve(spec)
    folds = kfold_split(ds.labels, k, seed)
    accs, conf, preds, checks = [], np.zeros((3, 3), dtype=int), {}, []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(len(ds)), test)
        checks.append((f, "direct", leak_check([ds.ids[i] for i in train], [ds.ids[i] for i in test])))
        p = _fit_predict(spec, ds.X[train], ds.labels[train], ds.X[test], 3)
        y = ds.labels[test]
        accs.append(float(np.mean(p == y)))
        np.add.at(conf, (y, p), 1)
        preds.update({ds.ids[i]: int(v) for i, v in zip(test, p)})
    return EvalReport("three_class", _name(spec), ds.scheme, accs, conf, preds, checks)


def evaluate_cascaded(ds: Dataset, spec_stage1, spec_stage2=None, k: int = 5, seed: int = 0):
    """Good-vs-not-good, then bad-vs-medium for samples routed as not good.

    Stage 2 is trained on the training samples whose true label is 0 or 1.
    Returns ``(stage1_report, final_report)``.
    """
    spec1 = _resolve(spec_stage1)
    spec2 = _resolve(spec_stage2 if spec_stage2 is not None else spec_stage1)
    folds = kfold_split(ds.labels, k, seed)
    acc1, accf = [], []
    conf1, conff = np.zeros((2, 2), dtype=int), np.zeros((3, 3), dtype=int)
    pred1, predf, checks = {}, {}, []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(len(ds)), test)
        test_ids = [ds.ids[i] for i in test]
        checks.append((f, "stage1", leak_check([ds.ids[i] for i in train], test_ids)))
        y_tr, y_te = ds.labels[train], ds.labels[test]
        b_tr, b_te = (y_tr == GOOD).astype(int), (y_te == GOOD).astype(int)
        p1 = _fit_predict(spec1, ds.X[train], b_tr, ds.X[test], 2)
        acc1.append(float(np.mean(p1 == b_te)))
        np.add.at(conf1, (b_te, p1), 1)

        final = np.full(len(test), GOOD)
        routed = np.flatnonzero(p1 == 0)
        stage2_train = train[y_tr != GOOD]
        checks.append((f, "stage2", leak_check([ds.ids[i] for i in stage2_train], test_ids)))
        if len(routed):
            classes = np.unique(ds.labels[stage2_train])
            if len(classes) == 1:
                final[routed] = classes[0]
            elif len(classes) > 1:
                final[routed] = _fit_predict(spec2, ds.X[stage2_train], ds.labels[stage2_train],
                                             ds.X[test][routed], 2)
            else:
                final[routed] = 0
        accf.append(float(np.mean(final == y_te)))
        np.add.at(conff, (y_te, final), 1)
        pred1.update({sid: int(v) for sid, v in zip(test_ids, p1)})
        predf.update({sid: int(v) for sid, v in zip(test_ids, final)})
    name = _name(spec1)
    return (EvalReport("cascaded_stage", name, ds.scheme, acc1, conf1, pred1, checks),
            EvalReport("cascaded_final", name, ds.scheme, accf, conff, predf, checks))


# ---------------------------------------------------------------- reports

def _table(reports):
    rows, cols, cells = [], [], {}
    for r in reports:
        key = (r.mode, r.classifier)
        if key not in rows:
            rows.append(key)
        if r.scheme not in cols:
            cols.append(r.scheme)
        cells[key + (r.scheme,)] = r
    cols.sort(key=SCHEMES.index)
    rows.sort(key=lambda mk: MODES.index(mk[0]) if mk[0] in MODES else len(MODES))
    return rows, cols, cells


def report_csv(reports) -> str:
    rows, cols, cells = _table(reports)
    lines = [",".join(["mode", "classifier", *cols])]
    for mode, clf in rows:
        vals = [cells[(mode, clf, c)].cell() if (mode, clf, c) in cells else "" for c in cols]
        lines.append(",".join([mode, clf, *vals]))
    return "\n".join(lines) + "\n"


_PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948")


def report_svg(reports, bar_w: int = 14, group_gap: int = 24, height: int = 220) -> str:
    """Grouped bar chart: one group per (mode, classifier), one bar per scheme."""
    rows, cols, cells = _table(reports)
    left, top, bottom = 40, 20, 60
    group_w = bar_w * len(cols) + group_gap
    width = left + group_w * len(rows) + 20 + 90
    h = height
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{top + h + bottom}" '
           f'font-family="sans-serif" font-size="10">']
    out.append(f'<line x1="{left}" y1="{top + h}" x2="{left + group_w * len(rows)}" y2="{top + h}" stroke="black"/>')
    for t in range(0, 11, 2):
        y = top + h - h * t / 10
        out.append(f'<text x="{left - 4}" y="{y + 3:.1f}" text-anchor="end">{t / 10:.1f}</text>')
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + group_w * len(rows)}" y2="{y:.1f}" '
                   f'stroke="#ddd"/>')
    for g, (mode, clf) in enumerate(rows):
        x0 = left + group_gap / 2 + g * group_w
        for j, c in enumerate(cols):
            r = cells.get((mode, clf, c))
            if r is None:
                continue
            bh = h * r.mean
            x = x0 + j * bar_w
            out.append(f'<rect x="{x:.1f}" y="{top + h - bh:.1f}" width="{bar_w - 2}" height="{bh:.1f}" '
                       f'fill="{_PALETTE[SCHEMES.index(c) % len(_PALETTE)]}"><title>{mode} {clf} {c} '
                       f'{r.cell()}</title></rect>')
            ey0, ey1 = top + h - h * min(1.0, r.mean + r.std), top + h - h * max(0.0, r.mean - r.std)
            cx = x + (bar_w - 2) / 2
            out.append(f'<line x1="{cx:.1f}" y1="{ey0:.1f}" x2="{cx:.1f}" y2="{ey1:.1f}" stroke="black"/>')
        label = f"{clf} / {MODE_TITLES.get(mode, mode)}"
        lx = x0 + bar_w * len(cols) / 2
        out.append(f'<text x="{lx:.1f}" y="{top + h + 12}" text-anchor="end" '
                   f'transform="rotate(-30 {lx:.1f} {top + h + 12})">{label}</text>')
    lx = left + group_w * len(rows) + 20
    for j, c in enumerate(cols):
        y = top + 12 * j
        out.append(f'<rect x="{lx}" y="{y}" width="10" height="10" '
                   f'fill="{_PALETTE[SCHEMES.index(c) % len(_PALETTE)]}"/>')
        out.append(f'<text x="{lx + 14}" y="{y + 9}">{c}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_emit(reports, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg`` (``path`` may be a directory)."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to emit")
    path = Path(path)
    if path.is_dir() or not path.suffix:
        path.mkdir(parents=True, exist_ok=True)
        path = path / "report"
    csv_path, svg_path = path.with_suffix(".csv"), path.with_suffix(".svg")
    csv_path.write_text(report_csv(reports), encoding="utf-8")
    svg_path.write_text(report_svg(reports), encoding="utf-8")
    return csv_path, svg_path


def write_predictions(report: EvalReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "mode", "classifier", "scheme", "prediction"])
        for sid in sorted(report.predictions):
            w.writerow([sid, report.mode, report.classifier, report.scheme, report.predictions[sid]])
    return path
