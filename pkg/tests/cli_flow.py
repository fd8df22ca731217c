"""A small end-to-end run of every CLI subcommand, shared by the CLI and acceptance tests."""
from pathlib import Path

from collateral.cli import main

TINY_CONFIG = """
seed = 5
synth.dims = 64,64,64
synth.edge = 32
env.edge = 32
env.max_steps = 20
agent.episodes = 3
agent.warmup = 32
agent.batch_size = 8
locate.n_starts = 3
dae.edge = 32
dae.epochs = 2
rf.n_estimators = 10
cnn.epochs = 1
eval.k = 3
"""

STEPS = [
    ("synth", ["synth", "--n-per-class", "3,3,3"], "data"),
    ("train-roi", ["train-roi", "--data", "{data}"], "roi"),
    ("locate", ["locate", "--data", "{data}", "--model", "{roi}/qnet.qnet"], "loc"),
    ("features", ["features", "--data", "{data}", "--scheme", "HOG", "--rois", "{loc}/rois.csv"], "feat"),
    ("features-dae", ["features", "--data", "{data}", "--scheme", "DAE"], "dae"),
    ("train-clf", ["train-clf", "--features", "{feat}/features_hog.csv", "--kind", "rf"], "clf"),
    ("train-clf-cnn", ["train-clf", "--data", "{data}", "--scheme", "ROI", "--kind", "cnn"], "cnn"),
    ("eval-direct", ["eval", "--features", "{feat}/features_hog.csv", "--kind", "rf", "--mode", "direct"], "ev1"),
    ("eval-cascaded", ["eval", "--features", "{dae}/features_dae.csv", "--kind", "svm", "--mode", "cascaded"],
     "ev2"),
    ("report", ["report", "{ev1}/eval_direct_rf_hog.csv", "{ev2}/eval_cascaded_svm_dae.csv"], "rep"),
]


def run_flow(root) -> dict:
    """Run every step under ``root``; returns ``{step: (exit code, output dir)}``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.txt"
    cfg.write_text(TINY_CONFIG)
    dirs = {name: str(root / name) for _, _, name in STEPS}
    out = {}
    for step, argv, name in STEPS:
        args = [a.format(**dirs) for a in argv] + ["--config", str(cfg), "--out", dirs[name]]
        out[step] = (main(args), Path(dirs[name]))
    return out


def snapshot(directory) -> dict:
    directory = Path(directory)
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}
