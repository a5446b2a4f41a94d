"""Named experiments: localization error curves, OCSVM error counts, the
covariance baseline comparison, an end-to-end protocol run and the
strength arithmetic. Each writes metrics.csv, params.txt and trace.log under
out/<experiment>/<seed>/.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream, Stream
from .localization import MSE_COLUMNS, mse_curve
from .ocsvm import robust_cov_outliers, train
from .sequencer import strength_report
from .sim import ScenarioConfig, run_scenario

EXPERIMENTS = ("fig5", "fig6", "fig7", "fig8", "fig9_11", "e2e", "strength")

DEFAULTS = {
    "fig5": {"n_list": [4, 5, 6, 7, 8, 9, 10], "sigma2_list": [144.0], "trials": 200,
             "layout": "polygon"},
    "fig6": {"n_list": [6], "sigma2_list": [0.0, 36.0, 81.0, 144.0], "trials": 200,
             "layout": "polygon"},
    "fig7": {"n_train": 100, "n_regular": 20, "n_abnormal": 20, "nu": 0.1},
    "fig8": {"n_train": 20, "n_regular": 20, "n_abnormal": 20, "nu": 0.1},
    "fig9_11": {"datasets": ["unimodal", "bimodal", "banana"], "n": 150,
                "contamination": 0.1, "nu": 0.1, "outlier_box": 6.0},
    "e2e": {"sessions": 1000, "meters": 10, "key_bits": 256, "blocks": 32},
    "strength": {"packet_bits": 256, "block_count": 32, "key_bits": 256},
}

BLOB_CENTERS = ((2.0, 2.0), (-2.0, -2.0))
BLOB_SCALE = 0.3
ABNORMAL_BOX = 4.0
ERROR_COLUMNS = ("n_train", "training_errors", "regular_novel_errors", "abnormal_novel_errors")
BASELINE_COLUMNS = ("dataset", "n", "n_outliers", "ocsvm_errors", "covariance_errors")


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentResult:
    name: str
    seed: int
    params: dict
    columns: tuple
    rows: list
    log: list[str] = field(default_factory=list)
    extra_files: dict = field(default_factory=dict)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def params_txt(self) -> str:
        lines = [f"experiment={self.name}", f"seed={self.seed}"]
        lines += [f"{k}={_fmt(v)}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"

    def write(self, out_root) -> Path:
        out = Path(out_root) / self.name / str(self.seed)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "params.txt").write_text(self.params_txt())
        (out / "trace.log").write_text("\n".join(self.log) + ("\n" if self.log else ""))
        for name, text in self.extra_files.items():
            (out / name).write_text(text)
        return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def merge_params(name: str, overrides: dict | None) -> dict:
    if name not in EXPERIMENTS:
        raise ExperimentError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    params = dict(DEFAULTS[name])
    for k, v in (overrides or {}).items():
        if k not in params:
            raise ExperimentError(f"{name} has no parameter {k!r}")
        params[k] = v
    return params


# ---------------------------------------------------------------- data generators

def two_blob(gen: np.random.Generator, count: int) -> np.ndarray:
    """``count`` points, half around each blob centre, with spread BLOB_SCALE."""
    half = count // 2
    X = BLOB_SCALE * gen.standard_normal((count, 2))
    X[:half] += BLOB_CENTERS[0]
    X[half:] += BLOB_CENTERS[1]
    return X


def abnormal_uniform(gen: np.random.Generator, count: int, box: float = ABNORMAL_BOX) -> np.ndarray:
    return gen.uniform(-box, box, size=(count, 2))


def inlier_dataset(kind: str, gen: np.random.Generator, count: int) -> np.ndarray:
    if kind == "unimodal":
        return BLOB_SCALE * gen.standard_normal((count, 2))
    if kind == "bimodal":
        return two_blob(gen, count)
    if kind == "banana":
        x = gen.uniform(-3.0, 3.0, count)
        return np.column_stack([x, 0.4 * x * x - 1.5 + 0.25 * gen.standard_normal(count)])
    raise ExperimentError(f"unknown dataset {kind!r}")


def contaminated(kind: str, seed: int, n: int, contamination: float, box: float):
    """Inliers of ``kind`` plus a ``contamination`` share of uniform outliers; labels +1 / -1."""
    gen = RngStream(seed, Stream.DATA).child(hash_name(kind)).generator()
    n_out = int(round(contamination * n))
    X = np.vstack([inlier_dataset(kind, gen, n - n_out), abnormal_uniform(gen, n_out, box)])
    y = np.r_[np.ones(n - n_out, dtype=int), -np.ones(n_out, dtype=int)]
    return X, y


def hash_name(name: str) -> int:
    # stable across processes, unlike hash()
    return int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "big") & 0x7FFFFFFF


# ---------------------------------------------------------------- experiments

def ocsvm_error_triple(seed: int, n_train: int, n_regular: int = 20, n_abnormal: int = 20,
                       nu: float = 0.1) -> tuple[int, int, int]:
    """(training errors, regular-novel errors, abnormal-novel errors) on the two-blob data."""
    gen = RngStream(seed, Stream.DATA).generator()
    X = two_blob(gen, n_train)
    R = two_blob(gen, n_regular)
    A = abnormal_uniform(gen, n_abnormal)
    m = train(X, nu)
    return (int((m.predict(X) < 0).sum()), int((m.predict(R) < 0).sum()),
            int((m.predict(A) > 0).sum()))


def baseline_errors(kind: str, seed: int, n: int = 150, contamination: float = 0.1,
                    nu: float = 0.1, box: float = 6.0) -> tuple[int, int, int]:
    """(outlier count, OCSVM errors, covariance-baseline errors) on one contaminated set."""
    X, y = contaminated(kind, seed, n, contamination, box)
    oc = int((train(X, nu).predict(X) != y).sum())
    cov = int((robust_cov_outliers(X, contamination) != y).sum())
    return int((y < 0).sum()), oc, cov


def run_experiment(name: str, seed: int, overrides: dict | None = None) -> ExperimentResult:
    p = merge_params(name, overrides)
    if name in ("fig5", "fig6"):
        trials = int(p["trials"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rows = mse_curve([int(n) for n in p["n_list"]], [float(s) for s in p["sigma2_list"]],
                             trials, seed, layout=p["layout"])
        log = [f"n={r[0]} sigma2={r[1]:.17g} mean_mse={r[3]:.17g}" for r in rows]
        if trials < 50:
            p["warning"] = "trials_below_50"
            log += [f"warning: {w.message}" for w in caught]
        return ExperimentResult(name, seed, p, MSE_COLUMNS, rows, log)
    if name in ("fig7", "fig8"):
        triple = ocsvm_error_triple(seed, int(p["n_train"]), int(p["n_regular"]),
                                    int(p["n_abnormal"]), float(p["nu"]))
        row = (int(p["n_train"]),) + triple
        return ExperimentResult(name, seed, p, ERROR_COLUMNS, [row],
                                [f"errors training={triple[0]} regular={triple[1]} abnormal={triple[2]}"])
    if name == "fig9_11":
        rows, log = [], []
        for kind in p["datasets"]:
            n_out, oc, cov = baseline_errors(kind, seed, int(p["n"]), float(p["contamination"]),
                                             float(p["nu"]), float(p["outlier_box"]))
            rows.append((kind, int(p["n"]), n_out, oc, cov))
            log.append(f"{kind} ocsvm={oc} covariance={cov}")
        return ExperimentResult(name, seed, p, BASELINE_COLUMNS, rows, log)
    if name == "e2e":
        cfg = ScenarioConfig(seed=seed, sessions=int(p["sessions"]), meters=int(p["meters"]),
                             key_bits=int(p["key_bits"]), blocks=int(p["blocks"]))
        res = run_scenario(cfg)
        rows = [(k, v) for k, v in res.metrics.items()]
        return ExperimentResult(name, seed, p, ("metric", "value"), rows, res.trace,
                                {"alerts.csv": res.alerts_csv()})
    # strength
    rep = strength_report(int(p["packet_bits"]), int(p["block_count"]), int(p["key_bits"]))
    return ExperimentResult(name, seed, p, rep.CSV_COLUMNS, [tuple(rep.csv_row())],
                            rep.render().splitlines())
