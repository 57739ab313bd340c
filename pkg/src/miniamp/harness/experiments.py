"""Experiment orchestration and result persistence.

Results are long-format rows with the columns in ``COLUMNS``: one metric
value per row, with the matching theory prediction (state evolution or
MMSE) in the same row where one exists.  Per-seed rows carry
``stat = value``; aggregated rows carry ``seed = all`` and ``stat`` equal to
``mean`` or ``stderr``.  Timestamps never enter the rows; they go to the
run log so that identical inputs produce byte-identical CSV files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..denoisers import PriorSpec
from ..errors import DivergenceError
from ..glm_amp import adf, amp_offline_gaussian, gamp, mini_amp, vb_mean_field
from ..lowrank_amp import gmm_stream_cluster
from ..replica import mmse_recursion, phase_diagram
from ..state_evolution.glm import se_mini, se_offline
from ..state_evolution.lowrank import se_lowrank
from .config import ExperimentConfig
from .generators import generate_glm, generate_glm_stream, generate_gmm_stream
from .rng import stream

COLUMNS = ("config_hash", "experiment", "seed", "series", "batch", "alpha", "metric", "value", "theory", "stat")
PHASE_CODES = {"zero": 0, "optimal": 1, "suboptimal": 2}


class ExperimentError(RuntimeError):
    """More than half of the seeds of an experiment failed."""


@dataclass(frozen=True)
class ResultRow:
    config_hash: str
    experiment: str
    seed: str
    series: str
    batch: int
    alpha: float
    metric: str
    value: float
    theory: float | None = None
    stat: str = "value"

    def as_tuple(self):
        return tuple(getattr(self, c) for c in COLUMNS)


@dataclass
class ResultSet:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    log: list = field(default_factory=list)

    def select(self, metric=None, series=None, stat=None, seed=None):
        return [r for r in self.rows if (metric is None or r.metric == metric)
                and (series is None or r.series == series)
                and (stat is None or r.stat == stat)
                and (seed is None or r.seed == str(seed))]

    def curve(self, metric, series, stat="mean"):
        """(batches, values, theory) arrays for one aggregated series."""
        rows = sorted(self.select(metric, series, stat), key=lambda r: (r.batch, r.alpha))
        nan = float("nan")
        return (np.array([r.batch for r in rows]), np.array([r.value for r in rows]),
                np.array([nan if r.theory is None else r.theory for r in rows]))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow([_fmt(v) for v in r.as_tuple()])
    return buf.getvalue()


def rows_to_json(result: ResultSet) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    payload = {
        "config": result.config.to_dict(),
        "config_hash": result.config.config_hash(),
        "failures": result.failures,
        "rows": [{c: clean(v) for c, v in zip(COLUMNS, r.as_tuple())} for r in result.rows],
    }
    return json.dumps(payload, indent=1, sort_keys=True)


def write_results(result: ResultSet, path, fmt="csv"):
    """Write rows as CSV or JSON and the timestamped run log next to them."""
    text = rows_to_csv(result.rows) if fmt == "csv" else rows_to_json(result)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    with open(f"{path}.log", "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _aggregate(rows, config_hash, experiment):
    groups = {}
    for r in rows:
        groups.setdefault((r.series, r.batch, r.alpha, r.metric), []).append(r)
    out = []
    for (series, batch, alpha, metric), grp in groups.items():
        vals = np.array([r.value for r in grp])
        theory = grp[0].theory
        mean = float(np.mean(vals))
        err = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        out.append(ResultRow(config_hash, experiment, "all", series, batch, alpha, metric, mean, theory, "mean"))
        out.append(ResultRow(config_hash, experiment, "all", series, batch, alpha, metric, err, None, "stderr"))
    return out


def _run_seeds(task, seeds, threads):
    """Call ``task(seed)`` per seed; failures are returned instead of raised."""

    def guarded(seed):
        try:
            return seed, task(seed), None
        except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as err:
            return seed, None, f"{type(err).__name__}: {err}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(guarded, seeds))
    return [guarded(s) for s in seeds]


class _Runner:
    def __init__(self, cfg: ExperimentConfig, threads=1):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.threads = max(int(threads), 1)
        self.result = ResultSet(cfg)
        self.prior = cfg.prior_spec()
        self.channel = cfg.channel_spec()

    def row(self, seed, series, batch, alpha, metric, value, theory=None, stat="value"):
        theory = None if theory is None else float(theory)
        return ResultRow(self.hash, self.cfg.name, str(seed), series, int(batch), float(alpha), metric,
                         float(value), theory, stat)

    def seeded(self, task, series):
        per_seed = []
        outcomes = _run_seeds(task, self.cfg.seeds, self.threads)
        for seed, rows, error in outcomes:
            if error is None:
                per_seed.extend(rows)
            else:
                self.result.failures.append({"seed": seed, "series": series, "error": error})
                self.result.log.append({"time": time.time(), "event": "seed_failed", "seed": seed,
                                        "series": series, "error": error})
        failed = sum(1 for _, _, e in outcomes if e is not None)
        if failed * 2 > len(outcomes):
            raise ExperimentError(f"{failed} of {len(outcomes)} seeds failed for series {series}")
        self.result.rows.extend(per_seed)
        self.result.rows.extend(_aggregate(per_seed, self.hash, self.cfg.name))

    def theory_rows(self, series, values, alpha_b, metric="E"):
        for k, v in enumerate(values):
            self.result.rows.append(self.row("", series, k + 1, alpha_b * (k + 1), metric, v))

    # experiment kinds -------------------------------------------------

    def glm_stream(self):
        cfg = self.cfg
        for ab in cfg.alpha_b:
            series = f"{cfg.method}:alpha_b={ab:g}"
            theory = None
            if cfg.method == "mini_amp":
                theory = se_mini(self.prior, self.channel, ab, cfg.batches_for(ab), t_max=max(cfg.t_max, 2000)).E_final

            def task(seed, ab=ab, theory=theory):
                batches = generate_glm_stream(cfg.N, ab, cfg.batches_for(ab), self.prior, self.channel, seed, "glm")
                mses = _stream_mse(cfg, batches, self.prior, self.channel)
                return [self.row(seed, series, k + 1, ab * (k + 1), "mse", m, None if theory is None else theory[k])
                        for k, m in enumerate(mses)]

            self.seeded(task, series)

    def glm_offline(self):
        cfg = self.cfg
        for i, alpha in enumerate(cfg.alphas):
            theory = se_offline(self.prior, self.channel, alpha).E_final[0]
            series = f"offline:alpha={alpha:g}"

            def task(seed, alpha=alpha, theory=theory, i=i):
                M = max(int(round(alpha * cfg.N)), 1)
                problem = generate_glm(cfg.N, M, self.prior, self.channel, stream(seed, "glm_offline", i))
                if self.channel.kind == "gaussian":
                    x_hat, _ = amp_offline_gaussian(problem, t_max=cfg.t_max, tol=cfg.tol, damping=cfg.damping)
                else:
                    x_hat, _ = gamp(problem, t_max=cfg.t_max, tol=cfg.tol, damping=cfg.damping)
                mse = float(np.mean((x_hat - problem.x0) ** 2))
                return [self.row(seed, series, 1, alpha, "mse", mse, theory)]

            self.seeded(task, series)

    def se_sweep(self):
        cfg = self.cfg
        for ab in cfg.alpha_b:
            traj = se_mini(self.prior, self.channel, ab, cfg.batches_for(ab), t_max=max(cfg.t_max, 2000))
            self.theory_rows(f"se:alpha_b={ab:g}", traj.E_final, ab)
        for alpha in cfg.alphas:
            E = se_offline(self.prior, self.channel, alpha, t_max=max(cfg.t_max, 2000)).E_final[0]
            self.result.rows.append(self.row("", "se:offline", 1, alpha, "E", E))

    def landscape(self):
        cfg = self.cfg
        delta = self.channel.delta
        for ab in cfg.alpha_b:
            curve = mmse_recursion(self.prior, delta, ab, cfg.batches_for(ab), keep_scans=True)
            se = se_mini(self.prior, self.channel, ab, cfg.batches_for(ab), t_max=max(cfg.t_max, 2000)).E_final
            series = f"landscape:alpha_b={ab:g}"
            for k, scan in enumerate(curve.scans):
                a = ab * (k + 1)
                self.result.rows.append(self.row("", series, k + 1, a, "n_minima", scan.n_minima))
                self.result.rows.append(self.row("", series, k + 1, a, "mmse", curve.mmse[k]))
                self.result.rows.append(self.row("", series, k + 1, a, "se_mse", se[k], curve.mmse[k]))

    def phase_diagram(self):
        cfg = self.cfg
        diagram = phase_diagram(self.prior, self.channel.delta, cfg.alpha_b, cfg.num_batches)
        for ab, batch, mm, amp_mse, label in diagram.rows():
            series = f"phase:alpha_b={ab:g}"
            a = ab * batch
            self.result.rows.append(self.row("", series, batch, a, "mmse", mm))
            self.result.rows.append(self.row("", series, batch, a, "amp_mse", amp_mse, mm))
            self.result.rows.append(self.row("", series, batch, a, "phase", PHASE_CODES[label]))

    def cluster_stream(self):
        cfg = self.cfg
        prior_U = self.prior if self.prior.kind in ("gaussian", "truncated_nonneg_gaussian") \
            else PriorSpec.gaussian(variance=cfg.sigma2)
        for ab in cfg.alpha_b:
            series = f"cluster:alpha_b={ab:g}"
            theory = None
            if prior_U.kind == "gaussian" and prior_U.mean == 0.0:
                traj = se_lowrank(cfg.R, cfg.delta, prior_U, ab, cfg.batches_for(ab))
                theory = (traj.centroid_mse, 1.0 - traj.label_accuracy)

            def task(seed, ab=ab, theory=theory):
                data = generate_gmm_stream(cfg.N, ab, cfg.batches_for(ab), cfg.R, cfg.delta, seed, "gmm", prior_U)
                truth = (data[0].U, [d.labels for d in data])
                _, _, rep = gmm_stream_cluster([d.Y for d in data], cfg.R, prior_U, delta=cfg.delta,
                                               learn_noise=cfg.learn_noise, init_batches=cfg.init_batches,
                                               t_max=min(cfg.t_max, 50), seed=seed, truth=truth)
                rows = []
                for k in range(cfg.batches_for(ab)):
                    th_mse = None if theory is None else theory[0][k]
                    th_loss = None if theory is None else theory[1][k]
                    rows.append(self.row(seed, series, k + 1, ab * (k + 1), "centroid_mse", rep.centroid_mse[k],
                                         th_mse))
                    rows.append(self.row(seed, series, k + 1, ab * (k + 1), "zero_one_loss",
                                         rep.zero_one_loss[k], th_loss))
                return rows

            self.seeded(task, series)

    def tmax_study(self):
        cfg = self.cfg
        for ab in cfg.alpha_b:
            for tm in cfg.t_max_values:
                label = "converged" if tm is None else str(tm)
                series = f"t_max={label}:alpha_b={ab:g}"
                se_t = 2000 if tm is None else tm
                theory = se_mini(self.prior, self.channel, ab, cfg.batches_for(ab), t_max=se_t).E_final

                def task(seed, ab=ab, tm=tm, theory=theory):
                    batches = generate_glm_stream(cfg.N, ab, cfg.batches_for(ab), self.prior, self.channel, seed, "glm")
                    x_hat, _, rep = mini_amp(batches, self.prior, self.channel, t_max=cfg.t_max if tm is None else tm,
                                             tol=cfg.tol, damping=cfg.damping)
                    return [self.row(seed, series, k + 1, ab * (k + 1), "mse", m, theory[k])
                            for k, m in enumerate(rep.batch_mse)]

                self.seeded(task, series)


def _stream_mse(cfg, batches, prior, channel):
    if cfg.method == "mini_amp":
        _, _, rep = mini_amp(batches, prior, channel, t_max=cfg.t_max, tol=cfg.tol, damping=cfg.damping)
        return rep.batch_mse
    if cfg.method == "vb":
        _, _, rep = vb_mean_field(batches, prior, learn_noise=cfg.learn_noise, t_max=cfg.t_max, tol=cfg.tol)
        return rep.batch_mse
    mses, acc = [], None
    x0 = batches[0].x0
    for b in batches:
        x_hat, acc, _ = adf(b.Phi, b.y, prior, channel, accumulator=acc)
        mses.append(float(np.mean((x_hat - x0) ** 2)))
    return mses


def run_experiment(cfg: ExperimentConfig, threads=1) -> ResultSet:
    """Run the experiment described by ``cfg`` and return its rows.

    Divergence of a single seed is recorded in ``failures``; more than half
    failing raises ExperimentError.
    """
    runner = _Runner(cfg, threads)
    runner.result.log.append({"time": time.time(), "event": "start", "config_hash": runner.hash,
                              "kind": cfg.kind})
    getattr(runner, cfg.kind)()
    runner.result.log.append({"time": time.time(), "event": "finish", "rows": len(runner.result.rows)})
    return runner.result
