"""Scripted studies on the sawtooth regression task.

* construction sweeps: train a dense MLP, replace each layer by a deep or wide
  DLoR block and watch the sup-error shrink as h -> 0;
* training study: fixed-budget test error and epochs-to-threshold for the deep
  and wide architectures over k substructures;
* parameter-matched comparison against dense MLPs;
* spectral split of trained DLoR weights into identity / low-rank / branch parts.

Every function is a pure function of its arguments and seeds.  Results carry
``to_csv`` / ``to_json`` helpers; writing files is left to the caller.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg as la
from .activation import make_activation
from .construct import simulate, transfer_network
from .errors import DivergedAt
from .train import (
    Dataset,
    SchedulerConfig,
    TrainConfig,
    dense_width_for,
    make_net,
    param_count,
    train,
)

DEEP_HS = tuple(10.0 ** -e for e in range(2, 9))
WIDE_HS = tuple(10.0 ** -e for e in range(1, 7))
FULL_FIXED_BUDGETS = (5000, 50000)
FULL_THRESHOLD_EPOCHS = 50000
FULL_SEEDS = 10
REDUCED_SEEDS = 3
REDUCED_FACTOR = 10


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def run_tasks(fn, tasks, jobs=1) -> list:
    """Map ``fn`` over ``tasks``; with ``jobs > 1`` a bounded process pool is used.  Order is preserved."""
    tasks = list(tasks)
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class SawtoothSpec:
    lam: float = 3.7
    lo: float = -2.0
    hi: float = 2.0
    n_points: int = 400


def sawtooth(x, lam=3.7):
    """|((x lam) mod 2) - 1| with the mod taken into [0, 2) for negative arguments too."""
    v = np.asarray(x, dtype=float) * lam
    return np.abs(np.mod(np.mod(v, 2.0) + 2.0, 2.0) - 1.0)


def make_sawtooth(spec: SawtoothSpec = SawtoothSpec()) -> Dataset:
    """Uniform grid; even-indexed points train, odd-indexed points test."""
    if spec.n_points % 2:
        raise ValueError("n_points must be even for an even split")
    x = np.linspace(spec.lo, spec.hi, spec.n_points)
    y = sawtooth(x, spec.lam)
    return Dataset(x[0::2], y[0::2], x[1::2], y[1::2])


# ---------------------------------------------------------------- construction sweeps

BASELINE_EPOCHS = 2000
BASELINE_LR = 0.01


def train_baseline_mlp(seed, epochs=BASELINE_EPOCHS, spec: SawtoothSpec = SawtoothSpec()):
    """Width-16 softplus MLP with four hidden layers (1->16, then three 16x16) and a linear readout."""
    data = make_sawtooth(spec)
    net = make_net("dense_mlp", 16, 1, make_activation("softplus"), seed, n_hidden=3)
    result = train(net, data, TrainConfig(lr=BASELINE_LR, epochs=epochs, scheduler=None, seed=seed,
                                          record_every=max(1, epochs // 20)))
    return net, result


def mlp_layers(net) -> list:
    p = net.params
    layers = [{"w": p["w_in"], "b": p["b_in"], "activation": True}]
    for i in range(net.n_hidden):
        layers.append({"w": p[f"w{i}"], "b": p[f"b{i}"], "activation": True})
    layers.append({"w": p["w_out"], "b": p["b_out"], "activation": False})
    return layers


@dataclass
class SweepResult:
    which: str
    seed: int
    rows: list  # (h, err_to_dense, err_to_function), h descending
    baseline_test_sup: float
    baseline_test_mse: float

    def errors(self) -> list:
        return [r[1] for r in self.rows]

    def top_decades_ok(self, n=3, ratio=0.5) -> bool:
        """Strict decrease with err(h/10) <= ratio * err(h) across the ``n`` largest h."""
        errs = self.errors()[:n]
        return all(b < a and b <= ratio * a for a, b in zip(errs, errs[1:]))

    def triangle_ok(self) -> bool:
        """err_to_function <= err_to_dense + sup |dense - f| (up to rounding) at every h."""
        return all(r[2] <= r[1] + self.baseline_test_sup + 1e-12 for r in self.rows)

    def to_csv(self) -> str:
        return _csv(["h", "err_to_dense", "err_to_function"], self.rows)

    def to_json(self) -> dict:
        return {"which": self.which, "seed": self.seed, "baseline_test_sup": self.baseline_test_sup,
                "baseline_test_mse": self.baseline_test_mse, "top_decades_ok": self.top_decades_ok(),
                "triangle_ok": self.triangle_ok(),
                "rows": [{"h": h, "err_to_dense": a, "err_to_function": b} for h, a, b in self.rows]}


def run_construction_sweep(which, seed, hs=None, baseline=None, rank=6, alpha=0.8, c=0.5,
                           num_parts=3, epochs=BASELINE_EPOCHS) -> SweepResult:
    """Sup-errors of the deep or wide transfer of a trained sawtooth MLP over a decade sweep of h.

    The grid is the 200 test inputs.  The wide transfer uses ``num_parts``
    branches with betas (1, ..., 1, -(L-1)).
    """
    if which not in ("deep", "wide"):
        raise ValueError("which must be 'deep' or 'wide'")
    hs = sorted(hs or (DEEP_HS if which == "deep" else WIDE_HS), reverse=True)
    net, res = baseline if baseline is not None else train_baseline_mlp(seed, epochs)
    data = make_sawtooth()
    grid = data.x_test
    dense_out = net.forward(grid)
    target = data.y_test
    act = make_activation("softplus", c)
    layers = mlp_layers(net)
    rows = []
    for h in hs:
        plans = transfer_network(layers, act, rank, alpha, h, seed, mode=which, num_parts=num_parts)
        out = simulate(plans, grid[None, :])[0]
        rows.append((float(h), float(np.max(np.abs(out - dense_out))), float(np.max(np.abs(out - target)))))
    return SweepResult(which, seed, rows, float(np.max(np.abs(dense_out - target))), float(res.final_test_mse))


# ---------------------------------------------------------------- training study

@dataclass(frozen=True)
class StudyScale:
    budgets: tuple
    max_epochs: int
    seeds: tuple
    full: bool

    @classmethod
    def make(cls, full=False, seeds=None):
        factor = 1 if full else REDUCED_FACTOR
        budgets = tuple(b // factor for b in FULL_FIXED_BUDGETS)
        n = FULL_SEEDS if full else REDUCED_SEEDS
        return cls(budgets, FULL_THRESHOLD_EPOCHS // factor, tuple(seeds if seeds is not None else range(n)), full)


@dataclass
class RunRecord:
    arch: str
    k: int
    seed: int
    params: int
    test_mse: dict  # budget -> test MSE (nan when diverged before it)
    epochs_to_threshold: int | None
    diverged_at: int | None


def _run_one(task) -> RunRecord:
    arch, k, seed, budgets, max_epochs, threshold, lr, width = task
    data = make_sawtooth()
    kind = {"dense": "dense_mlp", "deep": "deep_dlor", "wide": "wide_dlor"}[arch]
    net = make_net(kind, width, k, make_activation("softplus"), seed)
    horizon = max(max(budgets, default=0), max_epochs)
    cfg = TrainConfig(lr=lr, epochs=horizon, scheduler=SchedulerConfig(), seed=seed,
                      record_every=max(1, horizon), snapshot_epochs=tuple(budgets))
    diverged = None
    try:
        res = train(net, data, cfg)
    except DivergedAt as exc:
        res, diverged = exc.partial, exc.epoch
    test = {b: (res.snapshots[b][1] if b in res.snapshots else math.nan) for b in budgets}
    hit = res.first_epoch_below(threshold) if threshold is not None else None
    if hit is not None and hit > max_epochs:
        hit = None
    return RunRecord(arch, k, seed, net.param_count(), test, hit, diverged)


def _quantiles(values):
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return float(med), float(q25), float(q75)


@dataclass
class ExperimentSummary:
    """Per (arch, k) medians and interquartile ranges over seeds."""

    records: list
    budgets: tuple
    threshold: float | None
    max_epochs: int
    rows: list = field(default_factory=list)

    def __post_init__(self):
        groups = {}
        for r in self.records:
            groups.setdefault((r.arch, r.k), []).append(r)
        self.rows = []
        for (arch, k), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            row = {"arch": arch, "k": k, "params": recs[0].params, "seeds": len(recs)}
            for b in self.budgets:
                med, q25, q75 = _quantiles([r.test_mse[b] for r in recs])
                row[f"test_mse_{b}_median"], row[f"test_mse_{b}_q25"], row[f"test_mse_{b}_q75"] = med, q25, q75
            if self.threshold is not None:
                hits = [r.epochs_to_threshold for r in recs]
                med, q25, q75 = _quantiles(hits)
                row["epochs_to_threshold_median"], row["epochs_to_threshold_q25"] = med, q25
                row["epochs_to_threshold_q75"] = q75
                row["success_rate"] = sum(h is not None for h in hits) / len(hits)
            row["diverged"] = sum(r.diverged_at is not None for r in recs)
            self.rows.append(row)

    def row(self, arch, k):
        for r in self.rows:
            if r["arch"] == arch and r["k"] == k:
                return r
        raise KeyError((arch, k))

    def ks(self) -> list:
        return sorted({r["k"] for r in self.rows if r["arch"] == "deep"})

    def deep_vs_wide_test(self, budget) -> dict:
        """How many k have deep median test MSE <= wide median test MSE at ``budget``."""
        key = f"test_mse_{budget}_median"
        wins = [k for k in self.ks() if self.row("deep", k)[key] <= self.row("wide", k)[key]]
        n = len(self.ks())
        return {"budget": budget, "deep_wins": len(wins), "of": n, "majority": len(wins) > n / 2}

    def deep_vs_wide_success(self) -> dict:
        wins = [k for k in self.ks() if self.row("deep", k)["success_rate"] >= self.row("wide", k)["success_rate"]]
        n = len(self.ks())
        return {"threshold": self.threshold, "deep_wins": len(wins), "of": n, "majority": len(wins) > n / 2}

    def to_csv(self) -> str:
        header = list(self.rows[0].keys()) if self.rows else ["arch", "k"]
        return _csv(header, [[r[h] for h in header] for r in self.rows])

    def runs_csv(self) -> str:
        header = ["arch", "k", "seed", "params"] + [f"test_mse_{b}" for b in self.budgets] + [
            "epochs_to_threshold", "diverged_at"]
        rows = [[r.arch, r.k, r.seed, r.params] + [float(r.test_mse[b]) for b in self.budgets]
                + ["" if r.epochs_to_threshold is None else r.epochs_to_threshold,
                   "" if r.diverged_at is None else r.diverged_at] for r in self.records]
        return _csv(header, rows)

    def to_json(self) -> dict:
        out = {"budgets": list(self.budgets), "threshold": self.threshold, "max_epochs": self.max_epochs,
               "rows": self.rows}
        if self.budgets and any(r["arch"] == "wide" for r in self.rows):
            out["deep_vs_wide_test"] = self.deep_vs_wide_test(min(self.budgets))
        if self.threshold is not None and any(r["arch"] == "wide" for r in self.rows):
            out["deep_vs_wide_success"] = self.deep_vs_wide_success()
        return out


def run_training_study(ks=tuple(range(1, 17)), seeds=(0, 1, 2), budgets=(500, 5000), threshold=1e-3,
                       max_epochs=5000, lr=0.005, width=16, include_dense=True, jobs=1) -> ExperimentSummary:
    """Deep and wide nets for every (k, seed), plus a width-matched dense baseline per seed.

    One trajectory per run serves every budget and the threshold: the optimizer
    and scheduler never look at the budget, so the state after ``b`` epochs of
    a long run equals the final state of a ``b``-epoch run.  Dense rows carry k = 0.
    """
    tasks = []
    if include_dense:
        tasks += [("dense", 1, s, budgets, max_epochs, threshold, lr, width) for s in seeds]
    tasks += [(arch, k, s, budgets, max_epochs, threshold, lr, width)
              for arch in ("deep", "wide") for k in ks for s in seeds]
    records = run_tasks(_run_one, tasks, jobs)
    for r in records:
        if r.arch == "dense":
            r.k = 0
    return ExperimentSummary(records, tuple(budgets), threshold, max_epochs)


def run_fixed_budget(ks=tuple(range(1, 17)), full=False, seeds=None, jobs=1) -> ExperimentSummary:
    scale = StudyScale.make(full, seeds)
    return run_training_study(ks, scale.seeds, scale.budgets, None, max(scale.budgets), jobs=jobs)


def run_time_to_threshold(threshold=1e-3, ks=tuple(range(1, 17)), full=False, seeds=None, jobs=1) -> ExperimentSummary:
    scale = StudyScale.make(full, seeds)
    return run_training_study(ks, scale.seeds, (), threshold, scale.max_epochs, include_dense=False, jobs=jobs)


def run_training(ks=tuple(range(1, 17)), full=False, seeds=None, threshold=1e-3, jobs=1) -> ExperimentSummary:
    """Fixed-budget and time-to-threshold figures from one set of runs."""
    scale = StudyScale.make(full, seeds)
    return run_training_study(ks, scale.seeds, scale.budgets, threshold, scale.max_epochs, jobs=jobs)


# ---------------------------------------------------------------- parameter matching

def param_table(ks=(1, 2, 4, 8, 16), width=16) -> list:
    """(k, dense_width, dense, deep, wide); the dense width is the one whose count is closest
    to the mean of the deep and wide counts."""
    rows = []
    for k in ks:
        deep = param_count("deep_dlor", width, k)
        wide = param_count("wide_dlor", width, k)
        w = dense_width_for((deep + wide) / 2)
        rows.append((k, w, param_count("dense_mlp", w), deep, wide))
    return rows


@dataclass
class ParamMatchedResult:
    table: list
    summary: ExperimentSummary

    def table_csv(self) -> str:
        return _csv(["k", "dense_width", "dense", "deep", "wide"], self.table)

    def to_json(self) -> dict:
        return {"table": [dict(zip(["k", "dense_width", "dense", "deep", "wide"], r)) for r in self.table],
                "summary": self.summary.to_json()}


def _run_dense_matched(task):
    k, w, seed, epochs, lr = task
    rec = _run_one(("dense", 1, seed, (epochs,), epochs, None, lr, w))
    rec.k = k
    return rec


def run_param_matched(ks=(1, 2, 4, 8, 16), seeds=None, epochs=None, full=False, jobs=1) -> ParamMatchedResult:
    """Deep, wide and parameter-matched dense nets, median test MSE over seeds after ``epochs``."""
    seeds = tuple(seeds if seeds is not None else range(5))
    epochs = epochs or (FULL_FIXED_BUDGETS[0] if full else FULL_FIXED_BUDGETS[0] // REDUCED_FACTOR)
    table = param_table(ks)
    structured = run_training_study(ks, seeds, (epochs,), None, epochs, include_dense=False, jobs=jobs)
    dense = run_tasks(_run_dense_matched, [(k, w, s, epochs, 0.005) for k, w, *_ in table for s in seeds], jobs)
    summary = ExperimentSummary(structured.records + dense, (epochs,), None, epochs)
    return ParamMatchedResult(table, summary)


# ---------------------------------------------------------------- spectral split

@dataclass
class SpectralReport:
    sigma: np.ndarray
    lowrank_contrib: np.ndarray
    identity_contrib: np.ndarray
    sigma_total: np.ndarray
    branch_signed: list
    deep_layer: int

    @property
    def branch_contribs(self) -> list:
        return [np.abs(b) for b in self.branch_signed]

    def deep_additivity_error(self) -> float:
        return float(np.max(np.abs(self.sigma - (self.lowrank_contrib + self.identity_contrib))))

    def wide_additivity_error(self) -> float:
        return float(np.max(np.abs(self.sigma_total - np.sum(self.branch_signed, axis=0))))

    def deep_csv(self) -> str:
        rows = [(i, float(s), float(l), float(d)) for i, (s, l, d) in
                enumerate(zip(self.sigma, self.lowrank_contrib, self.identity_contrib))]
        return _csv(["index", "sigma", "lowrank_contrib", "identity_contrib"], rows)

    def wide_csv(self) -> str:
        header = ["index", "sigma_total"] + [f"branch_{l}" for l in range(len(self.branch_signed))]
        rows = [[i, float(self.sigma_total[i])] + [float(abs(b[i])) for b in self.branch_signed]
                for i in range(self.sigma_total.size)]
        return _csv(header, rows)

    def to_json(self) -> dict:
        return {"deep_layer": self.deep_layer, "deep_additivity_error": self.deep_additivity_error(),
                "wide_additivity_error": self.wide_additivity_error(),
                "sigma": self.sigma.tolist(), "sigma_total": self.sigma_total.tolist()}


def projected_diag(p_mat, m, q_mat):
    """diag(P^T M Q)."""
    return np.einsum("ij,ij->j", p_mat, m @ q_mat)


def spectral_split(deep_net, wide_net, layer=1) -> SpectralReport:
    """Project identity, low-rank and branch parts onto the singular vectors of the full weight."""
    p = deep_net.params
    n = deep_net.width
    alpha = float(p["alpha"])
    low = p[f"u{layer}"] @ p[f"v{layer}"].T
    ident = alpha * np.eye(n)
    r = la.svd(ident + low)
    q = r.vt.T
    sigma = r.sigma
    low_c = projected_diag(r.u, low, q)
    id_c = projected_diag(r.u, ident, q)
    pw = wide_net.params
    branches = [float(pw["alphas"][l]) * (pw[f"u{l}"] @ pw[f"v{l}"].T) for l in range(wide_net.k)]
    rw = la.svd(np.sum(branches, axis=0))
    signed = [projected_diag(rw.u, b, rw.vt.T) for b in branches]
    return SpectralReport(sigma, low_c, id_c, rw.sigma, signed, layer)


def run_spectral(width=64, rank=4, seed=0, epochs=None, full=False, lr=0.005) -> SpectralReport:
    """Train width-``width`` deep and wide nets with rank-``rank`` substructures, then split their spectra."""
    k = math.ceil(width / rank)
    epochs = epochs if epochs is not None else (5000 if full else 500)
    data = make_sawtooth()
    nets = []
    for kind in ("deep_dlor", "wide_dlor"):
        net = make_net(kind, width, k, make_activation("softplus"), seed)
        if epochs:
            try:
                train(net, data, TrainConfig(lr=lr, epochs=epochs, seed=seed, record_every=max(1, epochs)))
            except DivergedAt:
                pass  # the identities are algebraic and hold for any weights
        nets.append(net)
    return spectral_split(nets[0], nets[1], layer=1)


def record_dict(rec: RunRecord) -> dict:
    d = asdict(rec)
    d["test_mse"] = {str(k): v for k, v in rec.test_mse.items()}
    return d
