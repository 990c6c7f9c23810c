import csv
import io
import math

import numpy as np
import pytest

from dlor.activation import make_activation
from dlor.experiments import (
    ExperimentSummary,
    RunRecord,
    StudyScale,
    make_sawtooth,
    param_table,
    run_construction_sweep,
    run_spectral,
    run_tasks,
    run_training_study,
    sawtooth,
    spectral_split,
)
from dlor.train import make_net


def _square(x):
    return x * x


def test_sawtooth_values():
    assert sawtooth(0.0) == 1.0
    assert sawtooth(1 / 3.7) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(sawtooth(np.array([-0.5, 0.5])), sawtooth(np.array([0.5, -0.5]))[::-1])


def test_sawtooth_split():
    d = make_sawtooth()
    assert d.x_train.size == 200 and d.x_test.size == 200
    assert np.all(np.diff(np.concatenate([d.x_train, d.x_test])[np.argsort(
        np.concatenate([d.x_train, d.x_test]))]) > 0)
    assert d.x_train[0] == -2.0 and d.x_test[-1] == 2.0


def test_run_tasks_pool_matches_serial():
    assert run_tasks(_square, range(5), jobs=2) == run_tasks(_square, range(5), jobs=1)


def test_study_scale():
    r = StudyScale.make()
    assert r.budgets == (500, 5000) and r.max_epochs == 5000 and r.seeds == (0, 1, 2)
    f = StudyScale.make(full=True)
    assert f.budgets == (5000, 50000) and f.max_epochs == 50000 and len(f.seeds) == 10


def test_param_table_reproduces_table():
    table = param_table()
    assert [row[2] for row in table] == [573, 622, 622, 726, 838]
    assert [row[3] for row in table] == [578, 594, 626, 690, 818]
    assert [row[4] for row in table] == [594, 611, 645, 713, 849]


@pytest.fixture(scope="module")
def deep_sweep():
    return run_construction_sweep("deep", 0, hs=(1e-2, 1e-3, 1e-4, 1e-5), epochs=500)


def test_construction_sweep_shape(deep_sweep):
    assert [r[0] for r in deep_sweep.rows] == [1e-2, 1e-3, 1e-4, 1e-5]
    assert deep_sweep.top_decades_ok()
    assert deep_sweep.triangle_ok()
    header = deep_sweep.to_csv().splitlines()[0]
    assert header == "h,err_to_dense,err_to_function"


def test_wide_construction_sweep():
    s = run_construction_sweep("wide", 1, hs=(1e-1, 1e-2, 1e-3), epochs=300)
    assert s.top_decades_ok() and s.triangle_ok()


def test_sweep_rejects_unknown():
    with pytest.raises(ValueError):
        run_construction_sweep("diagonal", 0)


@pytest.fixture(scope="module")
def tiny_study():
    return run_training_study(ks=(1, 2), seeds=(0, 1), budgets=(20, 40), threshold=0.5, max_epochs=60)


def test_study_rows_and_csv(tiny_study):
    archs = {(r["arch"], r["k"]) for r in tiny_study.rows}
    assert archs == {("dense", 0), ("deep", 1), ("deep", 2), ("wide", 1), ("wide", 2)}
    rows = list(csv.DictReader(io.StringIO(tiny_study.to_csv())))
    assert len(rows) == 5
    assert "test_mse_40_median" in rows[0] and "success_rate" in rows[0]
    runs = list(csv.DictReader(io.StringIO(tiny_study.runs_csv())))
    assert len(runs) == 2 + 2 * 2 * 2
    assert tiny_study.deep_vs_wide_test(40)["of"] == 2


def test_study_deterministic(tiny_study):
    again = run_training_study(ks=(1, 2), seeds=(0, 1), budgets=(20, 40), threshold=0.5, max_epochs=60)
    assert again.runs_csv() == tiny_study.runs_csv()


def test_infinite_threshold_succeeds_at_zero():
    s = run_training_study(ks=(1,), seeds=(0,), budgets=(), threshold=math.inf, max_epochs=5,
                           include_dense=False)
    assert all(r.epochs_to_threshold == 0 for r in s.records)
    assert all(row["success_rate"] == 1.0 for row in s.rows)


def test_summary_majority_logic():
    recs = [RunRecord("deep", k, 0, 1, {10: 1.0}, None, None) for k in (1, 2, 3)]
    recs += [RunRecord("wide", k, 0, 1, {10: v}, None, None) for k, v in ((1, 2.0), (2, 0.5), (3, 3.0))]
    s = ExperimentSummary(recs, (10,), None, 10)
    vote = s.deep_vs_wide_test(10)
    assert vote["deep_wins"] == 2 and vote["majority"]


def test_spectral_untrained_identity_split():
    sp = make_activation("softplus")
    deep = make_net("deep_dlor", 8, 4, sp, seed=0)
    wide = make_net("wide_dlor", 8, 4, sp, seed=0)
    for l in range(4):
        deep.params[f"u{l}"][...] = 0.0
    deep.params["alpha"][...] = 0.7
    rep = spectral_split(deep, wide)
    assert np.allclose(rep.identity_contrib, 0.7)
    assert np.allclose(rep.lowrank_contrib, 0.0)
    assert rep.deep_additivity_error() <= 1e-12
    assert rep.wide_additivity_error() <= 1e-9


def test_spectral_trained_small():
    rep = run_spectral(width=16, rank=4, seed=0, epochs=30)
    assert rep.deep_additivity_error() <= 1e-9
    assert rep.wide_additivity_error() <= 1e-9
    assert rep.deep_csv().splitlines()[0] == "index,sigma,lowrank_contrib,identity_contrib"
    assert rep.wide_csv().splitlines()[0].startswith("index,sigma_total,branch_0")
