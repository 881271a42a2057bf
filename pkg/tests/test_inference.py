import math

import numpy as np
import pytest

import iteforest.simbench as sb
from iteforest import (ConfigurationError, Dataset, ForestSpec, InferenceConfig, IngestionError,
                       Schema, coplot_export, estimate_cf, export_dataset, load_dataset,
                       subsample_inference)
from iteforest.exceptions import InferenceError
from iteforest.inference import identity_hook, ols_coefficients


# --- ingestion --------------------------------------------------------------------

def write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


SCHEMA = Schema("drug", "y", {"age": "numeric", "site": "categorical", "risk": "ordinal"},
                levels={"risk": ["low", "mid", "high"]})


def test_categorical_and_ordinal(tmp_path):
    p = write(tmp_path, "age,site,risk,drug,y\n30,a,low,1,2.5\n41,b,high,0,1.0\n25,c,mid,1,0.5\n")
    d = load_dataset(p, SCHEMA)
    assert d.names == ("age", "site=b", "site=c", "risk")
    assert d.x.tolist() == [[30, 0, 0, 0], [41, 1, 0, 2], [25, 0, 1, 1]]
    assert d.t.tolist() == [1, 0, 1]


@pytest.mark.parametrize("text,match", [
    ("age,site,risk,drug,y\n30,a,low,2,2.5\n", r"row 1, column 'drug'"),
    ("age,site,risk,drug,y\n30,a,low,1,2.5\nx,a,low,0,1\n", r"row 2, column 'age'"),
    ("age,site,risk,drug,y\n30,a,low,1,\n", r"row 1, column 'y': missing outcome"),
    ("age,site,risk,drug,y\n30,a,low,,1\n", r"missing treatment"),
    ("age,site,risk,drug,y\n30,a,huge,1,1\n", r"row 1, column 'risk': unknown level"),
    ("age,site,drug,y\n30,a,1,1\n", r"unknown column 'risk'"),
    ("age,site,risk,drug,y\n30,a,low,1,inf\n", r"non-finite"),
])
def test_ingestion_errors(tmp_path, text, match):
    with pytest.raises(IngestionError, match=match):
        load_dataset(write(tmp_path, text), SCHEMA)


def test_schema_sidecar_and_roundtrip(tmp_path, rng):
    d = Dataset(rng.standard_normal((30, 3)) * 1e3, rng.integers(0, 2, 30),
                rng.standard_normal(30) / 7, feature_names=("a", "b", "c"))
    export_dataset(d, tmp_path / "d.csv", tmp_path / "d.json")
    back = load_dataset(tmp_path / "d.csv", tmp_path / "d.json")
    assert np.array_equal(back.x, d.x) and np.array_equal(back.y, d.y)
    assert np.array_equal(back.t, d.t) and back.names == d.names


# --- OLS and subsampling ---------------------------------------------------------------

def test_ols_drops_constant_columns(rng):
    x = np.column_stack([rng.standard_normal(20), np.ones(20)])
    y = 1 + 2 * x[:, 0]
    coef, kept = ols_coefficients(x, y)
    assert kept.tolist() == [True, True, False]
    assert coef[:2] == pytest.approx([1, 2]) and math.isnan(coef[2])


def test_ols_rank_deficiency(rng):
    a = rng.standard_normal(20)
    with pytest.raises(np.linalg.LinAlgError):
        ols_coefficients(np.column_stack([a, 2 * a]), a)


def plane_data(n, seed, noise=0.0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, 2))
    t = r.integers(0, 2, n)
    return Dataset(x, t, 2 + 3 * x[:, 0] + noise * r.standard_normal(n),
                   feature_names=("x1", "x2"))


def test_identity_hook_exact_plane():
    d = plane_data(500, 1)
    tab = subsample_inference(d, InferenceConfig(n_replicates=50), identity_hook)
    assert tab.estimate == pytest.approx([2, 3, 0], abs=1e-10)
    assert tab.terms == ["(intercept)", "x1", "x2"] and tab.m == 50


def test_rescale_flag():
    d = plane_data(400, 2, noise=1.0)
    a = subsample_inference(d, InferenceConfig(n_replicates=40, seed=3), identity_hook)
    b = subsample_inference(d, InferenceConfig(n_replicates=40, seed=3, rescale=False), identity_hook)
    assert np.array_equal(a.estimate, b.estimate)
    assert a.std_error == pytest.approx(b.std_error * math.sqrt(40 / 400), rel=1e-12)


def test_table_outputs(tmp_path):
    d = plane_data(400, 2, noise=1.0)
    tab = subsample_inference(d, InferenceConfig(n_replicates=40), identity_hook)
    assert tab.significant[:2].all()
    lo, hi = tab.interval("(intercept)")
    assert lo < tab.estimate[0] < hi
    tab.write(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "term,estimate,std_error,z,significant" and len(lines) == 4


def test_singular_replicates_fail_loudly(rng):
    x = rng.standard_normal(300)
    d = Dataset(np.column_stack([x, 2 * x]), rng.integers(0, 2, 300), x)
    with pytest.raises(InferenceError, match="singular"):
        subsample_inference(d, InferenceConfig(n_replicates=10), identity_hook)


def test_sparse_indicator_dropped_per_replicate(rng):
    n = 400
    x = np.column_stack([rng.standard_normal(n), (np.arange(n) < 6).astype(float)])
    d = Dataset(x, rng.integers(0, 2, n), 1 + x[:, 0])
    tab = subsample_inference(d, InferenceConfig(n_replicates=30), identity_hook)
    assert tab.n_used[2] < 30 and tab.n_used[1] == 30
    assert tab.estimate[1] == pytest.approx(1)


def test_subsample_too_small(rng):
    d = Dataset(rng.standard_normal((40, 5)), rng.integers(0, 2, 40), rng.standard_normal(40))
    with pytest.raises(ConfigurationError):
        subsample_inference(d, InferenceConfig(n_replicates=5), identity_hook)


def test_single_treated_row_hits_resample_cap(rng):
    t = np.zeros(200, int)
    t[0] = 1
    d = Dataset(rng.standard_normal((200, 1)), t, rng.standard_normal(200))
    with pytest.raises(InferenceError, match="both arms"):
        subsample_inference(d, InferenceConfig(n_replicates=5, max_resample=10), identity_hook)


def test_default_hook_runs():
    sim = sb.simulate("M1", 400, 1)
    cfg = InferenceConfig(n_replicates=3, method="cf", spec=ForestSpec(20))
    tab = subsample_inference(sim.dataset, cfg)
    assert np.all(np.isfinite(tab.estimate)) and len(tab.terms) == 21


def test_config_validation():
    with pytest.raises(ConfigurationError):
        InferenceConfig(subsample_fraction=1.5)
    with pytest.raises(ConfigurationError):
        InferenceConfig(response="nope")


# --- coplot -----------------------------------------------------------------

def test_coplot_binary_conditioning(rng, tmp_path):
    n = 60
    x = np.column_stack([rng.standard_normal(n), rng.integers(0, 2, n), rng.integers(0, 2, n),
                         rng.standard_normal(n)])
    d = Dataset(x, rng.integers(0, 2, n), rng.standard_normal(n), feature_names=("a", "b", "c", "d"))
    tau = rng.standard_normal(n)
    frame = coplot_export(tau, d, "a", "d", "b", "c", path=tmp_path / "cp.csv")
    assert len(frame) == n
    assert len(frame.groupby(["stratum_v", "stratum_h"])) == 4
    assert len((tmp_path / "cp.csv").read_text().splitlines()) == n + 1


def test_coplot_quantile_bins_and_overlap(rng):
    n = 200
    x = rng.standard_normal((n, 2))
    d = Dataset(x, rng.integers(0, 2, n), rng.standard_normal(n))
    tau = rng.standard_normal(n)
    frame = coplot_export(tau, d, "x1", cond_vertical="x2", bins=4)
    assert frame["stratum_v"].value_counts().tolist() == [50] * 4
    wide = coplot_export(tau, d, "x1", cond_vertical="x2", bins=4, overlap=0.25)
    assert len(wide) > n


def test_coplot_constant_variable_warns(rng):
    d = Dataset(np.column_stack([rng.standard_normal(20), np.ones(20)]), rng.integers(0, 2, 20),
                rng.standard_normal(20))
    with pytest.warns(UserWarning, match="constant"):
        frame = coplot_export(np.zeros(20), d, "x1", cond_vertical="x2")
    assert frame["stratum_v"].nunique() == 1


def test_coplot_slope_sign_matches_truth():
    sim = sb.simulate("M1", 600, 4)
    res = estimate_cf(sim.dataset, ForestSpec(300, seed=1))
    frame = coplot_export(res.tau_hat, sim.dataset, "X1", cond_vertical="X12")
    truth = np.corrcoef(sim.dataset.x[:, 0], sim.true_tau)[0, 1]
    est = np.corrcoef(frame["x"], frame["tau_hat"])[0, 1]
    assert np.sign(est) == np.sign(truth) != 0
