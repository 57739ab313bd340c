import csv
import io
import json

import numpy as np
import pytest

from miniamp.denoisers import ChannelSpec, PriorSpec
from miniamp.errors import ConfigError, DivergenceError
from miniamp.harness import experiments
from miniamp.harness.cli import figure_recipes, main
from miniamp.harness.config import ExperimentConfig, parse_config
from miniamp.harness.experiments import COLUMNS, ExperimentError, rows_to_csv, run_experiment
from miniamp.harness.generators import generate_glm, generate_glm_stream, generate_gmm, sample_prior
from miniamp.harness.io import (MatrixFormatError, ingest_matrix, read_csv_matrix, read_raw_f64, write_csv_matrix,
                                write_raw_f64)
from miniamp.harness.rng import stream

GB = PriorSpec.gauss_bernoulli(0.3)


# random streams and generators -------------------------------------------

def test_streams_are_reproducible_and_distinct():
    a = stream(1, "glm", 3).standard_normal(5)
    assert np.array_equal(a, stream(1, "glm", 3).standard_normal(5))
    assert not np.array_equal(a, stream(1, "glm", 4).standard_normal(5))
    assert not np.array_equal(a, stream(1, "gmm", 3).standard_normal(5))
    assert not np.array_equal(a, stream(2, "glm", 3).standard_normal(5))
    with pytest.raises(ValueError):
        stream(-1)


def test_stream_batches_independent_of_count():
    short = generate_glm_stream(50, 0.4, 2, GB, ChannelSpec.gaussian(0.1), seed=3)
    long = generate_glm_stream(50, 0.4, 5, GB, ChannelSpec.gaussian(0.1), seed=3)
    assert np.array_equal(short[1].Phi, long[1].Phi) and np.array_equal(short[1].y, long[1].y)
    assert all(np.array_equal(b.x0, long[0].x0) for b in long)


def test_prior_sample_statistics():
    rng = stream(0, "stats")
    x = sample_prior(GB, 200000, rng)
    assert np.mean(x != 0) == pytest.approx(0.3, abs=0.005)
    assert np.mean(x * x) == pytest.approx(0.3, abs=0.01)
    r = sample_prior(PriorSpec.rademacher(), 100000, rng)
    assert set(np.unique(r)) == {-1.0, 1.0} and abs(r.mean()) < 0.02


def test_glm_design_scaling_and_noise():
    p = generate_glm(400, 800, GB, ChannelSpec.gaussian(0.04), stream(0, "d"))
    assert np.mean(p.Phi ** 2) * p.N == pytest.approx(1.0, rel=0.02)
    p = generate_glm(100, 20000, GB, ChannelSpec.gaussian(0.04), stream(0, "d"))
    assert np.var(p.y - p.Phi @ p.x0) == pytest.approx(0.04, rel=0.05)
    q = generate_glm(100, 50, GB, ChannelSpec.probit(0.0), stream(0, "d"))
    assert np.array_equal(q.y, np.where(q.Phi @ q.x0 >= 0, 1.0, -1.0))


def test_gmm_generator_shapes():
    d = generate_gmm(30, 40, 4, 0.1, stream(0, "g"))
    assert d.Y.shape == (30, 40) and d.U.shape == (30, 4) and d.V.shape == (40, 4)
    assert np.allclose(d.V.sum(axis=1), 1.0)


# configuration -------------------------------------------------------------

GOOD = """
[experiment]
kind = glm_stream
seeds = 0, 1
[model]
rho = 0.3   ; sparsity
delta = 1e-4
[geometry]
N = 100
alpha_b = 0.5
num_batches = 2
[algorithm]
t_max_values = 2, converged
"""


def test_parse_good_config():
    cfg = parse_config(GOOD)
    assert cfg.seeds == [0, 1] and cfg.rho == 0.3 and cfg.t_max_values == [2, None]
    assert cfg.config_hash() == parse_config(GOOD).config_hash()
    assert len(cfg.config_hash()) == 12


@pytest.mark.parametrize("text,needle", [
    ("[experiment]\nkind = glm_stream\nfoo = 1\n", "unknown key experiment.foo"),
    ("[experiment]\nkind = glm_stream\n[extras]\nx = 1\n", "unknown section"),
    ("[model]\nrho = 0.3\n", "experiment.kind is required"),
    ("[experiment]\nkind = nope\n", "experiment.kind"),
    ("[experiment]\nkind = glm_stream\n[model]\nrho = 1.5\n", "model.rho"),
    ("[experiment]\nkind = glm_stream\n[geometry]\nN = many\n", "cannot parse geometry.N"),
    ("[experiment]\nkind = glm_offline\n", "geometry.alphas"),
    ("[experiment]\nkind = cluster_stream\n[model]\ndelta = 0\n", "model.delta"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_batches_for_alpha_max():
    cfg = ExperimentConfig(kind="glm_stream", alpha_b=[0.35], alpha_max=3.0)
    assert cfg.batches_for(0.35) == 9 and cfg.batches_for(0.5) == 6 and cfg.batches_for(1.0) == 3


# matrix files --------------------------------------------------------------

def test_raw_round_trip_is_bit_exact(tmp_path):
    X = np.random.default_rng(0).standard_normal((7, 3))
    X[0, 0] = np.nextafter(1.0, 2.0)
    write_raw_f64(tmp_path / "m.bin", X)
    Y = ingest_matrix(tmp_path / "m.bin")
    assert Y.tobytes() == X.tobytes()


def test_raw_truncated_reports_bytes(tmp_path):
    write_raw_f64(tmp_path / "m.bin", np.ones((4, 4)))
    data = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-5])
    with pytest.raises(MatrixFormatError, match="needs 140 bytes, file has 135") as info:
        read_raw_f64(tmp_path / "cut.bin")
    assert info.value.offset == 135
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(MatrixFormatError, match="bad magic"):
        read_raw_f64(tmp_path / "bad.bin")


def test_csv_matrix(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n1,2\n3.5,-4e-3\n")
    assert np.array_equal(read_csv_matrix(path), np.array([[1.0, 2.0], [3.5, -4e-3]]))
    X = np.random.default_rng(1).standard_normal((3, 2))
    write_csv_matrix(tmp_path / "r.csv", X)
    assert np.array_equal(ingest_matrix(tmp_path / "r.csv"), X)
    (tmp_path / "ragged.csv").write_text("1,2\n3\n")
    with pytest.raises(MatrixFormatError, match="line 2"):
        read_csv_matrix(tmp_path / "ragged.csv")


# experiments ---------------------------------------------------------------

def _small_stream(**kw):
    base = dict(kind="glm_stream", seeds=[0, 1, 2], N=120, alpha_b=[0.5], num_batches=3, delta=1e-4)
    base.update(kw)
    return ExperimentConfig(**base)


def test_csv_schema_and_aggregates():
    res = run_experiment(_small_stream())
    text = rows_to_csv(res.rows)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0].keys()) == COLUMNS
    per_seed = [r for r in rows if r["stat"] == "value"]
    means = [r for r in rows if r["stat"] == "mean"]
    assert len(per_seed) == 9 and len(means) == 3
    b1 = [float(r["value"]) for r in per_seed if r["batch"] == "1"]
    m1 = next(float(r["value"]) for r in means if r["batch"] == "1")
    assert m1 == pytest.approx(np.mean(b1), rel=1e-14)
    assert all(r["theory"] != "" for r in means)
    assert "time" not in text


def test_results_independent_of_threads():
    one = rows_to_csv(run_experiment(_small_stream(), threads=1).rows)
    many = rows_to_csv(run_experiment(_small_stream(), threads=3).rows)
    assert one == many


def test_seed_failures_recorded(monkeypatch):
    real = experiments.mini_amp

    def flaky(batches, *a, **kw):
        if batches[0].x0[0] == first_x0:
            raise DivergenceError("boom")
        return real(batches, *a, **kw)

    first_x0 = generate_glm_stream(120, 0.5, 1, GB, ChannelSpec.gaussian(1e-4), seed=0)[0].x0[0]
    monkeypatch.setattr(experiments, "mini_amp", flaky)
    res = run_experiment(_small_stream())
    assert [f["seed"] for f in res.failures] == [0]
    assert not res.select(seed=0)
    with pytest.raises(ExperimentError):
        run_experiment(_small_stream(seeds=[0, 0, 1]))


def test_write_results_keeps_log_apart(tmp_path):
    res = run_experiment(_small_stream(seeds=[0]))
    out = tmp_path / "r.json"
    experiments.write_results(res, out, "json")
    payload = json.loads(out.read_text())
    assert payload["config_hash"] == res.config.config_hash()
    log = [json.loads(line) for line in (tmp_path / "r.json.log").read_text().splitlines()]
    assert log[0]["event"] == "start" and "time" in log[0]


# command line --------------------------------------------------------------

def _write(tmp_path, text, name="c.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_single_batch_sweep_equals_offline(tmp_path, capsys):
    cfg = _write(tmp_path, "[experiment]\nkind = se_sweep\n[geometry]\nalpha_b = 0.6\nnum_batches = 1\n"
                           "alphas = 0.6\n[model]\ndelta = 1e-3\n")
    assert main(["se", "sweep", cfg]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    stream_E = next(r["value"] for r in rows if r["series"] == "se:alpha_b=0.6")
    offline_E = next(r["value"] for r in rows if r["series"] == "se:offline")
    assert stream_E == offline_E


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["nonsense"]) == 1
    assert main(["se", "sweep", str(tmp_path / "missing.ini")]) == 1
    bad = _write(tmp_path, "[experiment]\nkind = se_sweep\nfoo = 1\n")
    assert main(["se", "sweep", bad]) == 1
    assert "unknown key experiment.foo" in capsys.readouterr().err
    wrong = _write(tmp_path, "[experiment]\nkind = landscape\n", "w.ini")
    assert main(["se", "sweep", wrong]) == 1


def test_cli_numerical_failure_exit_code(tmp_path, monkeypatch):
    def explode(*a, **kw):
        raise ExperimentError("all seeds failed")

    monkeypatch.setattr("miniamp.harness.cli.run_experiment", explode)
    cfg = _write(tmp_path, "[experiment]\nkind = glm_stream\n")
    assert main(["amp", "run", cfg]) == 2


def test_cli_writes_output_file(tmp_path):
    cfg = _write(tmp_path, "[experiment]\nkind = glm_stream\n[geometry]\nN = 80\nnum_batches = 2\n")
    out = tmp_path / "sub" / "r.csv"
    assert main(["amp", "run", cfg, "--seed", "4", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert {r["seed"] for r in rows} == {"4", "all"}
    assert (tmp_path / "sub" / "r.csv.log").exists()


def test_figure_recipes_cover_all_panels():
    assert set(figure_recipes(1)) == {"fig1_left", "fig1_center", "fig1_right"}
    assert set(figure_recipes(2)) == {"fig2_left", "fig2_right"}
    assert set(figure_recipes(3)) == {"fig3_left"}
    assert len(figure_recipes(3, full=True)["fig3_left"].seeds) == 100
    with pytest.raises(ConfigError):
        figure_recipes(7)
