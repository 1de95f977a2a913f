"""CLI harness: config parsing, subcommands, exit codes, determinism."""

import json
import os

import numpy as np
import pytest

from amp_lab.cli import (
    ExperimentConfig,
    compute_se,
    main,
    resolve_denoiser_factory,
    resolve_matrix_fn,
    run_experiment,
)
from amp_lab.errors import ValidationError
from amp_lab.laws import MarchenkoPastur, Semicircle


BASE = {"law": "mp:alpha=0.2", "N": 200, "T": 3, "theta": 1.5, "omega": 0.3,
        "runs": 2, "seed_base": 1, "algo": "ri-amp-mp",
        "denoiser": "linear-mmse-combining", "matrix_fn": "mp-denoise",
        "mc_samples": 50_000}


def _cfg(**over):
    d = dict(BASE)
    d.update(over)
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_rejects_unknown_keys():
    with pytest.raises(ValidationError, match="unknown config keys"):
        ExperimentConfig.from_dict({**BASE, "bogus": 1})


def test_config_requires_core_keys():
    with pytest.raises(ValidationError, match="missing"):
        ExperimentConfig.from_dict({"law": "semicircle", "N": 100})


@pytest.mark.parametrize("bad", [
    {"N": 8}, {"runs": 0}, {"omega": 1.5}, {"theta": -1.0},
    {"algo": "vamp"}, {"omega": None},
])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        _cfg(**bad)


def test_mmse_denoiser_requires_spiked():
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"law": "semicircle", "N": 100, "T": 2,
                                    "denoiser": "linear-mmse-combining",
                                    "algo": "ri-amp"})


def test_config_from_file_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{broken")
    with pytest.raises(ValidationError, match="invalid JSON"):
        ExperimentConfig.from_file(str(p))
    with pytest.raises(ValidationError):
        ExperimentConfig.from_file(str(tmp_path / "missing.json"))


# ---------------------------------------------------------------------------
# spec resolvers
# ---------------------------------------------------------------------------

def test_matrix_fn_specs(tmp_path):
    mp = MarchenkoPastur(alpha=0.2)
    ident = resolve_matrix_fn("identity", mp, None)
    assert ident(3.0) == 3.0
    f = resolve_matrix_fn("mp-denoise", mp, 1.5)
    x = np.array([0.5, 1.0])
    expected = (1.5 / 0.2) * (1 + (0.2 - 1) / x) - 1.5**2 / (0.2 * x)
    assert np.allclose(f(x), expected)
    poly = resolve_matrix_fn("polynomial:1,0,2", mp, None)
    assert abs(poly(2.0) - 9.0) < 1e-12
    p = tmp_path / "coef.txt"
    p.write_text("# constant\n1.0\n0.0\n2.0\n")
    file_poly = resolve_matrix_fn(f"file:{p}", mp, None)
    assert abs(file_poly(2.0) - 9.0) < 1e-12


def test_matrix_fn_spec_errors():
    sc = Semicircle()
    with pytest.raises(ValidationError):
        resolve_matrix_fn("mp-denoise", sc, 1.5)  # wrong law
    with pytest.raises(ValidationError):
        resolve_matrix_fn("polynomial:", sc, None)
    with pytest.raises(ValidationError):
        resolve_matrix_fn("wavelet", sc, None)


def test_mp_denoise_rejects_pole_in_support():
    # an MP law whose support reaches 0 must be rejected
    mp = MarchenkoPastur(alpha=0.999)
    with pytest.raises(ValidationError, match="pole"):
        resolve_matrix_fn("mp-denoise", mp, 1.5)


def test_denoiser_specs():
    fac = resolve_denoiser_factory("tanh:scale=2", False)
    den = fac(2, None, None)
    assert "tanh" in den.name
    with pytest.raises(ValidationError):
        resolve_denoiser_factory("oracle", True)


# ---------------------------------------------------------------------------
# subcommands through main()
# ---------------------------------------------------------------------------

def test_cumulants_exit_codes(capsys):
    assert main(["cumulants", "--law", "mp:alpha=0.2", "--order", "4"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "n,m_n,kappa_n"
    kappas = [float(line.split(",")[2]) for line in out[1:]]
    assert np.allclose(kappas, [1.0, 0.2, 0.04, 0.008], atol=1e-9)
    assert main(["cumulants", "--law", "nope", "--order", "4"]) == 1
    assert main(["cumulants", "--law", "semicircle", "--order", "0"]) == 1


def test_cumulants_point_mass(capsys):
    assert main(["cumulants", "--law", "point:c=1.5", "--order", "4"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    kappas = [float(line.split(",")[2]) for line in out[1:]]
    assert np.allclose(kappas, [1.5, 0, 0, 0], atol=1e-12)


def test_cumulants_mc_columns(capsys):
    assert main(["cumulants", "--law", "semicircle", "--order", "3", "--mc",
                 "--dim", "300", "--replicas", "2"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "n,m_n,kappa_n,kappa_hat_n,kappa_hat_spread"
    assert len(out) == 4


def test_usage_error_maps_to_exit_1(capsys):
    assert main(["cumulants", "--order", "4"]) == 1  # missing --law


def test_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    cfg = dict(BASE)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", "--config", str(p), "--out", out1]) == 0
    assert main(["run", "--config", str(p), "--out", out2]) == 0
    for name in ("mse.csv", "se.csv", "mse.svg", "meta.json"):
        assert os.path.exists(os.path.join(out1, name))
    a = open(os.path.join(out1, "mse.csv"), "rb").read()
    b = open(os.path.join(out2, "mse.csv"), "rb").read()
    assert a == b
    header = a.decode().splitlines()[0]
    assert header == ("t,mse_emp_mean,mse_emp_stderr,mse_se_pred,"
                      "overlap_emp_mean,overlap_emp_stderr")
    meta = json.load(open(os.path.join(out1, "meta.json")))
    assert meta["seeds_ok"] == 2 and meta["seeds_divergent"] == 0
    assert meta["content_hash"] == json.load(
        open(os.path.join(out2, "meta.json")))["content_hash"]


def test_run_aggregation_independent_of_worker_count(tmp_path, monkeypatch):
    cfg = _cfg(runs=3)
    monkeypatch.setenv("AMP_LAB_THREADS", "1")
    rows1, *_ = run_experiment(cfg)
    monkeypatch.setenv("AMP_LAB_THREADS", "3")
    rows3, *_ = run_experiment(cfg)
    assert np.allclose(np.asarray(rows1, dtype=float),
                       np.asarray(rows3, dtype=float), atol=0)


def test_se_command(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(dict(BASE)))
    assert main(["se", "--config", str(p)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "t,mse_se_pred"
    vals = [float(line.split(",")[1]) for line in out[1:]]
    assert len(vals) == BASE["T"]
    assert all(v >= 0 for v in vals)


def test_se_perfect_init_starts_lower():
    # omega = 1 gives a better first iterate than omega = 0.3
    lo = compute_se(_cfg(omega=1.0, mc_samples=100_000))[1]
    hi = compute_se(_cfg(omega=0.3, mc_samples=100_000))[1]
    assert lo[0][1] < hi[0][1]


def test_run_omega_ordering():
    rows_hi, *_ = run_experiment(_cfg(omega=1.0))
    rows_lo, *_ = run_experiment(_cfg(omega=0.3))
    assert rows_hi[0][1] <= rows_lo[0][1]  # MSE_1 ordering, same seeds


def test_spiked_ri_amp_equals_mp_identity_per_seed():
    cfg_a = _cfg(law="semicircle", theta=3.0, algo="ri-amp",
                 matrix_fn="identity", denoiser="linear-mmse-combining")
    cfg_b = _cfg(law="semicircle", theta=3.0, algo="ri-amp-mp",
                 matrix_fn="identity", denoiser="linear-mmse-combining")
    rows_a, *_ = run_experiment(cfg_a)
    rows_b, *_ = run_experiment(cfg_b)
    assert np.allclose([r[1] for r in rows_a], [r[1] for r in rows_b], atol=1e-8)


def test_verify_exit_codes(capsys):
    assert main(["verify", "--suite", "se-equivalence"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert main(["verify", "--suite", "nonsense"]) == 1


def test_nonspiked_run_header(tmp_path):
    cfg = {"law": "semicircle", "N": 300, "T": 3, "runs": 2, "seed_base": 0,
           "algo": "ri-amp", "denoiser": "tanh", "mc_samples": 50_000}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    out = str(tmp_path / "o")
    assert main(["run", "--config", str(p), "--out", out]) == 0
    header = open(os.path.join(out, "mse.csv")).readline().strip()
    assert header == "t,r2_emp_mean,r2_emp_stderr,r2_se_pred"
