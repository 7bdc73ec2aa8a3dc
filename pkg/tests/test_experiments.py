import json
import math

import numpy as np
import pytest

from fgle_lab.experiments import (ConfigError, StudyConfig, fit_rate, run_study)
from fgle_lab.hilbert_space import g_variance


def small(study="strong", **kw):
    base = dict(study=study, fine_N=64, level_ratios=[2, 4, 8], paths=200, chunk_size=50, seed=7)
    base.update(kw)
    return StudyConfig(**base)


def test_fit_rate_exact_power_laws():
    h = [0.1, 0.05, 0.025, 0.0125]
    f = fit_rate(h, [3 * x for x in h])
    assert f.slope == pytest.approx(1.0, abs=1e-12)
    assert f.r_squared == pytest.approx(1.0)
    f = fit_rate(h, [2 * x ** 0.4 for x in h])
    assert f.slope == pytest.approx(0.4, abs=1e-10)
    assert f.intercept == pytest.approx(math.log(2), abs=1e-10)


def test_fit_rate_noisy_within_band():
    # log e = 0.6 log h + noise(sd 0.05): OLS slope stderr is sd / sqrt(Sxx)
    rng = np.random.default_rng(3)
    h = 2.0 ** -np.arange(3, 11)
    x = np.log(h)
    band = 4 * 0.05 / math.sqrt(((x - x.mean()) ** 2).sum())
    f = fit_rate(h, np.exp(0.6 * x + rng.normal(0, 0.05, len(h))))
    assert abs(f.slope - 0.6) < band
    assert 0 <= f.r_squared <= 1
    assert f.slope_stderr > 0


def test_fit_rate_errors():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, 0, 2])


def test_config_validation():
    with pytest.raises(ConfigError):
        small(fine_N=100)
    with pytest.raises(ConfigError):
        small(level_ratios=[3])
    with pytest.raises(ConfigError):
        small(paths=50)
    with pytest.raises(ConfigError):
        small(alpha=0.2, hurst=0.7)
    with pytest.raises(ConfigError):
        small(study="weak")
    with pytest.raises(ConfigError):
        small(study="density", paths=500)


def test_config_from_dict_forms():
    cfg = StudyConfig.from_dict({"model": {"alpha": 0.9, "hurst": 0.8, "drift": {"name": "sin", "params": {"lam": 2}}},
                                 "study_kind": "density", "M": 3000, "output_path": "o",
                                 "level_ratios": [64, 8, 16]})
    assert (cfg.alpha, cfg.hurst, cfg.study, cfg.paths, cfg.output) == (0.9, 0.8, "density", 3000, "o")
    assert cfg.model.drift.params == {"lam": 2}
    assert cfg.level_ratios == [8, 16, 64]
    assert StudyConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"bogus": 1})


def test_expectation_defaults():
    assert small().expectation() == pytest.approx((0.4, 0.15))
    assert small("malliavin").expectation() == pytest.approx((0.8, 0.3))
    assert small(expected_slope=1.0, tolerance=0.1).expectation() == (1.0, 0.1)


def test_zero_drift_strong_is_degenerate(tmp_path):
    res = run_study(small(drift="zero"), out_dir=tmp_path)
    s = res["summary"]
    assert s["slope"] is None and s["pass"]
    assert all(r["error"] < 1e-12 for r in res["levels"])
    summary = json.loads((tmp_path / "strong_summary.json").read_text())
    assert {"study", "alpha", "hurst", "slope", "expected", "tolerance", "pass", "config"} <= set(summary)
    head = (tmp_path / "strong_levels.csv").read_text().splitlines()[0]
    assert head == "level,h,error,stderr_of_error"
    assert "wall_clock_s" in json.loads((tmp_path / "strong_timing.json").read_text())


def test_zero_drift_density_no_signal(tmp_path):
    res = run_study(small("density", drift="zero", paths=1000), out_dir=tmp_path)
    assert "no_signal" in res["summary"]["checks"]
    assert res["summary"]["slope"] is None


def test_zero_drift_malliavin(tmp_path):
    cfg = small("malliavin", drift="zero", paths=100, bound_paths=2)
    res = run_study(cfg, out_dir=tmp_path)
    checks = res["summary"]["checks"]
    assert max(r["error"] for r in res["levels"]) < 1e-12
    # positivity ratios equal Var G(T) / h^(2a+2H-2)
    e = 2 * cfg.alpha + 2 * cfg.hurst - 2
    expected = [float(g_variance(cfg.T, cfg.alpha, cfg.hurst)) / (cfg.T * r / cfg.fine_N) ** e
                for r in cfg.level_ratios]
    np.testing.assert_allclose(checks["positivity"]["value"], expected, rtol=1e-10)
    assert checks["adaptedness"]["pass"]
    assert checks["upper_bound"]["spread"] == pytest.approx(0.0, abs=1e-12)


def test_strong_study_cos_runs(tmp_path):
    res = run_study(small(), out_dir=tmp_path)
    errs = [r["error"] for r in res["levels"]]
    assert errs == sorted(errs)
    assert all(r["stderr_of_error"] > 0 for r in res["levels"])


@pytest.mark.parametrize("study,extra", [
    ("strong", {}),
    ("density", {"paths": 1000}),
    ("malliavin", {"paths": 100, "bound_paths": 2}),
    ("noise_validation", {"fgn_length": 64, "fgn_draws": 3000, "riemann_levels": [8, 16, 32],
                          "sampler_check_N": 4, "sampler_check_draws": 3000}),
])
def test_outputs_identical_across_thread_counts(tmp_path, study, extra):
    cfg = small(study, **extra)
    outputs = []
    for threads in (1, 4, 8):
        d = tmp_path / str(threads)
        run_study(cfg, threads=threads, out_dir=d)
        outputs.append(((d / f"{study}_levels.csv").read_bytes(),
                        (d / f"{study}_summary.json").read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_seed_changes_output(tmp_path):
    a = run_study(small(seed=1), out_dir=tmp_path / "a")
    b = run_study(small(seed=2), out_dir=tmp_path / "b")
    assert a["levels"][0]["error"] != b["levels"][0]["error"]


def test_riemann_noise_mode(tmp_path):
    with pytest.raises(ConfigError):
        small("malliavin", noise="riemann")
    with pytest.raises(ConfigError):
        small(noise="spectral")
    # with zero drift the error is pure noise discretization, slope near alpha + H - 1
    res = run_study(small(drift="zero", noise="riemann", fine_N=512, level_ratios=[4, 8, 16, 32],
                          paths=400, chunk_size=100), out_dir=tmp_path)
    assert res["summary"]["slope"] == pytest.approx(0.4, abs=0.1)
    again = run_study(small(drift="zero", noise="riemann", fine_N=512, level_ratios=[4, 8, 16, 32],
                            paths=400, chunk_size=100), threads=4, out_dir=tmp_path / "b")
    assert (tmp_path / "strong_levels.csv").read_bytes() == (tmp_path / "b" / "strong_levels.csv").read_bytes()
    assert again["levels"] == res["levels"]
