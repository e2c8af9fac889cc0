import numpy as np
import pytest

from hiercop import mc


def test_config_validation_and_sizes():
    assert mc.ScenarioConfig(m=10, design="NEQ").sizes.sum() == 300
    assert mc.ScenarioConfig(m=50).sizes.sum() == 900
    for bad in ({"c2": "Gumbel"}, {"design": "X"}, {"m": 20}, {"c2": "KhoudrajiNormal", "tau2": 0.5}, {"B": 1}, {"tau2": 1.2}):
        with pytest.raises(ValueError):
            mc.ScenarioConfig(**bad)
    with pytest.raises(ValueError):
        mc.ScenarioConfig.from_dict({"c2": "Normal", "extra": 1})
    cfg = mc.ScenarioConfig(c2="Clayton", tau2=0.6, B=5)
    assert mc.ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def test_true_specs_hit_target_tau():
    for c2 in ("Normal", "Clayton"):
        spec = mc.ScenarioConfig(c2=c2, tau2=0.4).true_spec()
        assert spec.c2.tau() == pytest.approx(0.4, abs=1e-10)
        assert spec.c1.tau() == pytest.approx(0.2) and spec.c3.tau() == pytest.approx(0.1)


def test_khoudraji_truth_uses_tabulated_etas():
    # the tabulated etas are two-decimal values; the tau they imply is near, not at, the label
    for tau2, expect in ((0.4, 0.40875), (0.6, 0.58673)):
        spec = mc.ScenarioConfig(c2="KhoudrajiNormal", tau2=tau2).true_spec()
        eta = mc.table_scale(spec, spec.natural())
        assert np.allclose(eta[[5, 6]], mc.KHOUDRAJI_ETAS[tau2], atol=1e-12)
        assert spec.c2.tau() == pytest.approx(expect, abs=1e-5)


def test_replicates_are_deterministic():
    cfg = mc.ScenarioConfig(m=10, B=3)
    assert mc.run_replicate(cfg, 1) == mc.run_replicate(cfg, 1)
    assert mc.run_replicate(cfg, 1)["MLE"]["estimate"] != mc.run_replicate(cfg, 2)["MLE"]["estimate"]


def test_serial_and_parallel_runs_match():
    cfg = mc.ScenarioConfig(m=10, B=4)
    a = mc.run_scenario(cfg, threads=1)
    b = mc.run_scenario(cfg, threads=2)
    assert a.to_dict() == b.to_dict()


def test_aggregate_statistics():
    cfg = mc.ScenarioConfig(m=10, B=4)
    reps = [mc.run_replicate(cfg, b) for b in range(4)]
    reps[3]["IFM"] = {"estimate": None, "error": "ValueError: x", "boundary": False}
    rep = mc.aggregate(cfg, reps)
    est = np.array([r["MLE"]["estimate"] for r in reps])
    assert np.allclose(rep.summary["MLE"]["mean"], est.mean(axis=0))
    assert np.allclose(rep.summary["MLE"]["var10"], 10 * est.var(axis=0, ddof=1))
    assert rep.summary["IFM"]["n_used"] == 3 and rep.summary["IFM"]["n_failed"] == 1
    assert rep.summary["IFM"]["flagged"] and not rep.summary["MLE"]["flagged"]


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("HIERCOP_THREADS", "2")
    assert mc.resolve_threads(8) == 2 and mc.resolve_threads() == 2 and mc.resolve_threads(1) == 1


def test_school_sizes():
    for seed in range(20):
        s = mc.school_sizes(np.random.default_rng(seed))
        assert s.size == 48 and s.sum() == 728 and s.min() == 4 and s.max() == 40


def test_synthetic_marks():
    data = mc.synth_school_study(5, marks=True)
    for z in (data.x, data.y):
        assert np.all((z > 0) & (z < 1)) and np.unique(z).size == z.size
    plain = mc.synth_school_study(5)
    assert plain.labels == data.labels and np.array_equal(plain.sizes, data.sizes)
