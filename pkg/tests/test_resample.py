import numpy as np
import pytest

from plntree.emtree import infer_network
from plntree.resample import (
    ResampleConfig,
    ResampleError,
    SelectionFrequencies,
    _subsample_rows,
    stability_selection,
    threshold_curve,
    threshold_frequencies,
)
from plntree.simulate import SimulationSpec, simulate_dataset


@pytest.fixture(scope="module")
def data():
    return simulate_dataset(SimulationSpec(structure="scalefree", p=6, n=80, seed=2))


def test_single_full_replicate_matches_full_fit(data):
    freq = stability_selection(data.counts, data.design, data.offsets,
                               ResampleConfig(s=1, fraction=1.0))
    _, _, net = infer_network(data.counts, data.design, data.offsets)
    np.testing.assert_array_equal(freq.freq, net.adjacency.astype(float))


def test_deterministic_across_schedules(data):
    runs = [stability_selection(data.counts, data.design, data.offsets,
                                ResampleConfig(s=6, seed=7, n_jobs=j, keep_networks=True))
            for j in (1, 3, 1)]
    for r in runs[1:]:
        assert r.freq.tobytes() == runs[0].freq.tobytes()
    assert len(runs[0].networks) == 6
    f = runs[0].freq
    np.testing.assert_array_equal(f, f.T)
    assert np.all(np.diag(f) == 0)
    assert np.all((f >= 0) & (f <= 1))


def test_seed_changes_subsamples():
    a = _subsample_rows(50, 40, np.random.SeedSequence(1).spawn(2)[0])
    b = _subsample_rows(50, 40, np.random.SeedSequence(1).spawn(2)[1])
    assert len(set(a.tolist())) == 40
    assert not np.array_equal(a, b)


def test_threshold_examples():
    f = np.array([[0, 1.0, 0.3, 0.0], [1.0, 0, 0.9, 0.05], [0.3, 0.9, 0, 0.0], [0.0, 0.05, 0.0, 0]])
    assert threshold_frequencies(f, 0.0).n_edges == 4
    assert threshold_frequencies(f, 1.0).n_edges == 0
    # "selected in every replicate" is the closed cut f >= 1
    assert np.argwhere(np.triu(f >= 1.0)).tolist() == [[0, 1]]
    assert threshold_frequencies(f, 0.9).n_edges == 1
    grid, counts = threshold_curve(f)
    assert len(grid) == 101 and grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(np.diff(counts) <= 0)
    assert counts[0] == 4


def test_threshold_accepts_result_object():
    f = np.array([[0, 0.95, 0.2], [0.95, 0, 0.1], [0.2, 0.1, 0]])
    res = SelectionFrequencies(freq=f, n_success=10, n_replicates=10)
    assert threshold_frequencies(res).n_edges == 1


def test_failed_replicates(monkeypatch, data):
    import plntree.resample as mod

    real = mod.infer_network

    def flaky(y, *args, **kwargs):
        if y[0, 0] % 2:  # depends on the rows only, so failures are reproducible
            raise ValueError("boom")
        return real(y, *args, **kwargs)

    monkeypatch.setattr(mod, "infer_network", flaky)
    cfg = ResampleConfig(s=10, seed=3)
    rows = [_subsample_rows(80, 64, c) for c in np.random.SeedSequence(3).spawn(10)]
    expected = [i for i, r in enumerate(rows) if data.counts[r[0], 0] % 2]
    assert len(expected) == 2  # at the 20% limit, so the run still succeeds
    res = stability_selection(data.counts, data.design, data.offsets, cfg)
    assert res.n_success == 8
    assert [f.index for f in res.failures] == expected
    assert all(f.message == "ValueError: boom" for f in res.failures)
    assert np.all(res.freq * 8 == np.round(res.freq * 8))


def test_too_many_failures_raise(data):
    y = data.counts.copy()
    y[:, 0] = -1  # invalid counts fail every replicate in the PLN stage
    with pytest.raises(ResampleError) as err:
        stability_selection(y, data.design, data.offsets, ResampleConfig(s=3))
    assert {f.stage for f in err.value.failures} == {"pln"}


def test_config_validation(data):
    for kw in ({"s": 0}, {"fraction": 0.0}, {"fraction": 1.5}, {"freq_threshold": 2.0},
               {"n_jobs": 0}):
        with pytest.raises(ValueError):
            ResampleConfig(**kw)
    with pytest.raises(ValueError, match="too small"):
        stability_selection(data.counts[:4], data.design[:4], data.offsets[:4],
                            ResampleConfig(s=1, fraction=0.5))


def test_small_subsample_warns():
    d = simulate_dataset(SimulationSpec(structure="scalefree", p=30, n=30, seed=0,
                                        covariates=False))
    with pytest.warns(RuntimeWarning, match="p/2"):
        stability_selection(d.counts, d.design, d.offsets, ResampleConfig(s=1, fraction=0.4))
