import math
import pytest
from hypothesis import given, settings, strategies as st

from dprelia.dpsgd import RunRecord
from dprelia.errors import ConfigurationError, InvalidInputError, PairingError, SeedPolicyError
from dprelia.harness import (
    ExperimentManifest,
    MethodSpec,
    Setting,
    compare_methods,
    load_records,
    plan,
    run_sweep,
    split_by_method,
    summarize,
    summary_csv,
    write_records,
)
from dprelia.stats import PairedSample, paired_ttest

DATA = "blobs:n=600,dims=5,classes=2,sep=2.0,seed=3"


def small_manifest(**kw):
    base = dict(
        methods=(MethodSpec("basic", 0.1, 64, 20, "basic:5.0"), MethodSpec("auto", 1.0, 64, 20, "auto:0.01")),
        settings=(Setting(DATA, "logreg", 2.0), Setting(DATA, "mlp:4", math.inf)),
        runs_per_cell=3,
        seed=11,
    )
    base.update(kw)
    return ExperimentManifest(**base)


def fake_record(method, acc, run_index=0, eps=1.0, dataset="d", status="ok"):
    return RunRecord(
        run_id=f"{method}-{dataset}-{eps}-{run_index}", method_id=method, dataset_id=dataset, model="logreg",
        layout="2-2", epsilon=eps, epsilon_spent=eps, delta=1e-5, sigma=1.0, clip="basic:1", seed=run_index,
        privacy_valid=True, run_index=run_index, steps=1, epochs=1.0, batch_size=1, learning_rate=0.1,
        skipped_steps=0, test_accuracy=acc if status == "ok" else None,
        train_accuracy=acc if status == "ok" else None, wall_time_seconds=0.0, status=status,
    )


# --- manifest and planning ------------------------------------------------------------

def test_manifest_round_trip():
    m = small_manifest()
    assert ExperimentManifest.from_dict(m.to_dict()) == m


@pytest.mark.parametrize("kw", [
    {"runs_per_cell": 0},
    {"methods": ()},
    {"methods": (MethodSpec("x"), MethodSpec("x"))},
    {"settings": (Setting(DATA), Setting(DATA))},
    {"alpha": 1.5},
])
def test_manifest_validation(kw):
    with pytest.raises(ConfigurationError):
        small_manifest(**kw)


def test_plan_calibrates_private_cells_only():
    jobs = plan(small_manifest(), unsafe_fixed_seed=True)
    assert len(jobs) == 2 * 2 * 3
    assert len({j.run_id for j in jobs}) == len(jobs)
    for j in jobs:
        if j.config.target_epsilon is None:
            assert j.config.sigma == 0.0 and j.config.clip.kind == "none"
        else:
            assert j.config.sigma > 0
    assert len({j.seed for j in jobs}) == len(jobs)


def test_fixed_master_seed_needs_opt_in_for_private_cells():
    with pytest.raises(SeedPolicyError):
        plan(small_manifest())
    nonprivate = small_manifest(settings=(Setting(DATA, "logreg", math.inf),))
    assert all(not j.privacy_valid for j in plan(nonprivate))


def test_fresh_seeds_are_privacy_valid():
    jobs = plan(small_manifest(seed=None))
    assert all(j.privacy_valid for j in jobs)


def test_batch_larger_than_data_rejected():
    m = small_manifest(methods=(MethodSpec("big", 0.1, 10_000, 5, "basic:1.0"),))
    with pytest.raises(ConfigurationError):
        plan(m, unsafe_fixed_seed=True)


# --- sweeps ---------------------------------------------------------------------------

def test_sweep_persists_and_reloads_identically(tmp_path):
    path = tmp_path / "runs.jsonl"
    records = run_sweep(small_manifest(), path, unsafe_fixed_seed=True)
    loaded = load_records(path)
    assert sorted(loaded, key=lambda r: r.run_id) == sorted(records, key=lambda r: r.run_id)
    assert summarize(loaded) == summarize(records)


def test_sweep_is_independent_of_worker_count():
    m = small_manifest()
    one = run_sweep(m, workers=1, unsafe_fixed_seed=True)
    two = run_sweep(m, workers=2, unsafe_fixed_seed=True)
    assert [r.outcome() for r in one] == [r.outcome() for r in two]


def test_diverged_runs_are_recorded_and_sweep_continues(tmp_path):
    import numpy as np
    from dprelia.dpsgd import write_csv

    huge = tmp_path / "huge.csv"
    X = np.array([[1e300, 1e300], [-1e300, 1e300]] * 20)
    write_csv(huge, X, np.array([0, 1] * 20))
    m = small_manifest(
        methods=(MethodSpec("wild", 1e10, 32, 3, "none"), MethodSpec("tame", 0.1, 32, 3, "none")),
        settings=(Setting(str(huge), "logreg", math.inf), Setting(DATA, "logreg", math.inf)),
        runs_per_cell=2,
    )
    path = tmp_path / "runs.jsonl"
    records = run_sweep(m, path)
    assert len(records) == 8
    bad = [r for r in records if not r.ok]
    assert len(bad) == 4 and all(r.dataset_id == str(huge) for r in bad)
    assert all(r.status == "diverged" and r.test_accuracy is None and "step" in r.error for r in bad)
    assert load_records(path) and len(load_records(path)) == 8
    assert all(s.n == 2 for s in summarize(records))  # the failed cell is dropped, others intact


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv("DPRELIA_WORKERS", "0")
    with pytest.raises(ConfigurationError):
        run_sweep(small_manifest(), unsafe_fixed_seed=True)


def test_load_records_reports_bad_lines(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"not": "a record"}\n')
    with pytest.raises(InvalidInputError, match="bad.jsonl:1"):
        load_records(p)


# --- summaries ------------------------------------------------------------------------

def test_summary_statistics():
    recs = [fake_record("m", a, i) for i, a in enumerate([0.5, 0.7, 0.9])]
    (s,) = summarize(recs)
    assert (s.n, s.mean, s.median, s.max, s.min) == (3, pytest.approx(0.7), 0.7, 0.9, 0.5)
    assert s.std == pytest.approx(math.sqrt(((0.2) ** 2 * 2) / 3))
    assert s.max_minus_min == pytest.approx(0.4)


def test_summary_skips_failed_runs_and_empty_cells(caplog):
    recs = [fake_record("m", 0.5, 0), fake_record("m", 0.0, 1, status="diverged"),
            fake_record("n", 0.0, 0, status="diverged")]
    out = summarize(recs)
    assert [(s.method, s.n) for s in out] == [("m", 1)]
    assert "no successful runs" in caplog.text


def test_summary_csv_columns():
    text = summary_csv(summarize([fake_record("m", 0.5, 0, eps=math.inf)]))
    header, row = text.strip().split("\n")
    assert header.split(",") == ["method", "dataset", "model", "epsilon", "n", "mean", "median",
                                 "max", "min", "std", "max_minus_min"]
    assert row.split(",")[3] == "inf"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_summary_order_invariant(accs):
    recs = [fake_record("m", a, i) for i, a in enumerate(accs)]
    (a,) = summarize(recs)
    (b,) = summarize(list(reversed(recs)))
    assert a.median == b.median and a.max == b.max and a.min == b.min
    assert a.mean == pytest.approx(b.mean, abs=1e-12)
    assert a.min <= a.median <= a.max


# --- comparison -----------------------------------------------------------------------

def test_compare_matches_direct_ttest():
    a = [0.80, 0.82, 0.85, 0.79]
    b = [0.70, 0.74, 0.77, 0.72]
    ra = [fake_record("a", x, i) for i, x in enumerate(a)]
    rb = [fake_record("b", x, i) for i, x in enumerate(b)]
    comp = compare_methods(ra, rb)
    assert comp.report == paired_ttest(PairedSample.of(a, b))
    assert comp.report.significant
    assert comp.cells[0]["n"] == 4


def test_compare_pairs_by_key_not_by_order():
    ra = [fake_record("a", 0.8 + i / 100, i) for i in range(4)]
    rb = [fake_record("b", 0.7 + i / 100, i) for i in range(4)]
    assert compare_methods(ra, rb).report == compare_methods(ra[::-1], rb).report


def test_compare_orphans_raise():
    ra = [fake_record("a", 0.8, i) for i in range(3)]
    rb = [fake_record("b", 0.7, i) for i in range(2)]
    with pytest.raises(PairingError) as info:
        compare_methods(ra, rb)
    assert len(info.value.orphans_a) == 1 and not info.value.orphans_b


def test_compare_drops_failed_pairs():
    ra = [fake_record("a", 0.8 + i / 100, i) for i in range(4)]
    rb = [fake_record("b", 0.7 + i / 50, i) for i in range(4)]
    rb[1] = fake_record("b", 0.0, 1, status="diverged")
    comp = compare_methods(ra, rb)
    assert comp.dropped_pairs == 1 and comp.report.n == 3
    assert any("dropped" in w for w in comp.warnings)


def test_compare_warns_when_underpowered():
    ra = [fake_record("a", x, i) for i, x in enumerate([0.5, 0.6, 0.7])]
    rb = [fake_record("b", x, i) for i, x in enumerate([0.52, 0.55, 0.71])]
    comp = compare_methods(ra, rb)
    assert comp.report.required_n > 3
    assert any("80% power" in w for w in comp.warnings)


def test_compare_by_setting_uses_cell_means():
    ra, rb = [], []
    for j, eps in enumerate([0.5, 1.0, 8.0]):
        ra += [fake_record("a", 0.6 + j / 10 + i / 100, i, eps) for i in range(3)]
        rb += [fake_record("b", 0.55 + j / 10 + i / 90, i, eps) for i in range(3)]
    comp = compare_methods(ra, rb, pair_key="setting")
    assert comp.report.n == 3
    assert len(comp.cells) == 3


def test_compare_rejects_mixed_methods():
    ra = [fake_record("a", 0.8, 0), fake_record("x", 0.8, 1)]
    rb = [fake_record("b", 0.7, 0), fake_record("b", 0.7, 1)]
    with pytest.raises(PairingError):
        compare_methods(ra, rb)


def test_comparison_json_round_trip():
    ra = [fake_record("a", x, i) for i, x in enumerate([0.5, 0.5, 0.5])]
    rb = [fake_record("b", x, i) for i, x in enumerate([0.5, 0.5, 0.5])]
    comp = compare_methods(ra, rb)
    d = comp.to_dict()
    assert d["report"]["cohen_d"] == "nan"
    back = type(comp).from_dict(d)
    assert math.isnan(back.report.cohen_d) and back.report.p_value == 1.0
    assert "Verdict:" in comp.to_markdown()


def test_write_and_split(tmp_path):
    recs = [fake_record("a", 0.5, 0), fake_record("b", 0.6, 0)]
    write_records(tmp_path / "r.jsonl", recs)
    assert sorted(split_by_method(load_records(tmp_path / "r.jsonl"))) == ["a", "b"]
