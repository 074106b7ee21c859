import numpy as np
import pytest

from multicate import MultiTrialDataset, load_dataset, validate_assumptions, write_csv
from multicate.errors import DataError


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


BASIC = """trial,treat,y,age,score
1,0,1.5,30,0.2
1,1,2.5,40,0.1
1,0,0.5,50,0.9
2,1,3.5,35,-0.4
2,0,1.0,45,0.0
2,1,2.0,55,1.3
"""


def test_load_preserves_shape(tmp_path):
    data = load_dataset(_write(tmp_path, BASIC))
    assert data.n_total == 6
    assert data.k == 2
    assert data.covariate_names == ("age", "score")
    assert data.trial_levels == [1, 2]


def test_missing_file_rejected():
    with pytest.raises(DataError, match="not found"):
        load_dataset("/nonexistent/never.csv")


def test_non_binary_treatment_names_offending_row(tmp_path):
    bad = BASIC.replace("2,1,3.5", "2,2,3.5")
    with pytest.raises(DataError, match="row 3.*'2'"):
        load_dataset(_write(tmp_path, bad))


def test_missing_outcome_rows_are_rejected_with_indices(tmp_path):
    holed = BASIC.replace("2,0,1.0", "2,0,")
    data = load_dataset(_write(tmp_path, holed))
    assert data.n_total == 5
    assert data.rejected_rows == (4,)


def test_mean_imputation_fills_with_observed_column_mean(tmp_path):
    holed = BASIC.replace("1,1,2.5,40,0.1", "1,1,2.5,,0.1")
    data = load_dataset(_write(tmp_path, holed), impute="mean")
    observed_mean = np.mean([30.0, 50.0, 35.0, 45.0, 55.0])
    assert data.covariates[1, 0] == pytest.approx(observed_mean, abs=0)


def test_missing_covariate_without_impute_drops_row(tmp_path):
    holed = BASIC.replace("1,1,2.5,40,0.1", "1,1,2.5,,0.1")
    data = load_dataset(_write(tmp_path, holed))
    assert data.n_total == 5
    assert data.rejected_rows == (1,)


def test_schema_column_remapping(tmp_path):
    text = BASIC.replace("trial,treat,y", "study,arm,outcome")
    data = load_dataset(
        _write(tmp_path, text),
        schema={"trial": "study", "treat": "arm", "y": "outcome"},
    )
    assert data.n_total == 6


def test_missing_required_column_rejected(tmp_path):
    with pytest.raises(DataError, match="missing required columns"):
        load_dataset(_write(tmp_path, BASIC.replace("treat", "arm")))


def test_roundtrip_is_bit_identical(tmp_path, rng):
    n = 40
    data = MultiTrialDataset(
        trial=np.repeat([1, 2], n // 2),
        covariates=rng.normal(size=(n, 3)) * np.pi,
        treatment=(rng.random(n) < 0.5).astype(int),
        outcome=rng.normal(size=n) / 3.0,
        covariate_names=("x1", "x2", "x3"),
    )
    path = tmp_path / "out.csv"
    write_csv(data, path)
    back = load_dataset(str(path))
    np.testing.assert_array_equal(back.covariates, data.covariates)
    np.testing.assert_array_equal(back.outcome, data.outcome)
    np.testing.assert_array_equal(back.treatment, data.treatment)
    np.testing.assert_array_equal(back.trial, data.trial)


def test_dataset_invariants_enforced():
    with pytest.raises(DataError, match="treatment"):
        MultiTrialDataset(
            trial=np.array([1, 1]),
            covariates=np.zeros((2, 1)),
            treatment=np.array([0, 2]),
            outcome=np.zeros(2),
            covariate_names=("x1",),
        )
    with pytest.raises(DataError, match="finite"):
        MultiTrialDataset(
            trial=np.array([1, 1]),
            covariates=np.zeros((2, 1)),
            treatment=np.array([0, 1]),
            outcome=np.array([0.0, np.inf]),
            covariate_names=("x1",),
        )


def _make_data(fracs, n=80, seed=0, shift=None):
    rng = np.random.default_rng(seed)
    trials, treats, xs = [], [], []
    for i, frac in enumerate(fracs, start=1):
        n_t = int(round(frac * n))
        a = np.concatenate([np.ones(n_t), np.zeros(n - n_t)]).astype(int)
        X = rng.normal(size=(n, 2))
        if shift is not None:
            X[:, 0] += shift * (i - 1)
        trials.append(np.full(n, i))
        treats.append(a)
        xs.append(X)
    n_all = n * len(fracs)
    return MultiTrialDataset(
        trial=np.concatenate(trials),
        covariates=np.vstack(xs),
        treatment=np.concatenate(treats),
        outcome=rng.normal(size=n_all),
        covariate_names=("x1", "x2"),
    )


def test_single_armed_trial_is_hard_violation():
    report = validate_assumptions(_make_data([1.0, 0.5]), c_threshold=0.1)
    assert not report.passed
    assert any(f.trial_id == 1 and "single-armed" in f.message for f in report.violations)


def test_balanced_trials_pass_randomization_check():
    report = validate_assumptions(_make_data([0.5, 0.5]), c_threshold=0.4)
    a3 = [f for f in report.violations if f.assumption == "randomization-positivity"]
    assert a3 == []
    assert report.passed


def test_identical_covariate_distributions_produce_no_membership_warnings():
    data = _make_data([0.5, 0.5], n=150, seed=1)
    report = validate_assumptions(data, c_threshold=0.1, d_threshold=0.2)
    from multicate.dataset import fit_trial_membership_model

    probs = fit_trial_membership_model(data)
    assert np.all(np.abs(probs - 0.5) < 0.25)
    assert report.warnings == []


def test_separated_trials_trigger_membership_warning():
    data = _make_data([0.5, 0.5], n=150, seed=2, shift=8.0)
    report = validate_assumptions(data, c_threshold=0.1, d_threshold=0.1)
    assert report.warnings
    assert report.passed  # membership findings never fail the report


def test_validation_is_deterministic():
    data = _make_data([0.5, 0.6], n=100, seed=3, shift=0.5)
    r1 = validate_assumptions(data, 0.1, 0.05)
    r2 = validate_assumptions(data, 0.1, 0.05)
    assert r1.per_trial_propensity == r2.per_trial_propensity
    assert [f.message for f in r1.warnings] == [f.message for f in r2.warnings]


def test_threshold_bounds_validated():
    data = _make_data([0.5])
    with pytest.raises(DataError):
        validate_assumptions(data, c_threshold=0.7)
    with pytest.raises(DataError):
        validate_assumptions(data, c_threshold=0.1, d_threshold=0.0)
