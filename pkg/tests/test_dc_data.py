from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selexit.dc_data import (
    build_dc_dataset,
    hard_count,
    label_hard,
    make_profile,
    profile,
    read_profiles_csv,
    write_profiles_csv,
)
from selexit.model import MultiExitModel


def test_profile_mean_and_variance():
    p = make_profile(0, [0.9, 0.8, 1.0])
    assert p.mu == pytest.approx(0.9)
    # (0^2 + 0.1^2 + 0.1^2) / 3
    assert p.sigma == pytest.approx(0.02 / 3)


def test_constant_profile_has_zero_variance():
    assert make_profile(3, [0.4] * 5).sigma == 0.0


def test_profile_leaves_model_untouched(blobs):
    train, _, _ = blobs
    model = MultiExitModel.build(4, 5, 3, 2, seed=0)
    before = model.checksum()
    profs = profile(model, train)
    assert model.checksum() == before
    assert len(profs) == len(train)
    assert all(0 < p.mu < 1 and p.sigma >= 0 for p in profs)


def test_label_hard_example():
    mus = [0.2, 0.3, 0.5, 0.7, 0.8, 0.9]
    profs = [make_profile(i, [m, m]) for i, m in enumerate(mus)]
    labeled = label_hard(profs, 33)
    # round(0.33 * 6) = 2 lowest
    np.testing.assert_array_equal(labeled.z, [1, 1, 0, 0, 0, 0])


def test_ties_go_to_lowest_ids():
    profs = [make_profile(i, [0.5]) for i in (4, 2, 0, 1, 3)]
    labeled = label_hard(profs, 40)
    hard_ids = sorted(labeled.ids[labeled.z == 1])
    assert hard_ids == [0, 1]


def test_variance_does_not_affect_labels():
    # same means, very different spreads
    a = [make_profile(0, [0.5, 0.5]), make_profile(1, [0.1, 0.9]), make_profile(2, [0.9, 0.9])]
    labeled = label_hard(a, 34)
    np.testing.assert_array_equal(labeled.z, [1, 0, 0])


@pytest.mark.parametrize("k", [0, 100, -5, 150])
def test_k_out_of_range(k):
    with pytest.raises(ValueError):
        label_hard([make_profile(0, [0.5])], k)


def test_hard_count_rounds_half_up():
    assert hard_count(50, 3) == 2  # 1.5 -> 2
    assert hard_count(33, 6) == 2
    assert hard_count(10, 5) == 1  # 0.5 -> 1
    assert hard_count(90, 10) == 9


@settings(max_examples=200)
@given(
    st.lists(st.floats(0.01, 0.99), min_size=1, max_size=60),
    st.floats(0.5, 99.5),
)
def test_labeling_invariants(mus, k):
    profs = [make_profile(i, [m]) for i, m in enumerate(mus)]
    labeled = label_hard(profs, k)
    m = len(mus)
    expected = (Decimal(repr(k)) * m / 100).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    assert labeled.n_hard == int(expected)
    mu = np.array(mus)
    hard, easy = mu[labeled.z == 1], mu[labeled.z == 0]
    if len(hard) and len(easy):
        assert hard.max() <= easy.min()


def test_profiles_csv_round_trip(tmp_path, blobs):
    train, _, _ = blobs
    model = MultiExitModel.build(4, 5, 3, 2, seed=0)
    labeled = build_dc_dataset(model, train, 33)
    path = tmp_path / "profiles.csv"
    write_profiles_csv(labeled, path)
    header = path.read_text().splitlines()[0]
    assert header == "sample_id,p_layer_1,p_layer_2,p_layer_3,mu,sigma,label"
    profs, z = read_profiles_csv(path)
    np.testing.assert_array_equal(z, labeled.z)
    for a, b in zip(profs, labeled.profiles):
        assert a.mu == b.mu and np.array_equal(a.probs, b.probs)
