import pytest

from snp_search.rng import SplitMix64

# reference outputs of the public-domain C implementation, seed 1234567
REFERENCE = [6457827717110365317, 3203168211198807973, 9817491932198370423,
             4593380528125082431, 16408922859458223821]


def test_reference_vector():
    r = SplitMix64(1234567)
    assert [r.next_u64() for _ in range(5)] == REFERENCE


def test_below_range_and_determinism():
    a, b = SplitMix64(7), SplitMix64(7)
    xs = [a.below(10) for _ in range(1000)]
    assert xs == [b.below(10) for _ in range(1000)]
    assert set(xs) == set(range(10))


def test_random_unit_interval():
    r = SplitMix64(3)
    vals = [r.random() for _ in range(2000)]
    assert all(0.0 <= v < 1.0 for v in vals)
    assert abs(sum(vals) / len(vals) - 0.5) < 0.03


def test_sample_without_replacement():
    r = SplitMix64(11)
    s = r.sample(range(20), 7)
    assert len(set(s)) == 7 and set(s) <= set(range(20))
    with pytest.raises(ValueError):
        r.sample([1, 2], 3)


def test_below_rejects_nonpositive():
    with pytest.raises(ValueError):
        SplitMix64(0).below(0)
