import numpy as np
import pytest
from scipy import stats

from cachepeer.sim.config import load_config
from cachepeer.sim.workload import Workload, make_rng, sample_request, workloads_from_config, zipf_pmf


def rank_of(cid):
    return int(cid.key.rsplit(":", 1)[1])


def analytic_pmf(n, alpha):
    w = [1.0 / (r ** alpha) for r in range(1, n + 1)]
    s = sum(w)
    return [x / s for x in w]


def test_pmf_closed_forms():
    assert zipf_pmf(4, 0.0) == pytest.approx([0.25] * 4)
    assert zipf_pmf(2, 1.0) == pytest.approx([2 / 3, 1 / 3])
    assert zipf_pmf(1000, 0.8) == pytest.approx(analytic_pmf(1000, 0.8))


@pytest.mark.parametrize("n, alpha, draws", [(4, 0.0, 100_000), (2, 1.0, 100_000)])
def test_small_catalogs_chi_square(n, alpha, draws):
    w = Workload(0, n, alpha, 1.0)
    rng = make_rng(1, 0)
    counts = np.zeros(n)
    for _ in range(draws):
        cid, cacheable = sample_request(w, rng)
        assert cacheable
        counts[rank_of(cid)] += 1
    expected = np.array(analytic_pmf(n, alpha)) * draws
    assert stats.chisquare(counts, expected).pvalue > 0.05


def test_zipf_08_chi_square_million_draws():
    w = Workload(0, 1000, 0.8, 1.0)
    ranks = w.ranks(make_rng(2, 0).random(1_000_000))
    counts = np.bincount(ranks, minlength=1000)
    expected = np.array(analytic_pmf(1000, 0.8)) * 1_000_000
    assert stats.chisquare(counts, expected).pvalue > 0.05


def test_arrivals_follow_poisson_rate():
    w = Workload(0, 100, 0.8, rate=500.0)
    times = [t for t, _, _ in w.arrivals(make_rng(3, 0), 100.0)]
    assert times == sorted(times) and times[-1] < 100.0
    # 50 000 expected; Poisson sd ~224
    assert abs(len(times) - 50_000) < 1000


def test_personalized_fraction_and_keys():
    w = Workload(0, 100, 0.8, rate=1000.0, personalized_fraction=0.3, destinations=10,
                 personalized_destinations=2)
    reqs = list(w.arrivals(make_rng(4, 0), 20.0))
    pers = [c for _, c, ok in reqs if not ok]
    assert abs(len(pers) / len(reqs) - 0.3) < 0.02
    assert len({c.key for c in pers}) == len(pers)
    assert {c.destination for c in pers} == {10, 11}
    assert all(c.destination < 10 for _, c, ok in reqs if ok)


def test_deterministic_per_seed_and_tenant():
    w1, w2 = Workload(0, 100, 0.8, 100.0), Workload(0, 100, 0.8, 100.0)
    a = list(w1.arrivals(make_rng(9, 0), 10.0))
    b = list(w2.arrivals(make_rng(9, 0), 10.0))
    c = list(Workload(0, 100, 0.8, 100.0).arrivals(make_rng(9, 1), 10.0))
    assert a == b
    assert a != c


def _overlap_cfg(fraction, n0=100, n1=200):
    return load_config({
        "seed": 1, "duration": 1.0, "object_size": 100,
        "topology": {"hosts": [0]},
        "tenants": [
            {"id": 0, "vlan": 10, "catalog_size": n0, "zipf_alpha": 0.8, "rate": 1.0,
             "overlap": {"peer": 1, "fraction": fraction}},
            {"id": 1, "vlan": 20, "catalog_size": n1, "zipf_alpha": 0.8, "rate": 1.0,
             "overlap": {"peer": 0, "fraction": fraction}},
        ],
        "caches": [{"id": 0, "tenant": 0, "host": 0, "capacity": 1000},
                   {"id": 1, "tenant": 1, "host": 0, "capacity": 1000}],
    })


@pytest.mark.parametrize("fraction, shared", [(1.0, 100), (0.5, 50), (0.0, 0)])
def test_catalog_overlap_shares_ids(fraction, shared):
    ws = workloads_from_config(_overlap_cfg(fraction))
    ids0 = {ws[0].content_for_rank(r) for r in range(100)}
    ids1 = {ws[1].content_for_rank(r) for r in range(200)}
    assert len(ids0 & ids1) == shared
