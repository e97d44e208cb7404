import numpy as np
import pytest

from kgcodes import autodiff as ad
from kgcodes import gse


def scalar_l1(vs, mu, cfg):
    """Loop-based reimplementation of the alignment loss."""
    n, m = mu.shape[0], len(vs)
    total = 0.0
    for e in range(n):
        for i in range(m):
            v = vs[i][e]
            logits = [v @ mu[ep] / cfg.tau for ep in range(n)
                      if not (cfg.exclude_self_in_denominator and ep == e)]
            logp = v @ mu[e] / cfg.tau - np.log(np.sum(np.exp(logits)))
            total -= (cfg.lambda1 ** (i + 1)) / m * logp
    return total / n


def scalar_l2(vs, neighbor_sets, mu, cfg):
    """Loop-based reimplementation of the separability loss."""
    n, m = mu.shape[0], len(vs)
    total = 0.0
    for e in range(n):
        if not neighbor_sets[e]:
            continue
        for i in range(m):
            v = vs[i][e]
            logits = [v @ mu[ep] / cfg.tau for ep in range(n)
                      if not (cfg.exclude_self_in_denominator and ep == e)]
            den = np.log(np.sum(np.exp(logits)))
            w = (cfg.lambda2 ** (m - i)) / (m * len(neighbor_sets[e]))
            for nb in neighbor_sets[e]:
                total += w * (v @ nb / cfg.tau - den)
    return total / n


def random_instance(rng, tau=1.0):
    n = rng.integers(1, 9)
    m = rng.integers(1, 4)
    d = rng.integers(1, 5)
    vs = [rng.normal(size=(n, d)) for _ in range(m)]
    mu = rng.normal(size=(n, d))
    nbrs = [[rng.normal(size=d) for _ in range(rng.integers(0, 4))]
            for _ in range(n)]
    return vs, mu, nbrs, gse.GseConfig(tau=tau)


def as_tensors(vs):
    return [ad.Tensor(v) for v in vs]


def test_l1_singleton_batch_is_zero():
    cfg = gse.GseConfig(tau=1.0)
    vs = [np.array([[1.0, 2.0]])]
    mu = np.array([[3.0, -1.0]])
    assert gse.loss_l1(as_tensors(vs), mu, cfg).item() == pytest.approx(0.0, abs=1e-12)


def test_l1_worked_value():
    # two entities with unit centroids on different axes, each surrogate
    # aligned with its own centroid: 0.8 * log(1 + e^-1) = 0.25061...
    cfg = gse.GseConfig(tau=1.0, lambda1=0.8)
    vs = [np.array([[1.0, 0.0], [0.0, 1.0]])]
    mu = np.array([[1.0, 0.0], [0.0, 1.0]])
    expected = 0.8 * np.log(1 + np.exp(-1))
    got = gse.loss_l1(as_tensors(vs), mu, cfg).item()
    assert got == pytest.approx(expected, abs=1e-10)
    assert got == pytest.approx(0.25061, abs=5e-6)


def test_l2_all_empty_neighbor_sets():
    cfg = gse.GseConfig(tau=1.0)
    vs = [np.ones((3, 2))]
    mu = np.zeros((3, 2))
    assert gse.loss_l2(as_tensors(vs), [[], [], []], mu, cfg).item() == 0.0


def test_l2_aligned_vs_neighbors_is_negative_and_decreasing():
    cfg = gse.GseConfig(tau=1.0)
    mu = np.array([[1.0, 0.0], [0.0, 1.0]])
    nbrs = [[mu[1]], [mu[0]]]
    losses = []
    for scale in (1.0, 2.0, 3.0):
        vs = [mu * scale]  # increasingly aligned with own centroid
        losses.append(gse.loss_l2(as_tensors(vs), nbrs, mu, cfg).item())
        assert losses[-1] == pytest.approx(
            scalar_l2(vs, nbrs, mu, cfg), abs=1e-10)
    assert all(v < 0 for v in losses)
    assert losses[0] > losses[1] > losses[2]


def test_l2_weight_schedule_closed_form():
    # m=3, lambda2=0.4: level weights proportional to (0.064, 0.16, 0.4)
    cfg = gse.GseConfig(tau=1.0, lambda2=0.4)
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(1, 2))
    nb = rng.normal(size=2)
    vs = [rng.normal(size=(1, 2)) for _ in range(3)]
    got = gse.loss_l2(as_tensors(vs), [[nb]], mu, cfg).item()
    weights = (0.064, 0.16, 0.4)
    expected = sum(
        w / 3 * (vs[i][0] @ nb - np.log(np.exp(vs[i][0] @ mu[0])))
        for i, w in enumerate(weights))
    assert got == pytest.approx(expected, rel=1e-12)


def test_weight_monotonicity():
    cfg = gse.GseConfig()
    m = 3
    w1 = [(cfg.lambda1 ** (i + 1)) / m for i in range(m)]
    w2 = [(cfg.lambda2 ** (m - i)) / m for i in range(m)]
    assert all(a > b for a, b in zip(w1, w1[1:]))
    assert all(a < b for a, b in zip(w2, w2[1:]))


@pytest.mark.parametrize("tau", [0.05, 0.1, 0.5, 1.0])
def test_scalar_oracle_equivalence(tau):
    rng = np.random.default_rng(int(tau * 100))
    for _ in range(25):
        vs, mu, nbrs, cfg = random_instance(rng, tau=tau)
        t = as_tensors(vs)
        assert gse.loss_l1(t, mu, cfg).item() == pytest.approx(
            scalar_l1(vs, mu, cfg), abs=1e-8, rel=1e-8)
        assert gse.loss_l2(t, nbrs, mu, cfg).item() == pytest.approx(
            scalar_l2(vs, nbrs, mu, cfg), abs=1e-8, rel=1e-8)


def test_scalar_oracle_equivalence_with_self_exclusion():
    rng = np.random.default_rng(42)
    for _ in range(25):
        vs, mu, nbrs, cfg = random_instance(rng)
        if mu.shape[0] < 2:
            continue  # excluding self from a singleton empties the sum
        cfg.exclude_self_in_denominator = True
        t = as_tensors(vs)
        assert gse.loss_l1(t, mu, cfg).item() == pytest.approx(
            scalar_l1(vs, mu, cfg), abs=1e-8, rel=1e-8)
        assert gse.loss_l2(t, nbrs, mu, cfg).item() == pytest.approx(
            scalar_l2(vs, nbrs, mu, cfg), abs=1e-8, rel=1e-8)


def test_batch_permutation_invariance():
    rng = np.random.default_rng(1)
    vs, mu, nbrs, cfg = random_instance(rng)
    n = mu.shape[0]
    perm = rng.permutation(n)
    vs_p = [v[perm] for v in vs]
    nbrs_p = [nbrs[e] for e in perm]
    assert gse.loss_l1(as_tensors(vs), mu, cfg).item() == pytest.approx(
        gse.loss_l1(as_tensors(vs_p), mu[perm], cfg).item(), abs=1e-12)
    assert gse.loss_l2(as_tensors(vs), nbrs, mu, cfg).item() == pytest.approx(
        gse.loss_l2(as_tensors(vs_p), nbrs_p, mu[perm], cfg).item(), abs=1e-12)


def test_loss_gse_ablation_identities():
    rng = np.random.default_rng(2)
    vs, mu, nbrs, cfg = random_instance(rng)
    t = as_tensors(vs)
    l1 = gse.loss_l1(t, mu, cfg).item()
    l2 = gse.loss_l2(t, nbrs, mu, cfg).item()
    assert gse.loss_gse(t, mu, nbrs, cfg, use_l2=False).item() == pytest.approx(l1, abs=1e-12)
    assert gse.loss_gse(t, mu, nbrs, cfg, use_l1=False).item() == pytest.approx(l2, abs=1e-12)
    assert gse.loss_gse(t, mu, nbrs, cfg).item() == pytest.approx(l1 + l2, abs=1e-12)
    assert gse.loss_gse(t, mu, nbrs, cfg, use_l1=False, use_l2=False).item() == 0.0


def test_config_validation():
    with pytest.raises(gse.GseError):
        gse.GseConfig(tau=0.0).validate()
    with pytest.raises(gse.GseError):
        gse.GseConfig(lambda1=1.0).validate()
    with pytest.raises(gse.GseError):
        gse.GseConfig(lambda2=0.0).validate()


def test_grad_check_l1():
    rng = np.random.default_rng(3)
    mu = rng.normal(size=(6, 4))
    cfg = gse.GseConfig(tau=1.0)

    def fn(t):
        return gse.loss_l1([t[f"v{i}"] for i in range(3)], mu, cfg)

    t = {f"v{i}": ad.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
         for i in range(3)}
    for wrt in t:
        assert ad.grad_check(fn, t, wrt, eps=1e-5) < 1e-4


def test_grad_check_l2():
    rng = np.random.default_rng(4)
    mu = rng.normal(size=(6, 4))
    nbrs = [[rng.normal(size=4) for _ in range(rng.integers(0, 4))]
            for _ in range(6)]
    cfg = gse.GseConfig(tau=1.0)

    def fn(t):
        return gse.loss_l2([t[f"v{i}"] for i in range(3)], nbrs, mu, cfg)

    t = {f"v{i}": ad.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
         for i in range(3)}
    for wrt in t:
        assert ad.grad_check(fn, t, wrt, eps=1e-5) < 1e-4


def test_shared_denominators_match_unshared():
    rng = np.random.default_rng(5)
    vs, mu, nbrs, cfg = random_instance(rng)
    t = as_tensors(vs)
    den = gse.log_denominators(t, mu, cfg)
    assert gse.loss_l1(t, mu, cfg, denominators=den).item() == pytest.approx(
        gse.loss_l1(t, mu, cfg).item(), abs=1e-12)
    assert gse.loss_l2(t, nbrs, mu, cfg, denominators=den).item() == pytest.approx(
        gse.loss_l2(t, nbrs, mu, cfg).item(), abs=1e-12)
