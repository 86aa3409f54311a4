import numpy as np
import pytest

from cersa_forge.analysis import similarity_grid, subspace_similarity
from cersa_forge.linalg import grassmann, svd
from cersa_forge.spectrum import energy_profile, select_rank


def decaying(rng, m, n):
    u, _ = np.linalg.qr(rng.standard_normal((m, m)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    p = min(m, n)
    return (u[:, :p] * (0.6 ** np.arange(p))) @ v[:, :p].T


def test_identical_weights(rng):
    w = rng.standard_normal((10, 8))
    assert subspace_similarity(w, w, 0.9) == pytest.approx((1.0, 1.0))


def test_core_update_keeps_span(rng):
    w = decaying(rng, 12, 9)
    f = svd(w)
    k = select_rank(energy_profile(f.sigma), 0.95)
    s_new = rng.standard_normal((k, k)) + 3 * np.eye(k)
    w_after = f.u[:, :k] @ s_new @ f.vt[:k]
    psi_u, psi_v = subspace_similarity(w, w_after, 0.95)
    assert abs(psi_u - 1) <= 1e-8 and abs(psi_v - 1) <= 1e-8


def test_random_pairs_near_k_over_n():
    g = np.random.default_rng(5)
    n, k = 40, 4
    vals = []
    for _ in range(50):
        qa, _ = np.linalg.qr(g.standard_normal((n, k)))
        qb, _ = np.linalg.qr(g.standard_normal((n, k)))
        vals.append(grassmann(qa, qb, k, k))
    # Monte-Carlo mean against the k/n expectation
    assert abs(np.mean(vals) - k / n) < 0.05
    assert max(vals) < 0.5


def test_zero_matrix_rejected(rng):
    with pytest.raises(ValueError, match="zero"):
        subspace_similarity(np.zeros((3, 3)), rng.standard_normal((3, 3)), 0.9)
    with pytest.raises(ValueError, match="shape"):
        subspace_similarity(np.ones((3, 3)), np.ones((3, 2)), 0.9)


def test_grid_identical_all_ones(rng):
    w = rng.standard_normal((7, 5))
    grid = similarity_grid(w, w, 5, 5)
    assert np.allclose(grid.values, 1.0, atol=1e-12)
    assert np.all((grid.values >= 0) & (grid.values <= 1))


def test_grid_matches_single_calls(rng):
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((7, 5))
    for side, pick in (("u", lambda f: f.u), ("v", lambda f: f.vt.T)):
        grid = similarity_grid(a, b, 4, 3, side=side)
        fa, fb = svd(a), svd(b)
        for i, j, psi in grid.rows():
            assert psi == grassmann(pick(fa), pick(fb), i, j)


def test_grid_cell_one_matches_similarity_at_k1():
    w_before = np.diag([5.0, 0.1, 0.05])
    g = np.random.default_rng(9)
    w_after = w_before + 0.3 * g.standard_normal((3, 3))
    # retention 0.5 selects k = 1 on the before spectrum
    psi_u, _ = subspace_similarity(w_before, w_after, 0.5)
    assert similarity_grid(w_before, w_after, 1, 1).values[0, 0] == psi_u


def test_grid_bounds_and_side(rng):
    w = rng.standard_normal((4, 3))
    with pytest.raises(ValueError):
        similarity_grid(w, w, 4, 1)
    with pytest.raises(ValueError):
        similarity_grid(w, w, 1, 1, side="x")


def test_grid_csv(rng):
    w = rng.standard_normal((4, 3))
    text = similarity_grid(w, w, 1, 2).to_csv()
    assert text.splitlines()[0] == "i,j,psi"
    assert len(text.splitlines()) == 3


def test_cersa_grid_dominates_ft_on_full_span_cells():
    """Cells with i = k or j = k compare a basis against the whole retained
    span on the other side: CERSA keeps that span, so those cells are 1 and
    never below the FT counterpart. Interior cells (i, j < k) are not
    ordered, because the dense core rotates directions inside the span."""
    from cersa_forge.adapters import Cersa, FullFT
    from cersa_forge.tasks import SynthTask, gen_task
    from cersa_forge.train import ModelSpec, TrainConfig, base_weights, build_model, train_run

    cfg = TrainConfig(learning_rate=0.01, steps=300, batch_size=64)
    cells = {"c": [], "f": []}
    for seed in range(5):
        data = gen_task(SynthTask("blobs-classification", in_dim=16, out_dim=4, noise=1.0, seed=seed))
        for tag, kind in (("c", Cersa(0.95, 0.95)), ("f", FullFT())):
            spec = ModelSpec.uniform([(16, 12), (12, 4)], kind, head="softmax-ce")
            base = base_weights(spec, data, seed)
            model = build_model(spec, base, seed)
            train_run(model, cfg, data)
            w0 = base[0][0]
            k = select_rank(energy_profile(svd(w0).sigma), 0.95)
            grid = similarity_grid(w0, model.layers[0].effective_weight(), k, k).values
            cells[tag].append(np.concatenate([grid[k - 1, :], grid[:, k - 1]]))
    c = np.median(cells["c"], axis=0)
    f = np.median(cells["f"], axis=0)
    assert np.all(np.abs(c - 1) <= 1e-8)
    assert np.all(c >= f)
