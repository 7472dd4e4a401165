import numpy as np
import pytest

from pcmcd import autodiff as ad
from pcmcd.geometry import dataset_angles, sample_dataset_shape, soft_tokens
from pcmcd.oracle import DatasetError, generate_dataset, load_dataset
from pcmcd.surrogate import (Filter2ShapeModel, SurrogateModel, finetune_tandem, project_shape,
                             shape_loss, surrogate_forward, tandem_mse, train_filter2shape,
                             train_surrogate)


def _tiny_surrogate(seed=0):
    return SurrogateModel(d=16, heads=2, blocks=1, hidden=64, seed=seed)


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ds.txt"
    return load_dataset(generate_dataset(40, 3, path, workers=1))


@pytest.fixture(scope="module")
def one_ds(tmp_path_factory):
    path = tmp_path_factory.mktemp("one") / "ds.txt"
    return load_dataset(generate_dataset(1, 5, path, workers=1))


def test_zeroed_head_predicts_half():
    m = _tiny_surrogate()
    m.out.weight.data[...] = 0.0
    m.out.bias.data[...] = 0.0
    out = surrogate_forward(m, sample_dataset_shape(0, 3)).data
    assert out.shape == (11, 100)
    np.testing.assert_array_equal(out, 0.5)


def test_outputs_in_open_unit_interval():
    m = SurrogateModel(seed=1)
    rng = np.random.default_rng(0)
    tok = np.stack([sample_dataset_shape(rng, int(rng.integers(1, 5))).tokens() for _ in range(8)])
    y = m(ad.Tensor(tok)).data
    assert y.shape == (8, 11, 100)
    assert np.all((y > 0) & (y < 1))


def test_absent_slots_do_not_leak():
    m = SurrogateModel(seed=2)
    tok = sample_dataset_shape(4, 2).tokens()
    ref = m(ad.Tensor(tok)).data
    rng = np.random.default_rng(1)
    for _ in range(5):
        t2 = tok.copy()
        t2[2:, 1:] = rng.uniform(0, 0.5, (2, 2))
        np.testing.assert_allclose(m(ad.Tensor(t2)).data, ref, atol=1e-10, rtol=0)


def test_gradient_wrt_vertex_radii():
    m = _tiny_surrogate(seed=3)
    theta = dataset_angles(4)
    dirs = ad.Tensor(np.column_stack([np.cos(theta), np.sin(theta)]))
    radius = ad.parameter(np.array([0.3, 0.2, 0.35, 0.25]))
    logits = ad.Tensor(np.array([1.0, 0.5, -0.5]))
    w = ad.Tensor(np.random.default_rng(0).standard_normal((11, 100)))

    def fn():
        verts = ad.mul(ad.reshape(radius, (4, 1)), dirs)
        return ad.sum_(ad.mul(m(soft_tokens(logits, verts)), w))

    assert ad.grad_check(fn, [radius, m.embed.weight]) < 1e-3


def test_memorises_single_record(one_ds):
    report = train_surrogate(_tiny_surrogate(), one_ds, epochs=200, batch=1, lr=2e-3)
    assert report.final_train < 1e-4
    inv = Filter2ShapeModel(hidden=64)
    assert train_filter2shape(inv, one_ds, epochs=200, batch=1, lr=1e-3).final_train < 1e-4


def test_inverse_coordinates_in_quadrant():
    inv = Filter2ShapeModel(hidden=32, seed=1)
    banks = np.random.default_rng(0).uniform(0, 1, (6, 11, 100))
    lg, vt = inv(ad.Tensor(banks))
    assert lg.shape == (6, 3) and vt.shape == (6, 4, 2)
    assert vt.data.min() >= 0.0 and vt.data.max() <= 0.5


def test_shape_loss_ignores_absent_targets():
    rng = np.random.default_rng(0)
    presence = np.array([[1.0, 1.0, 0.0, 0.0]])
    coords = rng.uniform(0, 0.5, (1, 4, 2))
    lg = ad.Tensor(np.array([[3.0, -3.0, 0.0]]))
    vt = ad.Tensor(rng.uniform(0, 0.5, (1, 4, 2)))
    base = shape_loss(lg, vt, presence, coords).item()
    coords2 = coords.copy()
    coords2[0, 2:] = rng.uniform(0, 0.5, (2, 2))
    vt2 = vt.data.copy()
    vt2[0, 2:] += 0.1
    assert shape_loss(lg, ad.Tensor(vt2), presence, coords2).item() == base


def test_tandem_keeps_surrogate_fixed_and_does_not_worsen(small_ds):
    sur = _tiny_surrogate()
    train_surrogate(sur, small_ds, epochs=5, batch=8)
    sur.freeze()
    before = {k: v.tobytes() for k, v in sur.state_dict().items()}
    inv = Filter2ShapeModel(hidden=32)
    train_filter2shape(inv, small_ds, epochs=5, batch=8)
    start = tandem_mse(inv, sur, small_ds.banks)
    report = finetune_tandem(inv, sur, small_ds, epochs=10, batch=8, lr=5e-4)
    assert report.rows[0][0] == -1
    assert report.final_train <= report.rows[0][1]
    assert tandem_mse(inv, sur, small_ds.banks) <= start
    assert {k: v.tobytes() for k, v in sur.state_dict().items()} == before


def test_unfrozen_surrogate_rejected(small_ds):
    with pytest.raises(ad.ContractError):
        finetune_tandem(Filter2ShapeModel(hidden=16), _tiny_surrogate(), small_ds, epochs=1)


def test_training_is_deterministic(small_ds):
    def run():
        m = _tiny_surrogate(seed=7)
        r = train_surrogate(m, small_ds, epochs=3, batch=8, seed=7)
        return r.rows, {k: v.tobytes() for k, v in m.state_dict().items()}

    assert run() == run()


def test_split_holds_out_records(small_ds):
    train, test = small_ds.split()
    assert len(test) > 0 and len(train) + len(test) == len(small_ds)
    report = train_surrogate(_tiny_surrogate(), small_ds, epochs=2, batch=8)
    assert np.isfinite(report.final_test)


def test_project_shape_returns_valid_shape():
    sur, inv = _tiny_surrogate().freeze(), Filter2ShapeModel(hidden=16).freeze()
    out = project_shape(sample_dataset_shape(1, 3), inv, sur)
    assert out.vertices.shape == (4, 2) and out.logits.shape == (3,)


def test_empty_dataset_rejected(tmp_path):
    with pytest.raises(DatasetError):
        generate_dataset(0, 0, tmp_path / "x.txt")
