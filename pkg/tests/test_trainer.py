import numpy as np
import pytest

from wbcreid.dataio import ConfigurationError, SynthConfig, generate_arrays
from wbcreid.model import ModelConfig, ModelParams, init_model
from wbcreid.trainer import SGDConfig, init_state, lr_schedule, make_batches, sgd_step, train


def scalar_params(value):
    cfg = ModelConfig(variant="GAP", use_backbone=False, channels=1, embed_dim=1)
    return ModelParams(cfg, {"embed.0.weight": np.array([[value]])})


class TestSchedule:
    def test_documented_values(self):
        cfg = SGDConfig()
        assert lr_schedule(0, cfg) == 0.008
        assert lr_schedule(4000, cfg) == 0.004
        assert lr_schedule(8000, cfg) == 0.002

    def test_halves_exactly_and_never_increases(self):
        cfg = SGDConfig.desk()
        lrs = [lr_schedule(i, cfg) for i in range(1000)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        for k in range(1, 5):
            assert lr_schedule(k * cfg.halve_period, cfg) == lr_schedule(k * cfg.halve_period - 1, cfg) / 2

    def test_defaults(self):
        cfg = SGDConfig()
        assert (cfg.momentum, cfg.weight_decay, cfg.batch_size) == (0.9, 0.0005, 300)
        desk = SGDConfig.desk()
        assert (desk.batch_size, desk.halve_period, desk.max_iters, desk.identities_per_batch) == (32, 200, 500, 8)
        assert desk.initial_lr == 0.008

    @pytest.mark.parametrize(
        "kwargs", [dict(initial_lr=0.0), dict(halve_period=0), dict(momentum=1.0), dict(weight_decay=-1.0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            SGDConfig(**kwargs)


class TestSgdStep:
    def test_plain_step(self):
        p = scalar_params(1.0)
        cfg = SGDConfig(initial_lr=0.1, momentum=0.0, weight_decay=0.0)
        new, _ = sgd_step(p, {"embed.0.weight": np.array([[1.0]])}, init_state(p, cfg), cfg)
        assert new.tensors["embed.0.weight"][0, 0] == pytest.approx(0.9, abs=1e-15)

    def test_fixed_point(self):
        p = scalar_params(1.3)
        cfg = SGDConfig(weight_decay=0.0)
        new, state = sgd_step(p, {"embed.0.weight": np.zeros((1, 1))}, init_state(p, cfg), cfg)
        assert new.tensors["embed.0.weight"][0, 0] == 1.3
        assert state.iteration == 1

    def test_momentum_accumulates(self):
        p = scalar_params(0.0)
        cfg = SGDConfig(initial_lr=0.1, momentum=0.9, weight_decay=0.0)
        g = {"embed.0.weight": np.array([[2.0]])}
        state = init_state(p, cfg)
        p, state = sgd_step(p, g, state, cfg)
        p, state = sgd_step(p, g, state, cfg)
        assert state.velocity["embed.0.weight"][0, 0] == pytest.approx(-0.1 * 2.0 * 1.9, abs=1e-15)

    def test_weight_decay(self):
        p = scalar_params(2.0)
        cfg = SGDConfig(initial_lr=0.5, momentum=0.0, weight_decay=0.1)
        new, _ = sgd_step(p, {"embed.0.weight": np.zeros((1, 1))}, init_state(p, cfg), cfg)
        assert new.tensors["embed.0.weight"][0, 0] == pytest.approx(2.0 - 0.5 * 0.1 * 2.0)

    def test_shape_mismatch(self):
        p = scalar_params(0.0)
        with pytest.raises(ValueError):
            sgd_step(p, {"embed.0.weight": np.zeros(2)}, init_state(p, SGDConfig()), SGDConfig())


class TestBatches:
    def test_partition(self):
        labels = np.repeat(np.arange(4), 2)
        cfg = SGDConfig(batch_size=4, images_per_identity=2)
        batches = list(make_batches(labels, cfg, np.random.default_rng(0)))
        assert len(batches) == 2
        assert sorted(np.concatenate(batches)) == list(range(8))
        for b in batches:
            ids, counts = np.unique(labels[b], return_counts=True)
            assert len(ids) == 2 and set(counts) == {2}

    def test_deterministic(self):
        labels = np.repeat(np.arange(10), 6)
        cfg = SGDConfig.desk()
        a = [b.tolist() for b in make_batches(labels, cfg, np.random.default_rng(3))]
        b = [b.tolist() for b in make_batches(labels, cfg, np.random.default_rng(3))]
        c = [b.tolist() for b in make_batches(labels, cfg, np.random.default_rng(4))]
        assert a == b and a != c

    def test_batches_are_p_by_k(self):
        labels = np.repeat(np.arange(20), 9)
        cfg = SGDConfig.desk()
        for b in make_batches(labels, cfg, np.random.default_rng(1)):
            ids, counts = np.unique(labels[b], return_counts=True)
            assert len(b) == 32 and len(ids) == 8 and set(counts) == {4}
            assert len(set(b.tolist())) == 32

    def test_single_identity(self):
        with pytest.raises(ConfigurationError):
            list(make_batches(np.zeros(10, dtype=int), SGDConfig(batch_size=4, images_per_identity=2), np.random.default_rng(0)))

    def test_too_few_identities(self):
        with pytest.raises(ConfigurationError):
            list(make_batches(np.repeat(np.arange(3), 4), SGDConfig.desk(), np.random.default_rng(0)))


@pytest.fixture(scope="module")
def small_set():
    return generate_arrays(SynthConfig(identities=8, images_per_identity=6, test_identities=0))


def test_zero_iterations_returns_init(small_set):
    cfg = ModelConfig(embed_dim=8)
    params, log = train(small_set.images, small_set.labels, cfg, SGDConfig.desk(max_iters=0))
    init = init_model(cfg)
    assert log.rows == []
    assert all(np.array_equal(params.tensors[k], init.tensors[k]) for k in init.tensors)


def test_training_is_deterministic(small_set):
    cfg = ModelConfig(embed_dim=8)
    sgd = SGDConfig.desk(max_iters=15)
    p1, l1 = train(small_set.images, small_set.labels, cfg, sgd)
    p2, l2 = train(small_set.images, small_set.labels, cfg, sgd)
    assert l1.to_csv() == l2.to_csv()
    assert all(p1.tensors[k].tobytes() == p2.tensors[k].tobytes() for k in p1.tensors)


def test_log_columns(small_set):
    _, log = train(small_set.images, small_set.labels, ModelConfig(embed_dim=8), SGDConfig.desk(max_iters=3))
    lines = log.to_csv().splitlines()
    assert lines[0] == "iter,lr,loss,active_frac"
    assert len(lines) == 4 and lines[1].startswith("0,0.008,")


def test_divergence_names_block(small_set):
    from wbcreid.trainer import TrainingDivergedError

    cfg = ModelConfig(embed_dim=8)
    params = init_model(cfg)
    bad = dict(params.tensors)
    bad["partnet.weight"] = np.full_like(bad["partnet.weight"], np.nan)
    with pytest.raises(TrainingDivergedError, match="partnet"):
        train(small_set.images, small_set.labels, cfg, SGDConfig.desk(max_iters=2), params=params.replace(bad))
