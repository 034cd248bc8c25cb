import json

import numpy as np
import pytest

from rankaware.data import PairAnnotation
from rankaware.exceptions import DataError, NumericError, UnknownVideoError
from rankaware.losses import LossConfig
from rankaware.model import ATTENTION_PARAMS, RANKING_PARAMS, RankModel, pair_loss_function
from rankaware.numcore import grad_check
from rankaware.train import (
    ATTENTION,
    RANKING,
    TrainConfig,
    Trainer,
    attention_phase_step,
    ranking_phase_step,
    train,
)


def small_cfg(**kw):
    base = dict(epochs=4, lr=1e-2, hidden=4, K=2, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def snapshot(model):
    return {k: v.copy() for k, v in model.params().items()}


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr=0.0), dict(batch_size=0), dict(alternation_unit="x"),
                                    dict(attention_rank_loss="maybe"), dict(alternation_period=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_size, cfg.epochs, cfg.K, cfg.noise_sigma) == (1e-4, 128, 2000, 3, 0.01)
        assert cfg.loss == LossConfig(1.0, 0.1, 0.3, 0.1)

    def test_text_round_trip(self):
        cfg = TrainConfig(lr=3e-3, use_disp=False, loss=LossConfig(lam=0.5), alternation_unit="batch")
        assert TrainConfig.loads(cfg.dumps()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.loads("lr = 0.1\nwarmup = 3\n")

    def test_bad_value(self):
        with pytest.raises(ValueError):
            TrainConfig.loads("epochs = many\n")

    def test_phase_schedule(self):
        cfg = TrainConfig(alternation_period=2)
        assert [cfg.phase_of(i) for i in range(6)] == [RANKING, RANKING, ATTENTION, ATTENTION, RANKING, RANKING]

    def test_phase_weights(self):
        cfg = TrainConfig()
        rank = cfg.phase_weights(RANKING)
        att = cfg.phase_weights(ATTENTION)
        assert {k for k, v in rank.items() if v} == {"rank_plus", "rank_minus", "rank_uniform"}
        assert {k for k, v in att.items() if v} == {"disp_plus", "disp_minus", "rank_aware", "div_plus", "div_minus"}
        assert att["div_plus"] == 0.1

    def test_rank_only_attention_learns_from_rank_losses(self):
        cfg = TrainConfig(use_disp=False, use_rank_aware=False, use_diversity=False)
        att = cfg.phase_weights(ATTENTION)
        assert {k for k, v in att.items() if v} == {"rank_plus", "rank_minus"}
        off = TrainConfig(use_disp=False, use_rank_aware=False, attention_rank_loss="off")
        assert {k for k, v in off.phase_weights(ATTENTION).items() if v} == {"div_plus", "div_minus"}


@pytest.fixture
def batch(rng):
    feats = [rng.normal(size=(5, 6)) for _ in range(4)]
    return feats, np.array([0, 1, 2]), np.array([1, 2, 3])


class TestPhases:
    def test_ranking_phase_freezes_attention(self, batch):
        model = RankModel.init(6, 3, 2, seed=0)
        trainer = Trainer(model, small_cfg())
        before = snapshot(model)
        ranking_phase_step(trainer, *batch)
        after = model.params()
        assert all(np.array_equal(before[k], after[k]) for k in ATTENTION_PARAMS)
        assert any(not np.array_equal(before[k], after[k]) for k in RANKING_PARAMS)

    def test_attention_phase_freezes_ranking_layers(self, batch):
        model = RankModel.init(6, 3, 2, seed=0)
        trainer = Trainer(model, small_cfg())
        before = snapshot(model)
        attention_phase_step(trainer, *batch)
        after = model.params()
        assert all(np.array_equal(before[k], after[k]) for k in RANKING_PARAMS)
        assert any(not np.array_equal(before[k], after[k]) for k in ATTENTION_PARAMS)

    def test_satisfied_margins_leave_model_unchanged(self, rng):
        model = RankModel.init(2, 2, 1, seed=0)
        for layer in (model.rank_high, model.rank_low, model.rank_uniform):
            layer.W[...] = [[10.0, 0.0]]
        feats = [np.tile([1.0, 0.0], (3, 1)), np.tile([0.0, 1.0], (3, 1))]
        trainer = Trainer(model, small_cfg(use_diversity=False))
        before = snapshot(model)
        ranking_phase_step(trainer, feats, np.array([0]), np.array([1]))
        assert all(np.array_equal(before[k], v) for k, v in model.params().items())

    def test_ranking_gradient_one_dimensional(self):
        # 1-D features, single segment: s+ = 2 g x (K=2 mass), u = f x; hand-derived hinge gradients
        model = RankModel.init(1, 1, 2, seed=0)
        model.rank_high.W[...] = 0.1
        model.rank_low.W[...] = 0.2
        model.rank_uniform.W[...] = 0.3
        xi, xj = 1.5, 0.5
        fwd = model.forward([np.array([[xi]]), np.array([[xj]])])
        cfg = TrainConfig()
        _, _, grads = model.pair_objective(fwd, [0], [1], cfg.loss, cfg.phase_weights(RANKING), attention=False)
        # every ranking hinge is active: d/dW of (m - W*K*(xi-xj)) = -K*(xi-xj)
        assert grads["g.W"][0, 0] == pytest.approx(-2 * (xi - xj))
        assert grads["h.W"][0, 0] == pytest.approx(-2 * (xi - xj))
        assert grads["f.W"][0, 0] == pytest.approx(-(xi - xj))
        fn = pair_loss_function(model, [[xi]], [[xj]], cfg.loss, cfg.phase_weights(RANKING))
        assert grad_check(fn, {k: model.params()[k] for k in RANKING_PARAMS}, eps=1e-5) < 1e-6

    def test_attention_phase_gradient(self, rng):
        model = RankModel.init(8, 4, 2, seed=2)
        cfg = TrainConfig()
        fn = pair_loss_function(model, rng.normal(size=(6, 8)), rng.normal(size=(6, 8)), cfg.loss,
                                cfg.phase_weights(ATTENTION))
        assert grad_check(fn, {k: model.params()[k] for k in ATTENTION_PARAMS}, eps=5e-4) < 1e-4

    def test_invariant_checks_pass(self, batch):
        trainer = Trainer(RankModel.init(6, 3, 2, seed=0), small_cfg())
        for phase in (RANKING, ATTENTION, RANKING):
            trainer.step(phase, *batch, check_invariants=True)

    def test_non_finite_aborts(self, batch):
        model = RankModel.init(6, 3, 2, seed=0)
        model.rank_high.W[...] = np.inf
        with pytest.raises(NumericError):
            ranking_phase_step(Trainer(model, small_cfg()), *batch)

    def test_empty_batch(self, batch):
        with pytest.raises(DataError):
            ranking_phase_step(Trainer(RankModel.init(6, 3, 2), small_cfg()), batch[0], [], [])

    def test_separate_optimiser_states(self, batch):
        trainer = Trainer(RankModel.init(6, 3, 2, seed=0), small_cfg())
        ranking_phase_step(trainer, *batch)
        ranking_phase_step(trainer, *batch)
        attention_phase_step(trainer, *batch)
        assert trainer.states[RANKING].step == 2 and trainer.states[ATTENTION].step == 1


class TestTrain:
    def test_history_and_outputs(self, toy_videos, chain_pairs, tmp_path):
        cfg = small_cfg(checkpoint_every=2)
        model, hist = train(toy_videos, chain_pairs, cfg, out_dir=tmp_path, log_path=tmp_path / "log.jsonl")
        assert len(hist.records) == 4
        assert [r.phase for r in hist.records] == [RANKING, ATTENTION, RANKING, ATTENTION]
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert [json.loads(l)["epoch"] for l in lines] == [1, 2, 3, 4]
        names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
        assert names == ["epoch_00002.rskm", "epoch_00004.rskm", "last.rskm"]
        assert TrainConfig.loads((tmp_path / "resolved.cfg").read_text()) == cfg

    def test_deterministic_checkpoints(self, toy_videos, chain_pairs, tmp_path):
        train(toy_videos, chain_pairs, small_cfg(), out_dir=tmp_path / "a")
        train(toy_videos, chain_pairs, small_cfg(), out_dir=tmp_path / "b")
        a = (tmp_path / "a" / "checkpoints" / "last.rskm").read_bytes()
        b = (tmp_path / "b" / "checkpoints" / "last.rskm").read_bytes()
        assert a == b

    def test_seed_changes_result(self, toy_videos, chain_pairs):
        a, _ = train(toy_videos, chain_pairs, small_cfg(seed=0))
        b, _ = train(toy_videos, chain_pairs, small_cfg(seed=1))
        assert a.to_bytes() != b.to_bytes()

    def test_batch_alternation(self, toy_videos, chain_pairs):
        _, hist = train(toy_videos, chain_pairs, small_cfg(alternation_unit="batch", batch_size=2, epochs=1))
        assert hist.records[0].phase == "mixed"

    def test_rank_only_logs_zero_for_six_terms(self, toy_videos, chain_pairs):
        cfg = small_cfg(use_disp=False, use_rank_aware=False, use_diversity=False)
        _, hist = train(toy_videos, chain_pairs, cfg)
        for rec in hist.records:
            zeroed = [k for k, v in rec.losses.as_dict().items() if v == 0.0 and k != "total"]
            assert {"disp_plus", "disp_minus", "rank_aware", "div_plus", "div_minus"} <= set(zeroed)

    def test_loss_decreases(self, toy_videos, chain_pairs):
        _, hist = train(toy_videos, chain_pairs, small_cfg(epochs=60))
        totals = hist.totals()
        assert totals[-10:].mean() < totals[:10].mean()

    def test_errors(self, toy_videos):
        with pytest.raises(DataError):
            train(toy_videos, [], small_cfg())
        with pytest.raises(UnknownVideoError):
            train(toy_videos, [PairAnnotation("v0", "zz")], small_cfg())
