import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptinc import numkit as nk
from conceptinc.adapters import LearnerStore, init_task_learner, to_stored_precision
from conceptinc.continual import (RunLog, SharedSubspace, TrainConfig, ccl_loss, diffusion_loss, learn_task,
                                  learner_leaves, load_subspace, make_batch, r1_orth, r2_gradients, r2_shared,
                                  save_subspace, shared_subspace_step, task_dataset)
from conceptinc.continual.trainer import SIGN_FLAG
from conceptinc.errors import ConfigError, ContractError, NumericError, StateError

from .conftest import blob, small_model

seeds = st.integers(0, 2**31 - 1)


def sub_1x1(h=1.0, w=1.0):
    return SharedSubspace({(0, "q"): np.array([[w]])}, {1: {(0, "q"): np.array([[h]])}})


class TestR1:
    def test_first_task_is_zero(self):
        assert r1_orth([], {(0, "q"): np.ones((3, 2))}) == 0.0

    def test_orthogonal_rows(self):
        a1 = {(0, "q"): np.array([[1.0, 0.0], [0.0, 0.0]])}
        a2 = {(0, "q"): np.array([[0.0, 1.0], [0.0, 0.0]])}
        assert float(r1_orth([a1], a2)) == 0.0

    def test_hand_example(self):
        a = {(0, "q"): np.array([[1.0, 0.0]])}
        assert float(r1_orth([a], a)) == 1.0

    @given(seeds)
    @settings(max_examples=30, deadline=None)
    def test_matches_direct_sum(self, seed):
        r = np.random.default_rng(seed)
        prev = [{(l, "q"): r.normal(size=(6, 2)) for l in range(2)} for _ in range(3)]
        cur = {(l, "q"): r.normal(size=(6, 2)) for l in range(2)}
        want = sum(np.abs(p[k] @ cur[k].T).sum() for p in prev for k in cur)
        assert abs(float(r1_orth(prev, cur)) - want) < 1e-10


class TestR2:
    def test_exact_factorization_zero(self, rng):
        # small integers keep H @ W exact in floating point
        H, W = rng.integers(-3, 4, (3, 3)).astype(float), rng.integers(-3, 4, (3, 5)).astype(float)
        sub = SharedSubspace({(0, "v"): W}, {1: {(0, "v"): H}})
        assert float(r2_shared({1: {(0, "v"): H @ W}}, sub)) == 0.0

    def test_scalar_example(self):
        assert float(r2_shared({1: {(0, "q"): np.array([[2.0]])}}, sub_1x1())) == 1.0

    def test_missing_projection(self):
        with pytest.raises(StateError):
            r2_shared({2: {(0, "q"): np.array([[2.0]])}}, sub_1x1())

    @given(seeds)
    @settings(max_examples=30, deadline=None)
    def test_quadratic_homogeneity(self, seed):
        r = np.random.default_rng(seed)
        H, W, D = r.normal(size=(4, 4)), r.normal(size=(4, 4)), r.normal(size=(4, 4))
        sub = SharedSubspace({(0, "q"): W}, {1: {(0, "q"): H}})
        base = float(r2_shared({1: {(0, "q"): D}}, sub))
        doubled = float(r2_shared({1: {(0, "q"): H @ W + 2.0 * (D - H @ W)}}, sub))
        assert abs(doubled - 4.0 * base) <= 1e-9 * max(1.0, base)


class TestSubspaceStep:
    def test_hand_trace(self):
        out = shared_subspace_step(sub_1x1(), {1: {(0, "q"): np.array([[2.0]])}}, 0.1)
        assert out.H[1][(0, "q")][0, 0] == pytest.approx(1.2, abs=1e-15)
        assert out.wstar[(0, "q")][0, 0] == pytest.approx(1.192, abs=1e-15)

    def test_stationary(self, rng):
        H, W = rng.normal(size=(3, 3)), rng.normal(size=(3, 4))
        sub = SharedSubspace({(0, "q"): W}, {1: {(0, "q"): H}})
        out = shared_subspace_step(sub, {1: {(0, "q"): H @ W}}, 1e-3)
        assert np.array_equal(out.H[1][(0, "q")], H) and np.array_equal(out.wstar[(0, "q")], W)

    def test_input_untouched(self, rng):
        sub = sub_1x1()
        d = {1: {(0, "q"): np.array([[2.0]])}}
        shared_subspace_step(sub, d, 0.1)
        assert sub.H[1][(0, "q")][0, 0] == 1.0 and d[1][(0, "q")][0, 0] == 2.0

    def test_eta_positive(self):
        with pytest.raises(ValueError):
            shared_subspace_step(sub_1x1(), {1: {(0, "q"): np.array([[2.0]])}}, 0.0)

    def test_nonfinite(self):
        with pytest.raises(NumericError):
            shared_subspace_step(sub_1x1(), {1: {(0, "q"): np.array([[np.inf]])}}, 0.1)

    def test_gradients_match_finite_differences(self, rng):
        H, W, D = rng.normal(size=(4, 4)), rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        sub = SharedSubspace({(0, "q"): W}, {1: {(0, "q"): H}})
        dH, dW = r2_gradients(sub, {1: {(0, "q"): D}})
        fdH = nk.finite_diff(lambda h: np.sum((D - h @ W) ** 2), H)
        fdW = nk.finite_diff(lambda w: np.sum((D - H @ w) ** 2), W)
        assert nk.rel_error(dH[1][(0, "q")], fdH) < 1e-6
        assert nk.rel_error(dW[(0, "q")], fdW) < 1e-6

    def test_persistence(self, rng, tmp_path):
        sub = SharedSubspace({(0, "q"): to_stored_precision(rng.normal(size=(3, 3)))},
                             {1: {(0, "q"): to_stored_precision(rng.normal(size=(3, 3)))}})
        save_subspace(sub, tmp_path / "s.citf", "h")
        back = load_subspace(tmp_path / "s.citf")
        assert back.wstar[(0, "q")].tobytes() == sub.wstar[(0, "q")].tobytes()
        assert back.H[1][(0, "q")].tobytes() == sub.H[1][(0, "q")].tobytes()


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.gamma1, c.gamma2, c.steps, c.lr_tokens, c.lr_weights, c.seed) == (0.1, 1.0, 800, 1e-3, 1e-4, 0)
        assert c.step_size == c.lr_weights

    @pytest.mark.parametrize("kw", [dict(steps=0), dict(lr_tokens=0.0), dict(lr_weights=-1.0), dict(eta=0.0),
                                    dict(gamma1=-0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


def _two_task_setup(seed=0, layers=2, dim=8):
    """Small model, one stored 'trained' task (random B), the current learner and a subspace."""
    m = small_model(layers=layers, dim=dim, max_tokens=6)
    r = np.random.default_rng(seed)
    shapes = m.weights.adapted_shapes()
    prev_tl = init_task_learner(1, [blob("c1", 1)], m.vocab, shapes, nk.Rng(seed))
    for layer in prev_tl.lora.values():
        layer.B = 0.1 * r.normal(size=layer.B.shape)
    cur = init_task_learner(2, [blob("c2", 2, "zwx", (5.0, 2.0))], m.vocab, shapes, nk.Rng(seed + 1))
    for layer in cur.lora.values():
        layer.B = 0.1 * r.normal(size=layer.B.shape)
    sub = SharedSubspace()
    sub.ensure(shapes, [1, 2], nk.Rng(seed))
    cfg = TrainConfig(batch_size=2, samples_per_concept=2)
    data = task_dataset([blob("c2", 2, "zwx", (5.0, 2.0))], cfg, m, nk.Rng(seed))
    batch = make_batch(data, m, nk.Rng(seed).child("b"), 2)
    return m, LearnerStore([prev_tl]), cur, sub, cfg, batch


class TestLoss:
    def test_first_task_contract(self):
        m, prev, cur, sub, cfg, batch = _two_task_setup()
        with pytest.raises(ContractError):
            ccl_loss(m, batch, cur, LearnerStore(), sub, cfg)

    def test_regularizers_off_equals_diffusion(self):
        m, prev, cur, sub, cfg, batch = _two_task_setup()
        off = TrainConfig(gamma1=0.0, gamma2=0.0)
        rows = {t: list(v) for t, v in cur.tokens.items()}
        assert float(ccl_loss(m, batch, cur, prev, sub, off)) == float(diffusion_loss(m, batch, cur.deltas(), rows))

    def test_recomposition(self):
        m, prev, cur, sub, cfg, batch = _two_task_setup()
        rows = {t: list(v) for t, v in cur.tokens.items()}
        diff = float(diffusion_loss(m, batch, cur.deltas(), rows))
        r1 = float(r1_orth([{k: l.A for k, l in prev[0].lora.items()}], {k: l.A for k, l in cur.lora.items()}))
        r2 = float(r2_shared({1: prev[0].deltas(), 2: cur.deltas()}, sub))
        assert abs(float(ccl_loss(m, batch, cur, prev, sub, cfg)) - (diff + 0.1 * r1 + 1.0 * r2)) < 1e-12

    def test_diffusion_loss_is_batch_mean_of_squared_norms(self):
        m, prev, cur, sub, cfg, batch = _two_task_setup()
        from conceptinc.toyldm import denoiser_forward, encode_prompt

        rows = {t: list(v) for t, v in cur.tokens.items()}
        per = []
        for b in range(2):
            emb = encode_prompt(batch.prompts[b], m.vocab, rows, 2, 6)
            pred = denoiser_forward(batch.z_t[b:b + 1], batch.ts[b:b + 1], emb, m.weights, cur.deltas())
            per.append(np.sum((batch.eps[b] - pred[0]) ** 2))
        assert float(diffusion_loss(m, batch, cur.deltas(), rows)) == pytest.approx(np.mean(per), rel=1e-12)


class TestTrainer:
    def _cfg(self, **kw):
        return TrainConfig(**{"steps": 30, "batch_size": 2, "samples_per_concept": 2, **kw})

    def test_first_task_reduces_loss_and_keeps_subspace(self, model):
        log = RunLog(1)
        tl, sub = learn_task(model, 1, [blob()], LearnerStore(), SharedSubspace(), self._cfg(steps=60), run_log=log)
        assert not sub.initialized
        assert log.probes[-1][1] < log.probes[0][1]
        assert SIGN_FLAG in log.flags and len(log.steps) == 60
        assert [s for s, _ in log.probes] == [0, 15, 30, 45, 60]

    def test_deterministic(self, model):
        a, _ = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg())
        b, _ = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg())
        assert all(a.tensors()[k].tobytes() == b.tensors()[k].tobytes() for k in a.tensors())

    def test_vocab_unchanged(self, model):
        before = model.vocab.digest()
        learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=5))
        assert model.vocab.digest() == before

    def test_second_task_creates_and_updates_subspace(self, model):
        t1, sub = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=5))
        t2, sub2 = learn_task(model, 2, [blob("c2", 2, "zwx")], LearnerStore([t1]), sub, self._cfg(steps=5))
        assert sub2.initialized and sorted(sub2.H) == [1, 2]

    def test_steps_are_separated(self, model):
        """Step 1 leaves the subspace alone; Step 2 reads the post-Step-1 deltas and nothing else."""
        cfg = self._cfg(steps=3)
        t1, sub = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=5))
        seen = []
        learn_task(model, 2, [blob("c2", 2, "zwx")], LearnerStore([t1]), sub, cfg,
                   on_step=lambda step, tl, s: seen.append((tl.deltas(), s.copy())))
        for (_, before), (deltas, after) in zip(seen, seen[1:]):
            replay = shared_subspace_step(before, {1: t1.deltas(), 2: deltas}, cfg.step_size)
            assert all(replay.tensors()[k].tobytes() == after.tensors()[k].tobytes() for k in after.tensors())

    def test_unregularized_equals_plain_trainer(self, model):
        t1, sub = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=5))
        off = self._cfg(gamma1=0.0, gamma2=0.0)
        a, _ = learn_task(model, 2, [blob("c2", 2, "zwx")], LearnerStore([t1]), sub, off)
        b, _ = learn_task(model, 2, [blob("c2", 2, "zwx")], LearnerStore([t1]), None, off, regularized=False)
        assert all(a.tensors()[k].tobytes() == b.tensors()[k].tobytes() for k in a.tensors())

    def test_baseline_continues_from_previous(self, model):
        t1, _ = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=5))
        seen = []
        learn_task(model, 2, [blob("c2", 2, "zwx")], LearnerStore([t1]), None, self._cfg(steps=1), regularized=False,
                   init_from=t1, on_step=lambda s, tl, sub: seen.append(tl.lora[(0, "q")].B.copy()))
        assert np.abs(seen[0] - t1.lora[(0, "q")].B).max() < 0.1 and np.any(t1.lora[(0, "q")].B != 0)

    def test_token_collision(self, model):
        t1, _ = learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=2))
        from conceptinc.errors import UniquenessError

        with pytest.raises(UniquenessError, match="v1"):
            learn_task(model, 2, [blob("c9", 1)], LearnerStore([t1]), None, self._cfg(steps=2))

    def test_run_log_text(self, model):
        log = RunLog(1)
        learn_task(model, 1, [blob()], LearnerStore(), None, self._cfg(steps=4), run_log=log)
        text = log.to_text({"seed": 0})
        assert text.startswith("# task 1\n# seed=0\n# flag subspace_update=descent\n")
        assert text.count("\nstep=") == 4


def test_full_loss_gradients_match_finite_differences():
    m, prev, cur, sub, cfg, batch = _two_task_setup(layers=1, dim=8)
    leaves = learner_leaves(cur)
    names = sorted(leaves)
    grads = nk.grad(ccl_loss(m, batch, cur, prev, sub, cfg, leaves=leaves), [leaves[n] for n in names])
    base = {n: np.array(nk.value_of(leaves[n])) for n in names}
    for name, g in zip(names, grads):
        def f(v, name=name):
            vals = dict(base)
            vals[name] = v
            return float(nk.value_of(ccl_loss(m, batch, cur, prev, sub, cfg, leaves=vals)))

        assert nk.rel_error(g, nk.finite_diff(f, base[name], 1e-5)) < 1e-5, name
