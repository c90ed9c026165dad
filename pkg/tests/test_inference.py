import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptinc import numkit as nk
from conceptinc.adapters import LearnerStore, init_task_learner
from conceptinc.errors import ConfigError, DimensionError, StateError
from conceptinc.inference import (GuidanceConfig, RegionCondition, aggregate_noise, ancestral_step, apply_regions,
                                  ewa_merge, guided, psi_normalize, region_mask, region_noise_estimate,
                                  regional_cross_attention, sample, semantic_relation, task_embeddings, timestep_grid)
from conceptinc.toyldm import PromptSpec, denoiser_forward, encode_prompt

from .conftest import blob, small_model

seeds = st.integers(0, 2**31 - 1)


def make_store(model, g, seed=0, orthogonal=True, same_delta=False):
    """``g`` learners; with ``orthogonal`` every task's token rows are basis vector ``e_i`` at all layers."""
    shapes = model.weights.adapted_shapes()
    r = np.random.default_rng(seed)
    first = None
    out = []
    for i in range(1, g + 1):
        tl = init_task_learner(i, [blob(f"c{i}", i)], model.vocab, shapes, nk.Rng(seed + i))
        for key, layer in tl.lora.items():
            if same_delta and first is not None:
                layer.A, layer.B = first.lora[key].A.copy(), first.lora[key].B.copy()
            else:
                layer.B = 0.1 * r.normal(size=layer.B.shape)
        if orthogonal:
            e = np.zeros((model.cfg.layers, model.cfg.dim))
            e[:, i - 1] = 1.0
            tl.tokens = {tok: e.copy() for tok in tl.tokens}
        first = first or tl
        out.append(tl)
    return LearnerStore(out)


class TestRelations:
    def test_task_embedding_mean(self, model):
        st_ = make_store(model, 1, orthogonal=False)
        tl = st_[0]
        tl.tokens["v1"] = np.tile([1.0] + [0.0] * 15, (4, 1))
        tl.tokens["v1n"] = np.tile([0.0, 1.0] + [0.0] * 14, (4, 1))
        assert np.array_equal(task_embeddings(st_, 2)[0][:2], [0.5, 0.5])

    def test_empty_store(self):
        with pytest.raises(StateError):
            task_embeddings(LearnerStore(), 0)

    def test_columnwise_max(self):
        # prompt rows times task rows gives [[0.9, 0.1], [0.2, 0.8]]
        assert np.allclose(semantic_relation(np.array([[0.9, 0.1], [0.2, 0.8]]), np.eye(2)), [0.9, 0.8],
                           rtol=0, atol=1e-15)

    def test_zero_prompt(self, rng):
        assert np.array_equal(semantic_relation(np.zeros((3, 4)), rng.normal(size=(2, 4))), np.zeros(2))

    def test_duplicate_rows(self, rng):
        c, e = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        assert np.array_equal(semantic_relation(c, e), semantic_relation(np.vstack([c, c[:1]]), e))


class TestPsi:
    def test_single(self):
        assert psi_normalize([3.0]).tolist() == [1.0]

    def test_example(self):
        assert np.allclose(psi_normalize([1.0, 0.5]), [0.9701, 0.2425], atol=5e-5)

    def test_zero_is_uniform(self):
        assert np.allclose(psi_normalize([0.0, 0.0, 0.0, 0.0]), 0.5, rtol=0, atol=1e-15)

    @given(st.integers(1, 12), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-3))
    def test_equal_entries(self, g, c):
        assert np.allclose(psi_normalize([c] * g), 1.0 / np.sqrt(g), rtol=0, atol=1e-9)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=10).filter(lambda m: max(map(abs, m)) > 1e-3))
    def test_unit_norm_and_argmax(self, m):
        w = psi_normalize(m)
        assert abs(np.linalg.norm(w) - 1.0) < 1e-6
        assert np.argmax(w) == np.argmax(np.square(m))

    @given(seeds, st.floats(0.01, 100))
    @settings(max_examples=50)
    def test_common_scaling_keeps_argmax(self, seed, k):
        r = np.random.default_rng(seed)
        c, e = r.normal(size=(3, 5)), r.normal(size=(4, 5))
        a = psi_normalize(semantic_relation(c, e))
        b = psi_normalize(semantic_relation(k * c, k * e))
        assert np.argmax(a) == np.argmax(b)


class TestMerge:
    def test_single_task_identity(self, model):
        st_ = make_store(model, 1)
        merged, report = ewa_merge(model, st_, PromptSpec.parse("a v1"))
        assert all(merged[k].tobytes() == st_[0].deltas()[k].tobytes() for k in merged)
        assert all(w.tolist() == [1.0] for w in report.weights)

    def test_prompted_task_dominates_every_layer(self, model):
        st_ = make_store(model, 3)
        _, report = ewa_merge(model, st_, PromptSpec.parse("v2 v2n"))
        assert len(report.weights) == model.cfg.layers
        assert all(int(np.argmax(w)) == 1 for w in report.weights)

    def test_equal_deltas(self, model):
        st_ = make_store(model, 2, orthogonal=False, same_delta=True)
        for tl in st_:
            tl.tokens = {tok: np.ones((4, 16)) for tok in tl.tokens}
        merged, report = ewa_merge(model, st_, PromptSpec.parse("a red blob"))
        D = st_[0].deltas()
        for w in report.weights:
            assert np.allclose(w, 1.0 / np.sqrt(2.0), rtol=0, atol=1e-12)
        for k in D:
            assert np.allclose(merged[k], (2.0 / np.sqrt(2.0)) * D[k], rtol=0, atol=1e-12)

    def test_weighted_sum_oracle(self, model):
        st_ = make_store(model, 3, orthogonal=False)
        merged, report = ewa_merge(model, st_, PromptSpec.parse("a v3 v1"))
        for (l, p), m in merged.items():
            want = sum(report.weights[l][i] * st_[i].deltas()[(l, p)] for i in range(3))
            assert np.allclose(m, want, rtol=0, atol=1e-12)

    def test_report_text(self, model):
        _, report = ewa_merge(model, make_store(model, 2), PromptSpec.parse("a v1"))
        text = report.to_text()
        assert text.startswith("tasks=1,2\n") and text.count("weight=") == model.cfg.layers


class TestRegionalAttention:
    def _args(self, rng, d=6, n=3):
        return rng.normal(size=(5, 7, d)), rng.normal(size=(n, d)), rng.normal(size=(d, d)), rng.normal(size=(d, d))

    def test_zero_query_gives_half_value_sum(self, rng):
        f, c, wk, wv = self._args(rng)
        out = regional_cross_attention(f, c, (1, 2, 3, 4), np.zeros((6, 6)), wk, wv)
        want = 0.5 * (c @ wv).sum(axis=0)
        assert out.shape == (3, 4, 6)
        assert np.allclose(out, want, rtol=0, atol=1e-12)

    def test_zero_query_softmax_is_mean_over_valid_rows(self, rng):
        f, c, wk, wv = self._args(rng)
        out = regional_cross_attention(f, c, (0, 0, 5, 7), np.zeros((6, 6)), wk, wv, "softmax", length=2)
        assert np.allclose(out, (c[:2] @ wv).mean(axis=0), rtol=0, atol=1e-12)

    def test_zero_condition(self, rng):
        f, _, wk, wv = self._args(rng)
        out = regional_cross_attention(f, np.zeros((3, 6)), (0, 0, 5, 7), rng.normal(size=(6, 6)), wk, wv)
        assert np.array_equal(out, np.zeros((5, 7, 6)))

    def test_matches_direct_oracle(self, rng):
        f, c, wk, wv = self._args(rng)
        wq = rng.normal(size=(6, 6))
        out = regional_cross_attention(f, c, (1, 1, 2, 3), wq, wk, wv)
        q = f[1:3, 1:4].reshape(6, 6) @ wq
        att = 1.0 / (1.0 + np.exp(-(q @ (c @ wk).T) / np.sqrt(6)))
        assert np.allclose(out.reshape(6, 6), att @ (c @ wv), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("box", [(0, 0, 0, 2), (4, 0, 2, 1), (0, 6, 1, 2), (-1, 0, 1, 1)])
    def test_bad_box(self, rng, box):
        f, c, wk, wv = self._args(rng)
        with pytest.raises(DimensionError):
            regional_cross_attention(f, c, box, wk, wk, wv)

    def test_full_grid_mask(self):
        assert np.array_equal(region_mask((0, 0, 8, 8), 8, 8), np.ones((8, 8)))


class TestApplyRegions:
    def test_no_regions(self, rng):
        f = rng.normal(size=(4, 4, 2))
        assert np.array_equal(apply_regions(f, []), f)

    def test_full_box(self, rng):
        f, feat = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
        assert np.array_equal(apply_regions(f, [((0, 0, 4, 4), feat)]), feat)

    def test_later_box_wins(self, rng):
        f = rng.normal(size=(4, 4, 1))
        out = apply_regions(f, [((0, 0, 2, 2), np.ones((2, 2, 1))), ((1, 1, 2, 2), np.full((2, 2, 1), 2.0))])
        assert out[1, 1, 0] == 2.0 and out[0, 0, 0] == 1.0

    @given(seeds, st.integers(0, 3), st.integers(0, 3), st.integers(1, 4), st.integers(1, 4))
    @settings(max_examples=60)
    def test_complement_untouched(self, seed, top, left, h, w):
        r = np.random.default_rng(seed)
        h, w = min(h, 8 - top), min(w, 8 - left)
        f = r.normal(size=(8, 8, 3))
        boxes = [(top, left, h, w), (5, 5, 3, 3)]
        out = apply_regions(f, [(b, r.normal(size=(b[2], b[3], 3))) for b in boxes])
        outside = np.ones((8, 8), bool)
        for b in boxes:
            outside &= region_mask(b, 8, 8) == 0
        assert out[outside].tobytes() == f[outside].tobytes()


class TestNoiseComposition:
    def test_scale_zero_is_unconditional(self, rng):
        u, c = rng.normal(size=(8, 8, 4)), rng.normal(size=(8, 8, 4))
        assert region_noise_estimate(u, c, 0.0).tobytes() == u.tobytes()

    def test_equal_branches(self, rng):
        u = rng.normal(size=(8, 8, 4))
        assert region_noise_estimate(u, u.copy(), 7.5).tobytes() == u.tobytes()

    def test_negative_scale(self, rng):
        with pytest.raises(ValueError):
            region_noise_estimate(np.zeros(2), np.zeros(2), -1.0)

    def test_alpha_one(self, rng):
        E, Eu = rng.normal(size=(8, 8, 4)), rng.normal(size=(8, 8, 4))
        assert aggregate_noise(E, [(Eu, region_mask((2, 2, 3, 3), 8, 8))], 1.0).tobytes() == E.tobytes()

    def test_no_regions_is_scaled(self, rng):
        E = rng.normal(size=(8, 8, 4))
        assert np.array_equal(aggregate_noise(E, [], 0.1), 0.1 * E)

    def test_alpha_zero_full_mask(self, rng):
        E, Eu = rng.normal(size=(8, 8, 4)), rng.normal(size=(8, 8, 4))
        assert aggregate_noise(E, [(Eu, np.ones((8, 8)))], 0.0).tobytes() == Eu.tobytes()

    @given(seeds, st.floats(0, 1), st.floats(0, 10))
    @settings(max_examples=50)
    def test_direct_reevaluation(self, seed, alpha, s):
        r = np.random.default_rng(seed)
        u, c, cu1, cu2 = (r.normal(size=(8, 8, 4)) for _ in range(4))
        m1, m2 = region_mask((0, 0, 4, 8), 8, 8), region_mask((3, 2, 5, 4), 8, 8)
        E = guided(u, c, s)
        got = aggregate_noise(E, [(region_noise_estimate(u, cu1, s), m1), (region_noise_estimate(u, cu2, s), m2)],
                              alpha)
        want = np.zeros_like(u)
        for y in range(8):
            for x in range(8):
                e1 = u[y, x] + s * (cu1[y, x] - u[y, x])
                e2 = u[y, x] + s * (cu2[y, x] - u[y, x])
                want[y, x] = alpha * (u[y, x] + s * (c[y, x] - u[y, x])) + (1 - alpha) * (e1 * m1[y, x] + e2 * m2[y, x])
        assert np.max(np.abs(got - want)) < 1e-12


class TestGuidanceConfig:
    def test_defaults(self):
        c = GuidanceConfig()
        assert (c.scale, c.alpha, c.attention) == (7.5, 0.1, "sigmoid")

    @pytest.mark.parametrize("kw", [dict(scale=-1.0), dict(alpha=1.5), dict(steps=0), dict(attention="relu")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            GuidanceConfig(**kw)


class TestRegionParse:
    def test_round_trip(self):
        r = RegionCondition.parse("a v1 blob @ 0, 1,4,5")
        assert r.prompt.tokens == ("a", "v1", "blob") and r.box == (0, 1, 4, 5)
        assert RegionCondition.parse(str(r)) == r

    @pytest.mark.parametrize("text", ["a v1", "a@1,2,3", "@0,0,1,1", "a@1,2,3,x"])
    def test_malformed(self, text):
        with pytest.raises(ValueError):
            RegionCondition.parse(text)


class TestTimestepGrid:
    def test_full(self):
        assert timestep_grid(5, None).tolist() == [5, 4, 3, 2, 1]

    def test_respaced(self):
        g = timestep_grid(100, 10)
        assert g[0] == 100 and g[-1] == 1 and len(g) == 10 and np.all(np.diff(g) < 0)


class TestSample:
    def _setup(self):
        m = small_model()
        return m, make_store(m, 2, orthogonal=False), GuidanceConfig(scale=2.0, steps=5)

    def test_deterministic(self):
        m, st_, cfg = self._setup()
        a = sample(m, PromptSpec.parse("a v1"), [], st_, cfg, n=2).latent
        assert a.tobytes() == sample(m, PromptSpec.parse("a v1"), [], st_, cfg, n=2).latent.tobytes()

    def test_no_regions_is_plain_guidance(self):
        """Oracle loop: guided estimate with the merged deltas, ancestral steps, same noise stream."""
        m, st_, cfg = self._setup()
        prompt = PromptSpec.parse("a v1")
        merged, _ = ewa_merge(m, st_, prompt)
        emb = encode_prompt(prompt, m.vocab, st_.concept_store(), m.cfg.layers, m.cfg.max_tokens)
        rng = nk.Rng(cfg.seed).child("sample")
        z = rng.child("initial").normal((1, 8, 8, 4))
        noise_rng = rng.child("noise")
        grid = timestep_grid(m.sched.T, cfg.steps)
        for i, t in enumerate(grid):
            t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
            u = denoiser_forward(z, int(t), None, m.weights, merged)
            c = denoiser_forward(z, int(t), emb, m.weights, merged)
            z = ancestral_step(z, u + cfg.scale * (c - u), int(t), t_prev, m.sched,
                               noise_rng.normal(z.shape) if t_prev else None)
        assert sample(m, prompt, [], st_, cfg).latent.tobytes() == z.tobytes()

    def test_alpha_one_ignores_regions(self):
        m, st_, cfg = self._setup()
        prompt = PromptSpec.parse("a v1 blob")
        plain = sample(m, prompt, [], st_, cfg).latent
        one = GuidanceConfig(scale=2.0, steps=5, alpha=1.0)
        reg = sample(m, prompt, [RegionCondition.parse("a v1@0,0,4,4")], st_, one).latent
        assert reg.tobytes() == plain.tobytes()

    def test_regions_change_output_and_note_coverage(self):
        m, st_, cfg = self._setup()
        prompt = PromptSpec.parse("a v1 blob")
        res = sample(m, prompt, [RegionCondition.parse("v2@0,0,4,8")], st_, cfg)
        assert not np.array_equal(res.latent, sample(m, prompt, [], st_, cfg).latent)
        assert res.notes and "coverage 0.5000" in res.notes[0]

    def test_explicit_deltas_skip_merge(self):
        m, st_, cfg = self._setup()
        res = sample(m, PromptSpec.parse("a v1"), [], st_, cfg, deltas=st_[1].deltas())
        assert res.report is None

    def test_box_outside_grid(self):
        m, st_, cfg = self._setup()
        with pytest.raises(DimensionError):
            sample(m, PromptSpec.parse("a v1"), [RegionCondition.parse("v1@6,6,4,4")], st_, cfg)
