import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptinc import numkit as nk
from conceptinc.adapters import (LearnerStore, LoraLayer, decode, encode, init_task_learner, load_learner,
                                 lora_delta, read_container, save_learner, to_stored_precision)
from conceptinc.errors import IntegrityError, SequencingError, UniquenessError
from conceptinc.toyldm import ModelConfig, init_weights, save_weights

from .conftest import blob


def fresh(model, g=1, specs=None, seed=0, taken=()):
    specs = specs or [blob("c%d" % g, g)]
    return init_task_learner(g, specs, model.vocab, model.weights.adapted_shapes(), nk.Rng(seed), taken_tokens=taken)


class TestLora:
    def test_zero_factor(self):
        assert np.array_equal(lora_delta(LoraLayer(np.zeros((5, 2)), np.ones((2, 3)))), np.zeros((5, 3)))

    def test_hand_example(self):
        assert np.array_equal(lora_delta(LoraLayer(np.array([[1.0], [0.0]]), np.array([[2.0, 3.0]]))),
                              [[2.0, 3.0], [0.0, 0.0]])

    def test_rank_bound(self):
        with pytest.raises(ValueError):
            LoraLayer(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_inner_rank_mismatch(self):
        with pytest.raises(ValueError):
            LoraLayer(np.zeros((6, 2)), np.zeros((3, 6)))


class TestInit:
    def test_fresh_delta_zero(self, model):
        tl = fresh(model)
        assert all(np.all(d == 0) for d in tl.deltas().values())
        assert all(layer.rank == 4 for layer in tl.lora.values())

    def test_deterministic(self, model):
        a, b = fresh(model), fresh(model)
        assert all(np.array_equal(a.tensors()[k], b.tensors()[k]) for k in a.tensors())

    def test_token_copies_init_word(self, model):
        tl = fresh(model)
        rows = tl.tokens["v1"]
        assert rows.shape == (4, 16)
        assert all(np.array_equal(rows[l], rows[0]) for l in range(4))
        assert np.array_equal(rows[0], to_stored_precision(model.vocab.row("sks")))

    def test_A_scale(self, model):
        A = np.concatenate([l.A.ravel() for l in fresh(model).lora.values()])
        assert 0.015 < A.std() < 0.025

    def test_delta_shapes_match_base(self, model):
        tl = fresh(model)
        for key, d in tl.deltas().items():
            assert d.shape == model.weights.adapted_shapes()[key]

    def test_collision(self, model):
        with pytest.raises(UniquenessError, match="v1"):
            fresh(model, taken={"v1"})

    def test_vocab_shadowing(self, model):
        spec = blob()
        bad = type(spec)("x", "blob", tokens=("red",), init_words=("sks",))
        with pytest.raises(UniquenessError, match="red"):
            fresh(model, specs=[bad])


class TestPersistence:
    def test_round_trip_bitwise(self, model, tmp_path):
        tl = fresh(model)
        tl.lora[(0, "q")].B = to_stored_precision(np.random.default_rng(0).normal(size=(4, 16)))
        save_learner(tl, tmp_path / "t.citf")
        back = load_learner(tmp_path / "t.citf")
        assert back.task_id == 1 and back.concepts == tl.concepts
        for k, v in tl.tensors().items():
            assert v.tobytes() == back.tensors()[k].tobytes()

    def test_idempotent_bytes(self, model, tmp_path):
        save_learner(fresh(model), tmp_path / "a.citf")
        save_learner(load_learner(tmp_path / "a.citf"), tmp_path / "b.citf")
        assert (tmp_path / "a.citf").read_bytes() == (tmp_path / "b.citf").read_bytes()

    def test_truncated(self, model, tmp_path):
        save_learner(fresh(model), tmp_path / "a.citf")
        data = (tmp_path / "a.citf").read_bytes()
        (tmp_path / "a.citf").write_bytes(data[: len(data) // 2])
        with pytest.raises(IntegrityError) as err:
            load_learner(tmp_path / "a.citf")
        assert err.value.field

    def test_flipped_byte(self, model, tmp_path):
        save_learner(fresh(model), tmp_path / "a.citf")
        data = bytearray((tmp_path / "a.citf").read_bytes())
        data[-3] ^= 0xFF
        (tmp_path / "a.citf").write_bytes(bytes(data))
        with pytest.raises(IntegrityError):
            load_learner(tmp_path / "a.citf")

    def test_wrong_kind(self, model, tmp_path):
        save_weights(model.weights, tmp_path / "base.citf")
        with pytest.raises(IntegrityError):
            load_learner(tmp_path / "base.citf")

    @given(st.dictionaries(st.from_regex(r"[a-z][a-z0-9.]{0,8}", fullmatch=True),
                           st.lists(st.floats(-1e6, 1e6, width=32), min_size=1, max_size=12), max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_container_round_trip(self, table):
        tensors = {k: np.asarray(v, dtype=np.float64).reshape(len(v), 1) for k, v in table.items()}
        meta, back = decode(encode({"kind": "x"}, tensors))
        assert meta["kind"] == "x" and sorted(back) == sorted(tensors)
        for k in tensors:
            assert np.array_equal(back[k], tensors[k])

    def test_learner_small_relative_to_base(self, model, tmp_path):
        full = init_weights(ModelConfig(), nk.Rng(0))
        base = save_weights(full, tmp_path / "base.citf")
        tl = init_task_learner(1, [blob()], model.vocab, full.adapted_shapes(), nk.Rng(0))
        size = save_learner(tl, tmp_path / "t.citf")
        assert size == (tmp_path / "t.citf").stat().st_size
        assert size < 0.01 * base


class TestStore:
    def test_order_and_disjointness(self, model, tmp_path):
        st_ = LearnerStore(root=tmp_path / "s", config_hash="h")
        st_.append(fresh(model, 1))
        st_.append(fresh(model, 2))
        with pytest.raises(UniquenessError):
            st_.append(fresh(model, 3, specs=[blob("c9", 1)]))
        with pytest.raises(SequencingError):
            st_.append(fresh(model, 2, specs=[blob("c8", 8)]))
        back = LearnerStore.open(tmp_path / "s", "h")
        assert [t.task_id for t in back] == [1, 2]
        assert back.tokens == {"v1", "v1n", "v2", "v2n"}

    def test_config_hash_guard(self, model, tmp_path):
        st_ = LearnerStore(root=tmp_path / "s", config_hash="h")
        st_.append(fresh(model, 1))
        with pytest.raises(IntegrityError):
            LearnerStore.open(tmp_path / "s", "other")

    def test_truncate(self, model, tmp_path):
        st_ = LearnerStore(root=tmp_path / "s")
        st_.append(fresh(model, 1))
        st_.append(fresh(model, 2))
        st_.truncate(1)
        assert not (tmp_path / "s" / "task_002.citf").exists()
        assert len(LearnerStore.open(tmp_path / "s")) == 1

    def test_prefix_and_concept_rows(self, model):
        st_ = LearnerStore([fresh(model, 1), fresh(model, 2)])
        assert len(st_.prefix(1)) == 1
        assert set(st_.concept_store()) == {"v1", "v1n", "v2", "v2n"}
