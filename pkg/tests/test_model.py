import math

import numpy as np
import pytest

from qgen.model import (
    ModelConfig,
    MultiHeadParams,
    TransformerModel,
    attention,
    multi_head,
    positional_encoding,
    read_container,
    write_container,
)
from qgen.tensor import ShapeError, Tensor, check_gradients
from qgen.training import loss as training_loss


def small_config(**kw):
    base = dict(vocab_size=16, d_model=8, num_heads=2, enc_layers=2, dec_layers=2,
                d_ff=16, max_positions=16, dropout=0.0, pad_id=0, bos_id=2, eos_id=3)
    base.update(kw)
    return ModelConfig(**base)


def naive_attention(q, k, v, mask=None):
    """Independent straight-line evaluation of scaled dot-product attention."""
    d = q.shape[-1]
    scores = q @ k.T / math.sqrt(d)
    if mask is not None:
        scores = scores + mask
    out = np.zeros_like(scores)
    for i, row in enumerate(scores):
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out @ v


class TestPositionalEncoding:
    def test_row_zero_alternates(self):
        table = positional_encoding(4, 6).data
        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1], atol=1e-15)

    def test_entries_bounded(self):
        table = positional_encoding(50, 16).data
        assert (np.abs(table) <= 1.0).all()

    def test_formula_value(self):
        table = positional_encoding(4, 8).data
        assert table[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)
        assert table[1, 1] == pytest.approx(math.cos(1.0), abs=1e-12)

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError, match="even"):
            positional_encoding(4, 7)


class TestAttention:
    def test_single_key_returns_value_row(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.normal(size=(5, 3)))
        k = Tensor(rng.normal(size=(1, 3)))
        v = Tensor(rng.normal(size=(1, 4)))
        out = attention(q, k, v)
        np.testing.assert_allclose(out.data, np.repeat(v.data, 5, axis=0), atol=1e-12)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        q = Tensor(rng.normal(size=(3, 4)))
        k = Tensor(np.tile(rng.normal(size=(1, 4)), (6, 1)))
        v = Tensor(rng.normal(size=(6, 2)))
        out = attention(q, k, v)
        expect = np.tile(v.data.mean(axis=0), (3, 1))
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_closed_form_two_keys(self):
        q = Tensor([[1.0, 0.0]])
        k = Tensor([[1.0, 0.0], [0.0, 1.0]])
        v = Tensor([[1.0, 0.0], [0.0, 1.0]])
        out = attention(q, k, v).data[0]
        w = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1.0)
        np.testing.assert_allclose(out, [w, 1 - w], atol=1e-12)
        np.testing.assert_allclose(out, [0.6698, 0.3302], atol=5e-5)

    def test_matches_naive_reimplementation(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            mq, mk, d, dv = rng.integers(1, 9, size=4)
            q = rng.normal(size=(mq, d))
            k = rng.normal(size=(mk, d))
            v = rng.normal(size=(mk, dv))
            got = attention(Tensor(q), Tensor(k), Tensor(v)).data
            np.testing.assert_allclose(got, naive_attention(q, k, v), atol=1e-10)

    def test_mask_forbids_positions(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.normal(size=(2, 4)))
        k = Tensor(rng.normal(size=(3, 4)))
        v = Tensor(rng.normal(size=(3, 4)))
        mask = np.array([0.0, -1e9, 0.0])
        out = attention(q, k, v, mask=Tensor(mask))
        only = attention(Tensor(q.data), Tensor(k.data[[0, 2]]), Tensor(v.data[[0, 2]]))
        np.testing.assert_allclose(out.data, only.data, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            attention(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))),
                      Tensor(np.ones((5, 3))))


class TestMultiHead:
    def test_single_identity_head_reduces_to_attention(self):
        d = 6
        rng = np.random.default_rng(4)
        params = MultiHeadParams(d, 1, rng, "t")
        params.wq[0].data = np.eye(d)
        params.wk[0].data = np.eye(d)
        params.wv[0].data = np.eye(d)
        params.wo.data = np.eye(d)
        x = Tensor(rng.normal(size=(5, d)))
        got = multi_head(x, params)
        want = attention(x, x, x)
        np.testing.assert_allclose(got.data, want.data, atol=1e-12)

    def test_output_shape(self):
        rng = np.random.default_rng(5)
        params = MultiHeadParams(8, 4, rng, "t")
        x = Tensor(rng.normal(size=(3, 8)))
        assert multi_head(x, params).shape == (3, 8)

    def test_two_heads_match_straight_line_evaluation(self):
        d, h = 4, 2
        rng = np.random.default_rng(6)
        params = MultiHeadParams(d, h, rng, "t")
        x = rng.normal(size=(2, d))
        got = multi_head(Tensor(x), params).data
        heads = []
        for i in range(h):
            q = x @ params.wq[i].data
            k = x @ params.wk[i].data
            v = x @ params.wv[i].data
            heads.append(naive_attention(q, k, v))
        want = np.concatenate(heads, axis=-1) @ params.wo.data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_cross_attention_uses_kv_sequence(self):
        d = 4
        rng = np.random.default_rng(7)
        params = MultiHeadParams(d, 2, rng, "t")
        x_q = Tensor(rng.normal(size=(3, d)))
        x_kv = Tensor(rng.normal(size=(5, d)))
        out = multi_head(x_q, params, x_kv=x_kv)
        assert out.shape == (3, d)

    def test_batched_equals_per_sequence(self):
        d = 6
        rng = np.random.default_rng(8)
        params = MultiHeadParams(d, 3, rng, "t")
        batch = rng.normal(size=(4, 5, d))
        together = multi_head(Tensor(batch), params).data
        for b in range(4):
            alone = multi_head(Tensor(batch[b]), params).data
            np.testing.assert_allclose(together[b], alone, atol=1e-12)


class TestForward:
    def test_logits_shape(self):
        model = TransformerModel(small_config(), seed=0)
        logits = model.forward(np.array([[4, 5, 6, 0]]), np.array([[2, 7, 8]]))
        assert logits.shape == (1, 3, 16)

    def test_single_sequence_input(self):
        model = TransformerModel(small_config(), seed=0)
        logits = model.forward(np.array([4, 5, 6]), np.array([2, 7]))
        assert logits.shape == (2, 16)

    def test_pad_tail_is_inert(self):
        """A [PAD]-only tail of any length must not influence the logits."""
        model = TransformerModel(small_config(), seed=1)
        dec = np.array([[2, 7, 8]])
        bare = model.forward(np.array([[4, 5, 6]]), dec).data
        for extra in (1, 2, 5):
            padded = np.array([[4, 5, 6] + [0] * extra])
            np.testing.assert_allclose(model.forward(padded, dec).data, bare,
                                       atol=1e-10)

    def test_causality(self):
        model = TransformerModel(small_config(), seed=2)
        rng = np.random.default_rng(0)
        src = rng.integers(4, 16, size=(1, 6))
        dec = rng.integers(4, 16, size=(1, 5))
        base = model.forward(src, dec).data
        for j in range(1, 5):
            perturbed = dec.copy()
            perturbed[0, j:] = (perturbed[0, j:] + 3) % 12 + 4
            got = model.forward(src, perturbed).data
            np.testing.assert_array_equal(base[0, :j], got[0, :j])

    def test_id_out_of_range(self):
        model = TransformerModel(small_config(), seed=0)
        with pytest.raises(ShapeError, match="range"):
            model.forward(np.array([[99]]), np.array([[2]]))

    def test_deterministic_given_seed(self):
        a = TransformerModel(small_config(), seed=9)
        b = TransformerModel(small_config(), seed=9)
        src = np.array([[4, 5, 6]])
        dec = np.array([[2, 7]])
        np.testing.assert_array_equal(a.forward(src, dec).data, b.forward(src, dec).data)

    def test_dropout_changes_training_pass_only(self):
        model = TransformerModel(small_config(dropout=0.2), seed=3)
        src, dec = np.array([[4, 5, 6]]), np.array([[2, 7]])
        eval_a = model.forward(src, dec).data
        eval_b = model.forward(src, dec).data
        np.testing.assert_array_equal(eval_a, eval_b)
        train_a = model.forward(src, dec, rng=np.random.default_rng(0)).data
        assert not np.array_equal(train_a, eval_a)


class TestModelGradients:
    def test_selected_parameter_blocks_pass_finite_differences(self):
        model = TransformerModel(small_config(enc_layers=1, dec_layers=1), seed=4)
        rng = np.random.default_rng(1)
        src = rng.integers(4, 16, size=(1, 4))
        tgt = rng.integers(4, 16, size=(1, 3))
        dec_in = np.concatenate([[[2]], tgt[:, :-1]], axis=1)

        def f():
            return training_loss(model.forward(src, dec_in), tgt, pad_id=0)

        picked = ["embed", "enc0.attn.wq0", "enc0.ffn.w1", "dec0.cross_attn.wo",
                  "dec_norm.gain"]
        by_name = {p.name: p for p in model.parameters()}
        for name in picked:
            assert check_gradients(f, by_name[name], step=1e-5) < 1e-4, name


class TestConfigValidation:
    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError, match="divisible"):
            small_config(d_model=10, num_heads=4)

    def test_dropout_range(self):
        with pytest.raises(ValueError, match="dropout"):
            small_config(dropout=1.0)

    def test_positive_dims(self):
        with pytest.raises(ValueError, match="positive"):
            small_config(d_ff=0)

    def test_parameters_registered_once(self):
        model = TransformerModel(small_config(), seed=0)
        names = [p.name for p in model.parameters()]
        assert len(names) == len(set(names))


class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = TransformerModel(small_config(), seed=5)
        first = tmp_path / "a.bin"
        second = tmp_path / "b.bin"
        model.save(first)
        TransformerModel.load(first).save(second)
        assert first.read_bytes() == second.read_bytes()

    def test_loaded_model_reproduces_logits(self, tmp_path):
        model = TransformerModel(small_config(), seed=6)
        path = tmp_path / "m.bin"
        model.save(path)
        again = TransformerModel.load(path)
        src, dec = np.array([[4, 5]]), np.array([[2, 7]])
        np.testing.assert_array_equal(
            model.forward(src, dec).data, again.forward(src, dec).data
        )

    def test_container_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        tensors = [("a", rng.normal(size=(3, 2))), ("b", rng.normal(size=(4,)))]
        path = tmp_path / "c.bin"
        write_container(path, {"kind": "test"}, tensors)
        meta, arrays = read_container(path)
        assert meta == {"kind": "test"}
        np.testing.assert_array_equal(arrays["a"], tensors[0][1])
        np.testing.assert_array_equal(arrays["b"], tensors[1][1])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="container"):
            read_container(path)
