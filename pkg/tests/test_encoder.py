import random

import numpy as np
import pytest
import torch

from lowshot_re.encoder import (
    ConfigError,
    EncoderConfig,
    LengthError,
    encode,
    encode_batch,
    encode_hash,
    expected_param_count,
    gradients,
    init_params,
    load_checkpoint,
    param_count,
    params_digest,
    save_checkpoint,
)
from lowshot_re.prompt_codec import ModelInput, Vocabulary, encode_instance
from lowshot_re.relation_core import RelationInstance, RelationType

from oracles import central_difference, hash_unit_vector


def raw_input(ids):
    # encode() only reads ids; marker positions are irrelevant here
    return ModelInput(tuple(ids), (0,), 0, 0, 0, 0, (0, len(ids) - 1))


def tiny(**kw):
    base = dict(vocab_size=20, hidden_dim=4, layers=1, heads=1, ffn_dim=4, dropout=0.0, dtype="float64")
    base.update(kw)
    return EncoderConfig(**base)


def test_same_seed_same_bytes():
    a, b = init_params(tiny(seed=3)), init_params(tiny(seed=3))
    assert params_digest(a) == params_digest(b)
    c = init_params(tiny(seed=4))
    assert any(not torch.equal(x, y) for x, y in zip(a.state_dict().values(), c.state_dict().values()))


def test_param_count_by_hand():
    V, P, d, f, layers = 30, 50, 8, 16, 2
    attention = d * 3 * d + 3 * d + d * d + d
    feed = d * f + f + f * d + d
    norms = 2 * (2 * d)
    hand = V * d + P * d + layers * (attention + feed + norms)
    cfg = EncoderConfig(V, hidden_dim=d, layers=layers, heads=2, ffn_dim=f, max_positions=P)
    assert param_count(init_params(cfg)) == hand == expected_param_count(cfg)


def test_bad_configs():
    for kw in ({"hidden_dim": 6, "heads": 4}, {"norm": "mid"}, {"dropout": 1.0}, {"pos_base": 1.0}, {"layers": -1}):
        with pytest.raises(ConfigError):
            init_params(tiny(**kw))


def test_shape_and_eval_determinism():
    model = init_params(EncoderConfig(20, hidden_dim=16, layers=2, heads=4, ffn_dim=32))
    inp = raw_input([0, 5, 6, 7, 1])
    out = encode(model, inp)
    assert out.shape == (5, 16)
    assert torch.equal(out, encode(model, inp))


def test_dropout_is_seeded():
    model = init_params(EncoderConfig(20, hidden_dim=16, layers=2, heads=4, ffn_dim=32, dropout=0.3))
    inp = raw_input([0, 5, 6, 7, 1])
    a = encode(model, inp, "train", 1)
    assert torch.equal(a, encode(model, inp, "train", 1))
    assert not torch.equal(a, encode(model, inp, "eval"))


def test_zero_layers_is_a_table_lookup():
    for pos_init in ("sinusoid", "uniform"):
        model = init_params(EncoderConfig(20, hidden_dim=8, layers=0, heads=2, pos_init=pos_init))
        ids = [0, 3, 9, 3, 1]
        tok = model.tok.weight.detach().numpy()
        pos = model.pos.weight.detach().numpy()
        want = np.stack([tok[t] + pos[p] for p, t in enumerate(ids)])
        assert np.allclose(encode(model, raw_input(ids)).detach().numpy(), want, atol=0)


def test_padding_does_not_leak():
    model = init_params(EncoderConfig(20, hidden_dim=16, layers=2, heads=4, ffn_dim=32))
    short, long = raw_input([0, 5, 6, 1]), raw_input([0, 5, 6, 7, 8, 9, 1])
    both = encode_batch(model, [short, long])
    assert torch.allclose(both[0, :4], encode(model, short), atol=1e-6)


def test_too_long():
    model = init_params(tiny(max_positions=4))
    with pytest.raises(LengthError):
        encode(model, raw_input([0, 1, 2, 3, 4]))


def test_hash_rows():
    inp = raw_input([0, 7, 13, 7, 1])
    rows = encode_hash(inp, 32)
    assert np.array_equal(rows[1], rows[3])
    assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)
    for p, t in enumerate(inp.ids):
        assert np.array_equal(rows[p], hash_unit_vector(t, 32))


def test_constant_loss_gives_zero_gradients():
    model = init_params(tiny())
    grads = gradients(model, raw_input([0, 4, 5, 6, 7, 1]), lambda enc: torch.tensor(3.0, dtype=torch.float64))
    assert all(float(g.abs().max()) == 0.0 for g in grads.values())


@pytest.mark.parametrize("norm", ["pre", "post"])
def test_sum_of_outputs_matches_finite_differences(norm):
    model = init_params(tiny(norm=norm, heads=2))
    inp = raw_input([0, 4, 5, 6, 7, 1])
    loss_fn = lambda enc: enc.sum()  # noqa: E731
    grads = gradients(model, inp, loss_fn)
    params = dict(model.named_parameters())
    rng = random.Random(1)
    checked = 0
    while checked < 60:
        name = rng.choice(sorted(params))
        p = params[name]
        idx = tuple(rng.randrange(s) for s in p.shape)
        if name == "tok.weight" and idx[0] not in inp.ids or name == "pos.weight" and idx[0] >= len(inp.ids):
            continue
        with torch.no_grad():
            fd = central_difference(
                lambda: float(loss_fn(encode(model, inp))),
                lambda: p[idx].item(),
                lambda v: p.__setitem__(idx, v),
                1e-4,
            )
        g = grads[name][idx].item()
        assert abs(g - fd) <= 1e-3 * max(abs(fd), abs(g), 1e-6), (name, idx, g, fd)
        checked += 1


def test_scaling_loss_scales_gradients():
    model = init_params(tiny())
    inp = raw_input([0, 4, 5, 6, 7, 1])
    g1 = gradients(model, inp, lambda e: (e**2).sum())
    g2 = gradients(model, inp, lambda e: 2 * (e**2).sum())
    for n in g1:
        assert torch.allclose(g2[n], 2 * g1[n], rtol=1e-12, atol=0)


def test_checkpoint_roundtrip(tmp_path):
    model = init_params(EncoderConfig(20, hidden_dim=16, layers=1, heads=2, ffn_dim=8))
    save_checkpoint(model, tmp_path / "m.ckpt", {"note": "x"})
    back, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": "x"}
    assert params_digest(back) == params_digest(model)
    assert back.config == model.config


def test_real_prompt_encodes():
    vocab = Vocabulary(["a", "b", "c"])
    inp = encode_instance([RelationType("r", ("a",))], RelationInstance(("b", "c"), (0, 0), (1, 1)), vocab)
    model = init_params(EncoderConfig(len(vocab), hidden_dim=8, layers=1, heads=2, ffn_dim=8))
    assert encode(model, inp).shape == (11, 8)
