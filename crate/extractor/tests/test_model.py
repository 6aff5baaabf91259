import math

import numpy as np
import pytest
import torch

from probegeom_extract import model as m
from probegeom_extract.formats import DIRECTIONS, Bundle, ValidationError, outcome_rows
from probegeom_extract.paraphrase import Row

from conftest import N_EMBD, N_LAYER, byte_tokenizer, tiny_gpt2


@pytest.fixture(scope="module")
def net():
    return tiny_gpt2(seed=3)


@pytest.fixture(scope="module")
def enc():
    tok = byte_tokenizer()
    return (lambda t: tok(t, add_special_tokens=False)["input_ids"]), tok.decode


ROWS = [
    Row("What is the capital of France?", "Paris", 1, 0),
    Row("What is the capital of France?", "Lyon", 0, 0),
    Row("2+2?", "4", 1, 1),
    Row("Who wrote Hamlet? Please answer briefly.", "Christopher Marlowe wrote it", 0, 2),
]


def unit(seed, d=N_EMBD):
    v = np.random.default_rng(seed).normal(size=d)
    return v / np.linalg.norm(v)


def bundle(scale=0.7):
    learned = unit(1)
    random = unit(2)
    orth = random - (random @ learned) * learned
    return Bundle(layer_index=1, hidden_dim=N_EMBD, scale=scale, mean_activation_norm=scale / 0.05,
                  alpha_values=list(np.linspace(-5, 5, 20)), seed=0,
                  directions={"learned": learned, "random": random, "orthogonal": orth / np.linalg.norm(orth)})


def test_states_match_a_single_unpadded_forward(net, enc):
    encode, _ = enc
    ex = m.last_token_states(net, encode, ROWS, [0, 2], batch_size=3)
    assert ex.kept == [0, 1, 2, 3] and not ex.errors
    assert ex.states[0].shape == (4, N_EMBD)
    for i, r in enumerate(ROWS):
        ids = encode(r.question) + encode("\n" + r.answer)
        assert ex.answer_lengths[i] == len(encode("\n" + r.answer))
        with torch.no_grad():
            hs = net(torch.tensor([ids]), output_hidden_states=True).hidden_states
        for k in (0, 2):
            np.testing.assert_allclose(ex.states[k][i], hs[k + 1][0, -1].numpy(), atol=1e-5)
        q = m.last_token_states(net, encode, [r], [2], position="question").states[2][0]
        with torch.no_grad():
            hq = net(torch.tensor([encode(r.question)]), output_hidden_states=True).hidden_states
        np.testing.assert_allclose(q, hq[3][0, -1].numpy(), atol=1e-5)


def test_batch_size_does_not_change_states(net, enc):
    a = m.last_token_states(net, enc[0], ROWS, [1], batch_size=1).states[1]
    b = m.last_token_states(net, enc[0], ROWS, [1], batch_size=4).states[1]
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_extraction_errors(net, enc):
    encode, _ = enc
    with pytest.raises(ValidationError, match="no rows"):
        m.last_token_states(net, encode, [], [0])
    with pytest.raises(ValidationError, match="outside"):
        m.last_token_states(net, encode, ROWS, [N_LAYER])
    with pytest.raises(ValidationError, match="position"):
        m.last_token_states(net, encode, ROWS, [0], position="middle")
    long = Row("x" * 300, "y", 1, 9)
    empty = Row("", "y", 0, 9)
    ex = m.last_token_states(net, encode, [ROWS[0], long, empty], [0])
    assert ex.kept == [0]
    assert [i for i, _ in ex.errors] == [1, 2]
    assert "exceed" in ex.errors[0][1] and "empty" in ex.errors[1][1]


def test_oom_halves_the_batch_and_retries(capsys):
    sizes = []

    def fn(chunk):
        sizes.append(len(chunk))
        if len(chunk) > 2:
            raise RuntimeError("CUDA out of memory. Tried to allocate")
        return [x * 10 for x in chunk]

    assert m.batched(fn, list(range(7)), 8) == [x * 10 for x in range(7)]
    assert sizes[:3] == [7, 4, 2]
    assert "batch size 2" in capsys.readouterr().err

    with pytest.raises(RuntimeError):
        m.batched(fn, list(range(7)), 64, max_retries=2)
    with pytest.raises(ValueError):
        m.batched(lambda c: (_ for _ in ()).throw(ValueError("boom")), [1], 4)


def test_zero_alpha_hook_leaves_logits_bitwise_equal(net, enc):
    ids = torch.tensor([enc[0]("Is the sky green? No.")])
    with torch.no_grad():
        plain = net(ids).logits
        s = m.Steering(net, 1, unit(5), 3.0, alpha=0.0)
        with s:
            hooked = net(ids).logits
    assert torch.equal(plain, hooked)
    assert s.handle is None


def test_hook_shifts_every_position_by_alpha_times_scale(net, enc):
    b = bundle()
    ids = torch.tensor([enc[0]("The quick brown fox")])
    taps = []
    h = m.blocks(net)[2].register_forward_pre_hook(lambda mod, args: taps.append(args[0].clone()))
    try:
        with torch.no_grad():
            net(ids)
            for alpha in (0.05, -0.3, 1.0):
                with m.Steering(net, 1, b.directions["orthogonal"], b.scale, alpha):
                    net(ids)
    finally:
        h.remove()
    for alpha, t in zip((0.05, -0.3, 1.0), taps[1:]):
        delta = (t - taps[0])[0].double()
        norms = delta.norm(dim=-1)
        assert delta.shape[0] == ids.shape[1]
        assert torch.all((norms - abs(alpha) * b.scale).abs() < 1e-3), norms
        cos = delta @ torch.tensor(b.directions["orthogonal"]) / norms
        assert torch.all(cos * math.copysign(1, alpha) > 1 - 1e-3)


def test_steering_checks_layer_and_width(net):
    with pytest.raises(ValidationError, match="layer"):
        m.Steering(net, N_LAYER, unit(1), 1.0)
    with pytest.raises(ValidationError, match="dims"):
        m.Steering(net, 0, unit(1, N_EMBD + 1), 1.0)


def test_sweep_counts_and_zero_alpha_matches_unsteered(net, enc):
    encode, decode = enc
    b = bundle()
    prompts = [{"item": 10, "prompt": "Q: Is fire cold?\nA:"}, {"item": 11, "prompt": "Q: 3*3?\nA:"}]
    gens = m.steer_generate(net, encode, decode, b, prompts, max_new_tokens=4)
    n = len(prompts)
    assert len(gens) == 60 * n + n
    assert {(g["direction"], g["alpha"]) for g in gens} >= {(d, a) for d in DIRECTIONS for a in b.alpha_values}
    assert all(len(g["completion_ids"]) == 4 for g in gens)

    plain = {g["item"]: g["completion_ids"] for g in gens if g["direction"] == "baseline"}
    for p in prompts:
        with m.Steering(net, b.layer_index, b.directions["learned"], b.scale, 0.0):
            assert m.greedy(net, encode(p["prompt"]), 4) == plain[p["item"]]

    judged = [dict(g, correct=int(len(g["completion"]) % 2 == 0)) for g in gens if g["direction"] != "baseline"]
    assert len(outcome_rows(judged, b, [10, 11])) == 60 * n


def test_ten_row_baselines_are_finite(net, enc):
    rows = [Row(f"Question {i}?", f"answer {i * 7}", i % 2, i) for i in range(10)]
    scores, errors = m.output_baselines(net, enc[0], rows)
    assert not errors
    assert len(scores) == 10
    for s in scores:
        assert set(s) == {"p_true", "nll", "token_entropy"}
        assert all(math.isfinite(v) for v in s.values())
        assert 0 < s["p_true"] < 1 and s["nll"] > 0
        assert 0 <= s["token_entropy"] <= math.log(256) + 1e-9
