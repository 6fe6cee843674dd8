import numpy as np
import pytest

from errors import ConfigError, InputError
from models import (
    LpConstraint,
    ProjectionHead,
    build_classification_pair,
    build_pair,
    parse_p,
    zero_attack,
)


@pytest.mark.parametrize("p", [2, np.inf])
def test_attack_output_never_leaves_the_ball(p):
    constraint = LpConstraint(p, 0.2)
    _, attack = build_classification_pair(2, 3, constraint, seed=1)
    rng = np.random.default_rng(0)
    violations = 0
    for draw in range(20):
        params = rng.normal(scale=rng.uniform(0.1, 5.0), size=attack.n_params)
        model = attack.with_params(params)
        x = rng.uniform(0, 1, size=(500, 2))
        y = rng.integers(0, 3, size=500)
        violations += int(np.sum(~constraint.contains(model.forward(x, y))))
    assert violations == 0


def test_projection_head_lands_on_the_boundary(l2, linf):
    v = np.array([[3.0, 4.0], [0.0, 0.0], [1e-3, -2e-3]])
    out, _ = ProjectionHead(l2, 2).forward(v)
    np.testing.assert_allclose(np.linalg.norm(out[[0, 2]], axis=1), 0.2)
    np.testing.assert_array_equal(out[1], [0.0, 0.0])

    out, _ = ProjectionHead(linf, 2).forward(np.array([[1.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out[0], [0.2, 0.2])
    np.testing.assert_allclose(out[1], [0.2, 0.0])


def test_attack_backward_matches_finite_differences(l2):
    _, attack = build_classification_pair(2, 2, l2, seed=3)
    rng = np.random.default_rng(1)
    x = rng.uniform(0.2, 0.8, size=(6, 2))
    y = np.array([0, 1, 0, 1, 1, 0])
    u = rng.standard_normal((6, 2))
    _, tape = attack.forward_with_tape(x, y)
    grad, grad_x = attack.backward(tape, u)
    h = 1e-6
    for i in rng.choice(attack.n_params, size=30, replace=False):
        e = np.zeros(attack.n_params)
        e[i] = h
        plus = np.sum(attack.with_params(attack.params + e).forward(x, y) * u)
        minus = np.sum(attack.with_params(attack.params - e).forward(x, y) * u)
        assert abs((plus - minus) / (2 * h) - grad[i]) <= 1e-6 * max(1.0, abs(grad[i]))
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd = (np.sum(attack.forward(x + e, y) * u) - np.sum(attack.forward(x - e, y) * u)) / (2 * h)
        assert abs(fd - grad_x[idx]) <= 1e-6 * max(1.0, abs(fd))


def test_attack_rejects_bad_inputs(pair):
    _, attack = pair
    with pytest.raises(InputError):
        attack.forward(np.array([[1.5, 0.2]]), np.array([0]))
    with pytest.raises(InputError):
        attack.forward(np.array([[0.5, 0.2]]), np.array([2]))
    with pytest.raises(InputError):
        attack.forward(np.array([[0.5, 0.2], [0.1, 0.1]]), np.array([0]))


def test_zero_attack_is_identity(pair):
    _, attack = pair
    x = np.random.default_rng(0).uniform(size=(10, 2))
    x_adv = zero_attack(attack).adversarial_example(x, np.zeros(10, dtype=int))
    np.testing.assert_array_equal(x_adv, x)


def test_adversarial_example_clipping_is_opt_in(pair):
    _, attack = pair
    x = np.array([[0.0, 1.0], [0.05, 0.95]])
    y = np.array([0, 1])
    unclipped = attack.adversarial_example(x, y)
    clipped = attack.adversarial_example(x, y, clip_input=True)
    assert np.all((clipped >= 0) & (clipped <= 1))
    np.testing.assert_array_equal(np.clip(unclipped, 0, 1), clipped)


def test_regression_attack_ignores_labels(regression_pair):
    _, attack = regression_pair
    x = np.random.default_rng(2).uniform(size=(5, 2))
    np.testing.assert_array_equal(attack.forward(x), attack.forward(x, np.arange(5)))
    assert [name for name, _ in attack.networks()] == ["decoder_0", "scaler_0"]


def test_pair_builders_are_seeded(linf):
    f1, a1 = build_pair("classification", 2, 2, linf, seed=9)
    f2, a2 = build_pair("classification", 2, 2, linf, seed=9)
    assert np.array_equal(f1.params, f2.params)
    assert np.array_equal(a1.params, a2.params)


def test_with_params_rejects_wrong_length(pair):
    _, attack = pair
    with pytest.raises(ConfigError):
        attack.with_params(np.zeros(attack.n_params + 1))


@pytest.mark.parametrize("text,expected", [("inf", np.inf), ("linf", np.inf), ("2", 2.0), ("l2", 2.0), (1, 1.0)])
def test_parse_p(text, expected):
    assert parse_p(text) == expected


def test_parse_p_rejects_other_norms():
    with pytest.raises(ConfigError, match="constraint.p"):
        parse_p("3")


def test_decoders_do_not_leak_across_classes(linf):
    _, attack = build_classification_pair(2, 3, linf, seed=4)
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(50, 2))
    params = attack.params.copy()
    offset = 0
    for name, net in attack.networks():
        if name in ("decoder_1", "scaler_1"):
            params[offset:offset + net.n_params] += rng.normal(scale=0.5, size=net.n_params)
        offset += net.n_params
    changed = attack.with_params(params)
    for c in (0, 2):
        labels = np.full(50, c)
        np.testing.assert_array_equal(changed.forward(x, labels), attack.forward(x, labels))
    ones = np.ones(50, dtype=int)
    assert not np.array_equal(changed.forward(x, ones), attack.forward(x, ones))


def _away_from_the_clamp(attack, x, y, margin):
    _, tape = attack.forward_with_tape(x, y)
    keep = np.ones(len(x), dtype=bool)
    for c, idx in tape.groups:
        raw = np.abs(tape.branch[c]["head"]["raw"])
        keep[idx] = np.all(np.abs(raw - attack.constraint.delta) > margin, axis=1)
    return keep


def test_linf_attack_backward_matches_finite_differences(linf):
    _, attack = build_classification_pair(2, 2, linf, seed=3)
    rng = np.random.default_rng(2)
    x = rng.uniform(0.2, 0.8, size=(60, 2))
    y = np.arange(60) % 2
    keep = _away_from_the_clamp(attack, x, y, 1e-3)
    x, y = x[keep][:6], y[keep][:6]
    assert len(x) == 6
    u = rng.standard_normal((6, 2))
    _, tape = attack.forward_with_tape(x, y)
    grad, grad_x = attack.backward(tape, u)
    h = 1e-6
    for i in rng.choice(attack.n_params, size=30, replace=False):
        e = np.zeros(attack.n_params)
        e[i] = h
        plus = np.sum(attack.with_params(attack.params + e).forward(x, y) * u)
        minus = np.sum(attack.with_params(attack.params - e).forward(x, y) * u)
        assert abs((plus - minus) / (2 * h) - grad[i]) <= 1e-6 * max(1.0, abs(grad[i]))
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd = (np.sum(attack.forward(x + e, y) * u) - np.sum(attack.forward(x - e, y) * u)) / (2 * h)
        assert abs(fd - grad_x[idx]) <= 1e-6 * max(1.0, abs(fd))
