import json

import numpy as np
import pytest

from police.net import Layer, Network, extract_affine, fold_bias, forward_standard, new_mlp
from police.region import box, from_vertices, simplex
from police.verify import (
    certify_affine,
    certify_fold_equivalence,
    certify_jacobian_target,
    certify_sign_patterns,
)

ACTS = ["relu", "leaky_relu", "abs"]


def random_case(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 9))
    depth = int(rng.integers(1, 5))
    dims = [D] + [int(rng.integers(1, 65)) for _ in range(depth - 1)] + [int(rng.integers(1, 3))]
    net = new_mlp(dims, ACTS[seed % 3], seed)
    net = net.with_params([p + 0.3 * rng.standard_normal(p.shape) for p in net.params()])
    region = simplex(D) if seed % 2 else box(-np.ones(D), np.ones(D))
    return net, region


def test_identity_net_passes_anywhere():
    net = Network((Layer(np.eye(3), np.zeros(3)),))
    for region in (simplex(3), box([-5, 0, 1], [2, 3, 4])):
        cert = certify_affine(net, region, mode="plain")
        assert cert.passed and cert.affine_residual <= 1e-12 and cert.exit_code == 0


@pytest.mark.parametrize("seed", range(50))
def test_policed_passes(seed):
    net, region = random_case(seed)
    cert = certify_affine(net, region, n_samples=300, seed=seed)
    assert cert.passed, cert.diagnostics


def test_folded_plain_mode_passes():
    net, region = random_case(4)
    cert = certify_affine(fold_bias(net, region), region, mode="plain")
    assert cert.passed


def test_unconstrained_net_fails_with_localized_diagnostic():
    net = new_mlp([2, 32, 32, 1], "relu", 0)
    region = box([-3, -3], [3, 3])
    margins = certify_sign_patterns(net, region, mode="plain")
    assert margins.min_margin < 0 and margins.violations
    cert = certify_affine(net, region, mode="plain")
    assert cert.status == "fail" and cert.exit_code == 2
    assert any(d.startswith("layer ") for d in cert.diagnostics)


def test_broken_bias_after_fold_fails():
    net = new_mlp([2, 16, 16, 1], "leaky_relu", 1)
    region = box([-1, -1], [1, 1])
    folded = fold_bias(net, region)
    b = folded.layers[0].bias.copy()
    # push a unit so its kink falls strictly between the vertices
    H = region.vertices @ folded.layers[0].weight.T + folded.layers[0].bias
    k = int(np.argmax(H.max(0) - H.min(0)))
    b[k] -= H[:, k].mean()
    broken = folded.with_bias(0, b)
    cert = certify_affine(broken, region, mode="plain")
    assert cert.status == "fail"
    assert any(f"layer 0 unit {k}" in d for d in cert.diagnostics)


def test_single_vertex_margins_are_abs_preacts():
    net = new_mlp([2, 5, 1], "relu", 0)
    net = net.with_bias(0, np.linspace(-1, 1, 5))
    region = from_vertices([(0.3, -0.2)])
    rep = certify_sign_patterns(net, region, mode="plain")
    H = region.vertices @ net.layers[0].weight.T + net.layers[0].bias
    # majority of one row: positive entries keep +, others flip to -H (zero stays 0)
    assert rep.layer_margins[0] == pytest.approx(np.abs(H).min())
    assert rep.passed


def test_too_few_samples_inconclusive():
    cert = certify_affine(new_mlp([2, 4, 1]), simplex(2), n_samples=1)
    assert cert.status == "inconclusive" and cert.exit_code == 3
    json.loads(cert.to_json())


def test_degenerate_region_still_certifies():
    # a flat triangle in 3-D: the fit uses the 2-D hull coordinates
    region = from_vertices([(0, 0, 0), (1, 0, 0), (0, 1, 0)])
    cert = certify_affine(new_mlp([3, 8, 1], "relu", 0), region)
    assert cert.passed


def test_fold_equivalence_report():
    for seed in range(20):
        net, region = random_case(seed)
        assert certify_fold_equivalence(net, region, seed=seed).delta <= 1e-9
    rep = certify_fold_equivalence(new_mlp([2, 3, 1]), simplex(2), n_probes=0)
    assert rep.vacuous and rep.delta == 0.0


def test_second_fold_is_exact():
    net, region = random_case(7)
    once = fold_bias(net, region)
    twice = fold_bias(once, region)
    X = np.random.default_rng(0).standard_normal((50, net.input_dim))
    assert np.abs(forward_standard(once, X) - forward_standard(twice, X)).max() <= 1e-12


def test_jacobian_target_report():
    net, region = random_case(2)
    piece = extract_affine(fold_bias(net, region), region)
    rep = certify_jacobian_target(net, region, piece.slope, piece.offset)
    assert rep.slope_gap == 0.0 and rep.offset_gap == 0.0 and rep.passed
    dA = np.zeros_like(piece.slope)
    dA[0, 0] = 0.25
    rep = certify_jacobian_target(net, region, piece.slope + dA, piece.offset)
    assert rep.slope_gap == pytest.approx(0.25, abs=1e-12) and not rep.passed


def test_residual_monotone_in_deviation():
    region = box([-1.0], [1.0])
    residuals = []
    for depth in (0.05, 0.2, 0.6):
        # |x| - depth style kink inside the region, growing curvature
        net = Network((Layer([[1.0], [1.0]], [0.0, 0.0], "relu"), Layer([[depth, 0.0]], [0.0])))
        residuals.append(certify_affine(net, region, mode="plain").affine_residual)
    assert residuals == sorted(residuals)


def test_certificate_json_fields():
    cert = certify_affine(new_mlp([2, 4, 1]), simplex(2))
    obj = json.loads(cert.to_json())
    for key in ("status", "sign_margin", "affine_residual", "fit_residual", "fold_delta", "tol", "mode", "passed"):
        assert key in obj


def test_bad_mode():
    with pytest.raises(ValueError):
        certify_affine(new_mlp([2, 4, 1]), simplex(2), mode="folded")


def _mutation_suite(n=200, magnitude_min=0.5, seed=0):
    """Hidden-layer bias mutations of folded nets; yields (excluded, exit_code)."""
    rng = np.random.default_rng(seed)
    region = box([-1, -1], [1, 1])
    for i in range(n):
        net = fold_bias(new_mlp([2, 16, 16, 1], "leaky_relu", int(rng.integers(1 << 30))), region)
        layer = int(rng.integers(0, 2))
        unit = int(rng.integers(0, 16))
        delta = rng.choice([-1, 1]) * rng.uniform(magnitude_min, 2.0)
        b = net.layers[layer].bias.copy()
        b[unit] += delta
        mutated = net.with_bias(layer, b)
        try:
            extract_affine(mutated, region)
            excluded = True  # every vertex still on one side of every kink
        except Exception:
            excluded = False
        yield excluded, certify_affine(mutated, region, n_samples=500, seed=i, mode="plain").exit_code


def test_mutation_soundness_small():
    codes = [code for excluded, code in _mutation_suite(n=40) if not excluded]
    assert codes and sum(c == 2 for c in codes) / len(codes) >= 0.95
