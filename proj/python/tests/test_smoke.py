import math

import numpy as np
import pytest

import fedbilevel as fb


def make_oracle(noise=0.1, dim=6):
    cfg = fb.QuadQuadConfig()
    cfg.dim_x = dim
    cfg.dim_y = dim
    cfg.mu = 1.0
    cfg.L1 = 2.0
    cfg.lam = 0.5
    cfg.b_scale = 1.0
    cfg.yc_scale = 1.0
    cfg.noise_std = noise
    cfg.gen_seed = 7
    return fb.QuadQuadOracle(cfg)


def test_import_surface():
    assert callable(fb.run)
    assert fb.hypergrad_samples(3) == 5


def test_exact_hypergradient_matches_assembled_estimate():
    oracle = make_oracle(noise=0.0)
    sc = oracle.constants
    nc = fb.NeumannConfig(theta=fb.default_theta(sc), Q=40)
    stream = fb.RandomStream(seed=3)
    x = np.linspace(-1.0, 1.0, oracle.dim_x)
    g_est = fb.stochastic_hypergradient(oracle, x, oracle.exact_lower_solution(x), nc, stream)
    g_exact = oracle.exact_hypergradient(x)
    # Noise-free draws leave only truncation bias, tiny at Q = 40.
    assert np.linalg.norm(g_est - g_exact) <= 1e-6


def test_bias_within_bound():
    oracle = make_oracle(noise=0.0)
    sc = oracle.constants
    theta = fb.default_theta(sc)
    x = np.ones(oracle.dim_x)
    for Q in (0, 2, 6):
        nc = fb.NeumannConfig(theta=theta, Q=Q)
        stream = fb.RandomStream(seed=11, stream_id=5)
        bias = fb.measure_bias(oracle, x, nc, 1, stream)
        bound = fb.truncation_bias_bound(sc, theta, Q)
        assert bias <= bound + 1e-12


def run_once(oracle, algorithm, seed=1, T=60, workers=1):
    sc = oracle.constants
    nc = fb.NeumannConfig(theta=fb.default_theta(sc), Q=2)
    dc = fb.derived_constants(sc, nc)
    preset = (
        fb.RatePreset.BsgmFixed
        if algorithm == fb.Algorithm.LocalBSGM
        else fb.RatePreset.BsgvrmFixed
    )
    deriv = fb.theorem_hyperparams(sc, dc, nc, 4, 2, preset)
    fc = fb.FederationConfig()
    fc.K = 4
    fc.p = 2
    fc.T = T
    fc.seed = seed
    fc.algorithm = algorithm
    fc.hp = deriv.hp
    fc.schedule = deriv.schedule
    fc.workers = workers
    return fb.run(fc, oracle)


@pytest.mark.parametrize("algorithm", [fb.Algorithm.LocalBSGM, fb.Algorithm.LocalBSGVRM])
def test_run_shape_and_metric(algorithm):
    oracle = make_oracle()
    trace = run_once(oracle, algorithm)
    assert len(trace.rows) == trace.T == 60
    assert trace.has_exact_metric
    assert math.isfinite(trace.final_metric)
    acc = fb.accounting(trace)
    assert acc.rounds == 30
    q3 = fb.hypergrad_samples(2) + 1  # one lower gradient per estimator call
    if algorithm == fb.Algorithm.LocalBSGM:
        assert acc.samples_per_device == 60 * q3
    else:
        # Init batch plus two estimator calls per subsequent step, on top of
        # the warm-start draws shared by every device.
        base = trace.rows[0].samples_cumulative
        assert acc.samples_per_device == base + 59 * 2 * q3


def test_run_deterministic_across_workers():
    oracle = make_oracle()
    a = run_once(oracle, fb.Algorithm.LocalBSGM, workers=1)
    b = run_once(oracle, fb.Algorithm.LocalBSGM, workers=3)
    for ra, rb in zip(a.rows, b.rows):
        assert ra.grad_norm_sq == rb.grad_norm_sq
        assert ra.metric_partial == rb.metric_partial


def test_metric_decreases_from_start():
    oracle = make_oracle()
    trace = run_once(oracle, fb.Algorithm.LocalBSGM, T=400)
    first = trace.rows[0].grad_norm_sq + trace.L_tilde**2 * trace.rows[0].lower_gap_sq
    assert trace.final_metric < first
