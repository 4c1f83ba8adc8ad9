import math

import numpy as np
import pytest

from chimera_basins.dynsys import HR_FULL, HR_SMALLNET, HenonParams, KuramotoParams, SystemModel, make_model
from chimera_basins.integrate import (
    DivergenceError,
    IntegrationConfig,
    TrajectorySet,
    integrate,
    integrate_batch,
    integrate_ode,
    iterate_map,
    observable_series,
    write_trajectory_csv,
)
from chimera_basins.netgraph import Network, generate_two_population
from oracles import network_field_loop, rk4_loop


def single_node(kind="hr-diffusive", **kw):
    # a two-node network with no edges is a pair of isolated units
    return make_model(kind, Network(np.zeros((2, 2))), **kw)


def ring(n, w=1.0):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = w
    return Network(a)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegrationConfig(dt=-0.1)
    with pytest.raises(ValueError):
        IntegrationConfig(sample_stride=0)
    with pytest.raises(ValueError, match="whole number"):
        IntegrationConfig(dt=0.01, window_time=1.005, sample_stride=10).step_counts(True)
    with pytest.raises(ValueError, match="multiple"):
        IntegrationConfig(dt=0.01, window_time=1.05, sample_stride=10).step_counts(True)
    with pytest.raises(ValueError, match="32"):
        IntegrationConfig(dt=0.1, window_time=1.0, sample_stride=1).step_counts(True)
    cfg = IntegrationConfig.for_kind("hr-diffusive")
    assert cfg.n_samples(True) == 5000 and cfg.sample_dt(True) == pytest.approx(0.1)
    assert IntegrationConfig.for_kind("henon").n_samples(False) == 2048


def test_hr_single_node_bounded():
    cfg = IntegrationConfig(dt=0.01, transient_time=0.0, window_time=500.0, sample_stride=10)
    tr = integrate_ode(single_node(**{f: getattr(HR_FULL, f) for f in ("r", "x_R", "I")}), [0.1, 0.2, 0.3, -1, 0, 2], cfg)
    x = tr.samples[:, 0, :]
    assert np.all(np.isfinite(tr.samples))
    assert np.abs(x).max() <= 4.0
    # bursting: x crosses zero many times in 500 time units
    assert np.sum((x[0, :-1] < 0) & (x[0, 1:] >= 0)) > 10


def test_identical_uncoupled_nodes_identical():
    m = make_model("hr-diffusive", ring(4), sigma=0.0)
    cfg = IntegrationConfig(dt=0.01, transient_time=5.0, window_time=20.0, sample_stride=5)
    tr = integrate_ode(m, np.tile([0.3, -1.0, 2.5], 4), cfg)
    for i in range(1, 4):
        assert tr.samples[i].tobytes() == tr.samples[0].tobytes()


def test_rk4_matches_loop_oracle(rng):
    m = make_model("hr-electrochemical", ring(3))
    cfg = IntegrationConfig(dt=0.01, transient_time=0.0, window_time=0.4, sample_stride=1)
    z0 = rng.uniform(-1, 1, 9)
    tr = integrate_ode(m, z0, cfg)
    ref = rk4_loop(lambda z: network_field_loop(m, z), z0, 0.01, 40)
    np.testing.assert_allclose(tr.samples[:, :, -1].reshape(-1), ref, rtol=1e-11, atol=1e-12)


def test_halving_dt_converges():
    m = make_model("hr-diffusive", ring(6), **{f: getattr(HR_SMALLNET, f) for f in ("r", "x_R", "I", "sigma")})
    z0 = np.linspace(-1, 1, 18)
    coarse = integrate_ode(m, z0, IntegrationConfig(dt=0.01, transient_time=0, window_time=100, sample_stride=10))
    fine = integrate_ode(m, z0, IntegrationConfig(dt=0.005, transient_time=0, window_time=100, sample_stride=20))
    assert np.abs(coarse.samples[..., -1] - fine.samples[..., -1]).max() < 1e-4


@pytest.mark.parametrize("psi0", [1e-3, 1.0])
def test_rk4_fourth_order(psi0):
    # On a Kuramoto dyad the phase difference psi = theta_1 - theta_0 obeys
    # psi' = -k sin(psi), k = 2 sigma cos(alpha), solved by
    # tan(psi/2) = tan(psi0/2) exp(-k t). For small psi0 this is the linear
    # test equation psi' = -k psi. Error ratios per halving of dt must be near 16.
    sigma, gamma = 1.0, 0.4
    m = SystemModel("kuramoto", KuramotoParams(sigma=sigma, gamma=gamma), Network(np.array([[0.0, 1], [1, 0]])))
    alpha = math.pi / 2 - gamma
    T = 3.2
    k = 2 * sigma * math.cos(alpha)
    exact = 2 * math.atan(math.tan(psi0 / 2) * math.exp(-k * T))
    errs = []
    for dt in (0.1, 0.05, 0.025):
        n = round(T / dt)
        cfg = IntegrationConfig(dt=dt, transient_time=0.0, window_time=T, sample_stride=n // 32)
        tr = integrate_ode(m, [0.0, psi0], cfg)
        psi = tr.samples[1, 0, -1] - tr.samples[0, 0, -1]
        errs.append(abs(psi - exact))
    for a, b in zip(errs, errs[1:]):
        assert 4.0 <= a / b <= 64.0


def test_henon_isolated_series():
    m = SystemModel("henon", HenonParams(), Network(np.zeros((2, 2))))
    cfg = IntegrationConfig(transient_steps=0, window_steps=32, sample_stride=1)
    tr = iterate_map(m, np.zeros(4), cfg)
    x = tr.samples[0, 0]
    assert x[0] == 1.0
    assert x[1] == pytest.approx(-0.44, abs=1e-15)
    ref = [0.0, 0.0]
    for t in range(32):
        ref = [1.0 - 1.44 * ref[0] * ref[0] + ref[1], 0.164 * ref[0]]
        # the map is chaotic, so rounding differences grow; compare early iterates tightly
        if t < 12:
            assert x[t] == pytest.approx(ref[0], rel=1e-12, abs=1e-14)


def test_map_transient_composition(rng):
    m = make_model("henon", ring(4), sigma=0.2)
    z0 = rng.uniform(-0.2, 0.2, 8)
    a = iterate_map(m, z0, IntegrationConfig(transient_steps=10, window_steps=40, sample_stride=1))
    b = iterate_map(m, z0, IntegrationConfig(transient_steps=0, window_steps=50, sample_stride=1))
    np.testing.assert_array_equal(a.samples, b.samples[..., 10:])


def test_escape_reports_step():
    m = SystemModel("henon", HenonParams(), Network(np.zeros((2, 2))))
    cfg = IntegrationConfig(transient_steps=0, window_steps=64, sample_stride=1)
    with pytest.raises(DivergenceError) as exc:
        iterate_map(m, [5.0, 0.0, 0.0, 0.0], cfg)
    assert exc.value.step is not None and 1 <= exc.value.step < 64


def test_wrong_integrator():
    with pytest.raises(ValueError):
        integrate_ode(make_model("henon", ring(3)), np.zeros(6), IntegrationConfig())
    with pytest.raises(ValueError):
        iterate_map(make_model("kuramoto", ring(3)), np.zeros(3), IntegrationConfig())


@pytest.mark.parametrize("kind", ["hr-diffusive", "hr-electrochemical", "kuramoto", "henon"])
def test_engines_agree(kind, rng):
    m = make_model(kind, generate_two_population(3))
    if m.continuous:
        cfg = IntegrationConfig(dt=0.01, transient_time=1.0, window_time=3.2, sample_stride=10)
    else:
        cfg = IntegrationConfig(transient_steps=5, window_steps=40, sample_stride=1)
    scale = 0.3 if kind == "henon" else 1.0
    Z = rng.uniform(-scale, scale, (3, m.state_size))
    a, da, _ = integrate_batch(m, Z, cfg, engine="compiled")
    b, db, _ = integrate_batch(m, Z, cfg, engine="numpy")
    np.testing.assert_array_equal(da, db)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-11)


def test_batch_rows_independent(rng):
    m = make_model("hr-diffusive", ring(4))
    cfg = IntegrationConfig(dt=0.01, transient_time=1.0, window_time=3.2, sample_stride=10)
    Z = rng.uniform(-1, 1, (5, 12))
    full = integrate_batch(m, Z, cfg)[0]
    for k in range(5):
        assert integrate_batch(m, Z[k:k + 1], cfg)[0][0].tobytes() == full[k].tobytes()


def test_determinism(rng):
    m = make_model("kuramoto", ring(5))
    cfg = IntegrationConfig(dt=0.01, transient_time=1.0, window_time=3.2, sample_stride=10)
    z = rng.uniform(0, 6, 5)
    assert integrate(m, z, cfg).samples.tobytes() == integrate(m, z, cfg).samples.tobytes()


def test_observables():
    samples = np.full((3, 1, 40), math.pi / 6)
    tr = TrajectorySet(3, 1, 0.1, samples, np.zeros(3))
    np.testing.assert_allclose(observable_series(tr, "sin-phase"), 0.5, rtol=1e-15)
    shifted = TrajectorySet(3, 1, 0.1, samples + 2 * math.pi, np.zeros(3))
    np.testing.assert_allclose(observable_series(shifted, "sin-phase"), observable_series(tr, "sin-phase"),
                               atol=1e-15)
    hr = TrajectorySet(2, 3, 0.1, np.arange(2 * 3 * 40.0).reshape(2, 3, 40), np.zeros(6))
    np.testing.assert_array_equal(observable_series(hr, "component-0"), hr.samples[:, 0, :])
    with pytest.raises(ValueError):
        observable_series(hr, "sin-phase")
    with pytest.raises(ValueError):
        observable_series(hr, "phase")


def test_trajectory_csv(tmp_path):
    m = make_model("henon", ring(3), sigma=0.1)
    tr = iterate_map(m, np.full(6, 0.1), IntegrationConfig(transient_steps=0, window_steps=32, sample_stride=1))
    p = write_trajectory_csv(tr, tmp_path / "t.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "t,node,c0,c1"
    assert len(lines) == 1 + 32 * 3
    t, node, c0, c1 = lines[1].split(",")
    assert float(t) == 1.0 and node == "0" and float(c0) == tr.samples[0, 0, 0]
