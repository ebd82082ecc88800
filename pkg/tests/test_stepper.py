"""Position-based time stepping, trajectories and lockstep batches."""

import numpy as np
import pytest

from pbad.baseline import DynamicsState, step
from pbad.model import Box, JointSpec, LinkSpec, build_model
from pbad.objective import ForceModel
from pbad.optim import OptimizerConfig
from pbad.scene import chain_scene, scene_from_dict
from pbad.stepper import SimConfig, SimulationAborted, batch_simulate, bootstrap_history, simulate


def free_box():
    return build_model([LinkSpec(None, JointSpec("free"), Box((0.4, 0.3, 0.2), 500.0))])


def chain(n=10, **kw):
    return scene_from_dict(chain_scene(n, **kw))


@pytest.mark.parametrize("objective", ["energy", "residual"])
def test_free_body_moves_in_a_straight_line(objective):
    m = free_box()
    qd0 = np.array([1.0, -2.0, 0.5, 0.0, 0.0, 0.3])
    dt = 0.01
    sim = SimConfig(dt, 0.5, np.zeros(6), qd0, objective=objective,
                    optimizer=OptimizerConfig(grad_tol=1e-12))
    traj = simulate(m, ForceModel(gravity=(0.0, 0.0, 0.0)), sim)
    assert traj.status == "ok" and len(traj.times) == 51
    com = traj.q[:, :3]  # the box is centred on the link origin
    vel = np.diff(com, axis=0) / dt
    assert np.max(np.abs(vel - qd0[:3])) <= 1e-9
    np.testing.assert_allclose(com, np.outer(traj.times, qd0[:3]), atol=1e-9)


def test_times_step_by_dt():
    s = chain(3, dt=0.01, duration=0.1)
    traj = simulate(s.model, s.forces, s.sim_config(objective="energy"))
    t = np.array(traj.times)
    assert len(t) == 11
    np.testing.assert_allclose(np.diff(t), 0.01, atol=1e-15)
    assert len(traj.solve_reports) == 10 and all(r.converged for r in traj.solve_reports)
    assert traj.energies().shape == (11, 4)


def test_step_count_rounds_up():
    assert SimConfig(0.05, 10.0, [0.0], [0.0]).n_steps == 200
    assert SimConfig(0.03, 0.1, [0.0], [0.0]).n_steps == 4


def test_serial_runs_are_bit_identical():
    s = chain(10, dt=0.01, duration=0.1)
    cfg = s.sim_config()
    a = simulate(s.model, s.forces, cfg)
    b = simulate(s.model, s.forces, cfg)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.energies(), b.energies())
    assert a.iterations() == b.iterations()


def test_batch_of_one_matches_simulate():
    s = chain(10, dt=0.01, duration=0.1)
    cfg = s.sim_config()
    ref = simulate(s.model, s.forces, cfg)
    (got,) = batch_simulate(s.model, s.forces, [cfg], workers=1)
    assert np.max(np.abs(got.q - ref.q)) <= 1e-12


def random_configs(s, count, steps, seed):
    rng = np.random.default_rng(seed)
    base = s.sim_config()
    return [s.sim_config(q0=base.q0 + rng.uniform(-0.3, 0.3, base.q0.size), duration=steps * s.dt)
            for _ in range(count)]


@pytest.mark.parametrize("workers", [1, 3])
def test_batch_matches_serial(workers):
    s = chain(10, dt=0.01)
    sims = random_configs(s, 7, 5, seed=workers)
    batch = batch_simulate(s.model, s.forces, sims, workers=workers)
    for cfg, got in zip(sims, batch):
        ref = simulate(s.model, s.forces, cfg)
        assert got.status == ref.status == "ok"
        assert np.max(np.abs(got.q - ref.q)) <= 1e-10
        assert got.iterations() == ref.iterations()


def test_batch_isolates_a_failing_trajectory():
    s = chain(3, dt=0.01)
    good = s.sim_config(duration=0.05)
    bad = s.sim_config(duration=0.05, q0=np.full(6, np.inf))
    out = batch_simulate(s.model, s.forces, [good, bad, good], workers=2)
    assert out[0].status == out[2].status == "ok"
    np.testing.assert_array_equal(out[0].q, out[2].q)
    assert out[1].status == "aborted"


def test_batch_rejects_zero_workers():
    s = chain(2)
    with pytest.raises(ValueError):
        batch_simulate(s.model, s.forces, [s.sim_config()], workers=0)


def test_sim_config_validation():
    ok = dict(dt=0.01, duration=1.0, q0=[0.0], qdot0=[0.0])
    for bad in (dict(dt=0.0), dict(duration=-1.0), dict(order=1), dict(integrator="verlet"),
                dict(objective="other"), dict(bootstrap="cubic"), dict(order=3, objective="energy")):
        with pytest.raises(ValueError):
            SimConfig(**{**ok, **bad})
    s = chain(2)
    with pytest.raises(ValueError):
        simulate(s.model, s.forces, s.sim_config(q0=np.zeros(3)))


def test_consecutive_failures_abort_with_diagnostic():
    s = chain(10, dt=0.05, duration=2.0)
    cfg = s.sim_config(optimizer=OptimizerConfig(max_iters=1, grad_tol=1e-14), max_consecutive_failures=3)
    traj = simulate(s.model, s.forces, cfg)
    assert traj.status == "aborted"
    assert "consecutive" in traj.message and len(traj.solve_reports) == 4
    with pytest.raises(SimulationAborted) as info:
        simulate(s.model, s.forces, cfg, raise_on_abort=True)
    assert info.value.trajectory.status == "aborted"


def test_energy_audit_dissipates():
    s = chain(10, duration=0.5)
    traj = simulate(s.model, s.forces, s.sim_config(order=2, objective="energy"))
    E = traj.energies()[:, 3]
    assert np.max(np.diff(E)) <= 0.005 * abs(E[0])
    assert E[-1] < E[0]


def test_linear_bootstrap():
    m = free_box()
    sim = SimConfig(0.01, 1.0, np.arange(6.0), np.ones(6))
    prev, cur = bootstrap_history(m, ForceModel(), sim, -1.0)
    np.testing.assert_allclose(prev, np.arange(6.0) - 0.01)
    np.testing.assert_array_equal(cur, np.arange(6.0))


def test_rk4_bootstrap_is_exact_for_ballistic_motion():
    m = free_box()
    qd0 = np.array([1.0, 0.0, 2.0, 0.0, 0.0, 0.0])
    sim = SimConfig(0.01, 1.0, np.zeros(6), qd0, order=3, objective="residual", bootstrap="rk4")
    tau = -0.5
    prev, _ = bootstrap_history(m, ForceModel(), sim, tau)
    t = tau * 0.01
    expect = t * qd0
    expect[2] += 0.5 * -9.81 * t * t
    np.testing.assert_allclose(prev, expect, atol=1e-14)


def test_baseline_integrator_through_simulate():
    m = build_model([LinkSpec(None, JointSpec("hinge", axis=(0, 1, 0)), Box((0.1, 0.1, 1.0), 1000.0, (0.0, 0.0, -0.5)))])
    traj = simulate(m, ForceModel(), SimConfig(0.001, 0.01, [0.3], [0.0], integrator="rk4"))
    s = DynamicsState([0.3], [0.0])
    for k in range(10):
        s = step(m, s, ForceModel(), 0.001, "rk4", k * 0.001)
    np.testing.assert_array_equal(traj.qs[-1], s.q)
    assert traj.solve_reports == [] and traj.status == "ok"
