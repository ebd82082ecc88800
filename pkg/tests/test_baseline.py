"""Mass matrix, Coriolis vector and the explicit integrators."""

import numpy as np
import pytest

from helpers import central_gradient, random_model
from pbad.baseline import (
    DynamicsState,
    SingularMassMatrixError,
    acceleration,
    generalized_forces,
    mass_and_coriolis,
    state_energy,
    step,
)
from pbad.kinematics import forward_pass
from pbad.model import Box, JointSpec, LinkSpec, PointMasses, build_model
from pbad.objective import ForceModel, eval_potentials, gravity_potential
from pbad.scene import chain_scene, scene_from_dict

G = 9.81


def pendulum(length=1.0):
    return build_model([LinkSpec(None, JointSpec("hinge", axis=(0, 1, 0)),
                                 PointMasses((1.0,), ((0.0, 0.0, -length),)))])


def test_free_cube_translation_block():
    m = build_model([LinkSpec(None, JointSpec("free"), Box((1.0, 1.0, 1.0), 1.0))])
    M, c = mass_and_coriolis(m, DynamicsState(np.zeros(6), np.zeros(6)))
    np.testing.assert_allclose(M[:3, :3], np.eye(3), atol=1e-14)
    np.testing.assert_array_equal(c, 0.0)


def test_hinge_inertia_matches_quadrature():
    m = build_model([LinkSpec(None, JointSpec("hinge", axis=(0, 0, 1)), Box((1.0, 1.0, 1.0), 1.0, (1.0, 0.0, 0.0)))])
    # midpoint quadrature of rho (x^2 + y^2) over the offset cube
    n = 80
    ax = (np.arange(n) + 0.5) / n - 0.5
    X, Y = np.meshgrid(ax + 1.0, ax, indexing="ij")
    ref = float(np.sum(X**2 + Y**2)) / n**2
    for theta in (0.0, 0.7, -2.1):
        M, _ = mass_and_coriolis(m, DynamicsState([theta], [0.0]))
        assert abs(M[0, 0] - ref) <= 1e-3 * ref


def test_coriolis_zero_at_rest_and_quadratic():
    rng = np.random.default_rng(0)
    m = random_model(rng, 5, kinds=("hinge", "ball", "universal", "free"), boxes_only=True)
    q = rng.uniform(-1, 1, m.total_dofs)
    _, c0 = mass_and_coriolis(m, DynamicsState(q, np.zeros(m.total_dofs)))
    np.testing.assert_array_equal(c0, 0.0)
    qd = rng.normal(size=m.total_dofs)
    _, c1 = mass_and_coriolis(m, DynamicsState(q, qd))
    _, c2 = mass_and_coriolis(m, DynamicsState(q, 2.5 * qd))
    np.testing.assert_allclose(c2, 6.25 * c1, rtol=1e-10, atol=1e-12 * np.abs(c1).max())


def test_mass_matrix_symmetric_positive_definite():
    rng = np.random.default_rng(1)
    for _ in range(10):
        m = random_model(rng, 6, kinds=("hinge", "ball", "universal"), boxes_only=True)
        q = rng.uniform(-1.5, 1.5, m.total_dofs)
        M, _ = mass_and_coriolis(m, DynamicsState(q, np.zeros(m.total_dofs)))
        assert np.max(np.abs(M - M.T)) <= 1e-10 * np.abs(M).max()
        assert np.linalg.eigvalsh(M).min() > 0.0


def test_equations_of_motion_from_lagrangian():
    # M qdd + c = Q must hold with M and c from the kinetic energy of analytic rates
    rng = np.random.default_rng(2)
    m = random_model(rng, 3, kinds=("hinge", "ball"), boxes_only=True)
    q, qd = rng.uniform(-1, 1, (2, m.total_dofs))
    M, c = mass_and_coriolis(m, DynamicsState(q, qd))
    ke = lambda x, v: state_energy(m, ForceModel(), DynamicsState(x, v))[0]  # noqa: E731
    # kinetic energy is 1/2 qd^T M qd
    assert ke(q, qd) == pytest.approx(0.5 * qd @ M @ qd, rel=1e-10)
    # Lagrange: c = dM/dt qd - dT/dq
    h = 1e-6
    Mt = lambda x: mass_and_coriolis(m, DynamicsState(x, np.zeros_like(x)))[0]  # noqa: E731
    Mdot = (Mt(q + h * qd) - Mt(q - h * qd)) / (2 * h)
    dTdq = central_gradient(lambda x: ke(x, qd), q)
    np.testing.assert_allclose(c, Mdot @ qd - dTdq, rtol=1e-5, atol=1e-6 * np.abs(c).max())


def test_semi_implicit_ballistic_step():
    m = build_model([LinkSpec(None, JointSpec("free"), Box((1.0, 1.0, 1.0), 1.0))])
    dt = 0.01
    s = step(m, DynamicsState(np.zeros(6), np.zeros(6)), ForceModel(), dt, "semi_implicit")
    np.testing.assert_allclose(s.qdot[:3], [0, 0, -G * dt], atol=1e-14)
    np.testing.assert_allclose(s.q[:3], [0, 0, -G * dt * dt], atol=1e-14)
    np.testing.assert_allclose(s.q[3:], 0.0, atol=1e-14)
    fe = step(m, DynamicsState(np.zeros(6), np.zeros(6)), ForceModel(), dt, "forward_euler")
    np.testing.assert_array_equal(fe.q, 0.0)


def test_rk4_small_angle_pendulum():
    m = pendulum()
    theta0, dt = 0.01, 1e-3
    s = DynamicsState([theta0], [0.0])
    w = np.sqrt(G)
    worst = 0.0
    for k in range(1000):
        s = step(m, s, ForceModel(), dt, "rk4", k * dt)
        worst = max(worst, abs(s.q[0] - theta0 * np.cos(w * (k + 1) * dt)))
    assert worst <= 1e-4


@pytest.mark.parametrize("scheme,order", [("forward_euler", 1), ("semi_implicit", 1), ("rk2", 2), ("rk3", 3), ("rk4", 4)])
def test_integrator_convergence_orders(scheme, order):
    m = pendulum()
    # reference: large-amplitude pendulum with a very fine rk4 run
    def run(dt, sch, T=0.5):
        s = DynamicsState([1.0], [0.0])
        for k in range(int(round(T / dt))):
            s = step(m, s, ForceModel(), dt, sch, k * dt)
        return s.q[0]

    ref = run(1e-4, "rk4")
    errs = [abs(run(dt, scheme) - ref) for dt in (0.02, 0.01, 0.005)]
    fitted = np.polyfit(np.log([0.02, 0.01, 0.005]), np.log(errs), 1)[0]
    assert fitted >= order - 0.3


def test_gravity_force_matches_potential_gradient():
    rng = np.random.default_rng(3)
    m = random_model(rng, 6, kinds=("hinge", "ball", "universal", "free"))
    q = rng.uniform(-1, 1, m.total_dofs)
    forces = ForceModel(gravity=(0.5, -1.0, -9.81))
    Q = generalized_forces(m, forces, DynamicsState(q, np.zeros(m.total_dofs)), 0.0, 0.01)
    _, grad, _ = eval_potentials(m, forces, q, q, 0.01)
    assert np.max(np.abs(Q + grad)) <= 1e-8 * max(1.0, np.abs(grad).max())
    fd = central_gradient(lambda x: gravity_potential(m, forward_pass(m, x), forces.g), q)
    assert np.max(np.abs(Q + fd)) <= 1e-5 * np.abs(fd).max()


def test_singular_mass_matrix_signalled():
    # a point mass on the hinge axis has no rotational inertia
    m = build_model([LinkSpec(None, JointSpec("hinge", axis=(0, 0, 1)), PointMasses((1.0,), ((0.0, 0.0, 0.5),)))])
    with pytest.raises(SingularMassMatrixError):
        acceleration(m, ForceModel(), DynamicsState([0.0], [0.0]), 0.0, 0.01)


def test_bad_inputs():
    m = pendulum()
    with pytest.raises(ValueError):
        step(m, DynamicsState([0.0], [0.0]), ForceModel(), 0.0, "rk4")
    with pytest.raises(ValueError):
        step(m, DynamicsState([0.0], [0.0]), ForceModel(), 0.01, "rk7")
    with pytest.raises(ValueError):
        step(m, DynamicsState([0.0], [0.0, 1.0]), ForceModel(), 0.01, "rk4")


@pytest.mark.slow
def test_rk4_conserves_chain_energy():
    scene = scene_from_dict(chain_scene(10))
    cfg = scene.sim_config()
    s = DynamicsState(cfg.q0, cfg.qdot0)
    e0 = sum(state_energy(scene.model, scene.forces, s))
    dt = 1e-4
    worst = 0.0
    for k in range(20000):
        s = step(scene.model, s, scene.forces, dt, "rk4", k * dt)
        if k % 100 == 99:
            worst = max(worst, abs(sum(state_energy(scene.model, scene.forces, s)) - e0))
    assert worst <= 1e-3 * abs(e0)
