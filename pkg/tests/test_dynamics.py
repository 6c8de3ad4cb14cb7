import numpy as np
import pytest

from fastcommittor.dataset import read_dataset, write_dataset
from fastcommittor.dynamics import (
    PotentialSpec,
    SimulationPlan,
    em_step,
    generate_dataset,
    importance_weights,
    potential,
    potential_grad,
    propagate,
    simulate_chain,
    three_well,
)
from fastcommittor.errors import FormatError, InvalidArgumentError, SimulationBlowupError
from fastcommittor.reference import solve_reference
from fastcommittor.regions import OMEGA, triple_well_regions


def test_planar_potential_is_even_in_first_coordinate():
    rng = np.random.default_rng(0)
    u, v = rng.uniform(-2, 2, 100), rng.uniform(-1.5, 2.5, 100)
    np.testing.assert_allclose(three_well(u, v), three_well(-u, v), rtol=1e-14)


def test_known_minima():
    # local minima of the planar potential (values from an independent optimizer run)
    for point in [(1.048055, -0.042094), (-1.048055, -0.042094), (0.0, 1.537082)]:
        g = potential_grad(np.array([*point, 0.0]))
        assert np.abs(g).max() < 1e-4


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(50):
        x = rng.uniform(-2, 2, 10)
        g = potential_grad(x)
        fd = np.array([(potential(x + h * e) - potential(x - h * e)) / (2 * h) for e in np.eye(10)])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6)


def test_nuisance_gradient():
    x = np.arange(10.0)
    np.testing.assert_array_equal(potential_grad(x)[2:], 4 * x[2:])


def test_zero_noise_contraction():
    # harmonic V = k |x|^2 / 2: one noiseless step multiplies x by 1 - k dt
    k, dt = 3.0, 0.01
    x = np.array([1.0, -2.0, 0.5])
    out = em_step(x, dt, 1.0, None, grad=lambda p: k * p, noise=np.zeros(3))
    np.testing.assert_allclose(out, (1 - k * dt) * x, rtol=1e-15)


def test_em_step_blowup():
    with pytest.raises(SimulationBlowupError):
        em_step(np.full(10, 1e200), 1e-3, 2.0, np.random.default_rng(0))


def test_nuisance_stationary_variance():
    # coordinates 3..10 are independent OU processes with variance 1 / (4 beta)
    beta = 2.0
    x0 = np.zeros(10)
    x0[0] = -1.0
    _, rec = simulate_chain(x0, 1_000_000, 1e-3, beta, np.random.default_rng(2), stride=10)
    var = rec[:, 2:].var(axis=0).mean()
    assert var == pytest.approx(1 / (4 * beta), rel=0.05)


def test_chain_deterministic():
    x0 = np.zeros(10)
    a, ra = simulate_chain(x0, 2000, 1e-3, 1.0, np.random.default_rng(5), stride=100)
    b, rb = simulate_chain(x0, 2000, 1e-3, 1.0, np.random.default_rng(5), stride=100)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ra, rb)
    assert ra.shape == (20, 10)


def test_chain_matches_single_steps():
    x0 = np.array([0.2, 0.4, 0.1, -0.3])
    rng = np.random.default_rng(6)
    end, _ = simulate_chain(x0, 50, 1e-3, 2.0, rng)
    rng = np.random.default_rng(6)
    x = x0
    for xi in rng.standard_normal((50, 4)):
        x = em_step(x, 1e-3, 2.0, None, noise=xi)
    np.testing.assert_allclose(end, x, rtol=1e-12, atol=1e-14)


def test_propagate_takes_requested_steps():
    calls = []

    def grad(x):
        calls.append(1)
        return np.zeros_like(x)

    propagate(np.zeros((5, 3)), 10, 1e-3, 2.0, np.random.default_rng(0), grad=grad)
    assert len(calls) == SimulationPlan(5).lag_steps == 10


def test_weights():
    np.testing.assert_allclose(importance_weights([1.0], 2.0, 1.0), [np.exp(-1.0)])
    np.testing.assert_array_equal(importance_weights([3.0, -2.0], 2.0, 2.0), [1.0, 1.0])


@pytest.mark.parametrize("kwargs", [{"tau": 0.0105}, {"spacing": 0.0}, {"dt": -1.0}, {"n_samples": 0}])
def test_plan_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        SimulationPlan(**{"n_samples": 10, **kwargs})


def test_potential_validation():
    with pytest.raises(InvalidArgumentError):
        PotentialSpec(beta=0.0)
    with pytest.raises(InvalidArgumentError):
        PotentialSpec(name="muller_brown")


class TestGenerate:
    def test_shapes_and_weights(self, regions):
        data = generate_dataset(SimulationPlan(200, seed=3), PotentialSpec(), regions)
        assert data.x.shape == data.y.shape == (200, 10)
        assert np.all(np.isfinite(data.w)) and np.all(data.w > 0)
        np.testing.assert_allclose(data.w, np.exp(-potential(data.x)), rtol=1e-12)
        assert data.tau == 0.01

    def test_equal_temperatures_give_unit_weights(self, regions):
        data = generate_dataset(SimulationPlan(50, seed=1), PotentialSpec(beta=2.0, beta_s=2.0), regions)
        np.testing.assert_array_equal(data.w, 1.0)

    def test_seeded(self, regions):
        a = generate_dataset(SimulationPlan(100, seed=4), PotentialSpec(), regions)
        b = generate_dataset(SimulationPlan(100, seed=4), PotentialSpec(), regions)
        c = generate_dataset(SimulationPlan(100, seed=5), PotentialSpec(), regions)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.x, c.x)

    def test_file_round_trip(self, tmp_path, regions):
        data = generate_dataset(SimulationPlan(100, seed=6), PotentialSpec(), regions)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        write_dataset(p1, data)
        back = read_dataset(p1)
        write_dataset(p2, back)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.y, data.y)
        np.testing.assert_array_equal(back.w, data.w)
        np.testing.assert_array_equal(back.x_region, data.x_region)
        assert back.meta["seed"] == 6

    def test_corrupt_file(self, tmp_path, regions):
        data = generate_dataset(SimulationPlan(10, seed=6), PotentialSpec(), regions)
        path = tmp_path / "a.txt"
        write_dataset(path, data)
        lines = path.read_text().splitlines()
        lines[3] = lines[3].replace(",", ";", 1)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError):
            read_dataset(path)

    def test_transition_region_coverage(self, regions):
        data = generate_dataset(SimulationPlan(100_000, seed=1), PotentialSpec(), regions)
        field = solve_reference(regions, 2.0, shape=(201, 161))
        pts = data.x[data.x_region == OMEGA][:, :2]
        pts = pts[field.contains(pts)]
        q = field(pts)
        assert np.mean((q >= 0.1) & (q <= 0.9)) >= 0.01
