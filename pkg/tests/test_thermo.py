import numpy as np
import pytest

from clicklab import thermo
from clicklab.thermo import (Ln2Budget, PidController, ThermalPlant, conductance_from_anchor, default_controller,
                             parasitic_from_evaporation, pid_step, plant_step, simulate_control_run)

SETPOINT = 273.15 - 80


def test_conductance_anchor():
    G = conductance_from_anchor()
    assert G == pytest.approx(0.05596, rel=1e-3)
    assert thermo.BATH_K + 6.5 / G == pytest.approx(193.15)


def test_plant_step_examples():
    plant = ThermalPlant()
    T = 150.0
    assert plant_step(T, plant.steady_power(T), 1.0, plant) == pytest.approx(T)
    p = ThermalPlant(conductance_W_per_K=0.056)
    assert 77 + 6.5 / 0.056 == pytest.approx(193.1, abs=0.05)
    assert plant_step(150.0, 0.0, 1.0, plant) < 150.0
    with pytest.raises(ValueError):
        plant_step(150.0, 0.0, 0.0, p)


def test_plant_validation():
    with pytest.raises(ValueError):
        ThermalPlant(heat_capacity_J_per_K=0)
    with pytest.raises(ValueError):
        ThermalPlant(bath_T_K=80.0)


def test_pid_examples():
    c = PidController(kp=2.0, ki=0.0, out_max=20.0)
    assert pid_step(c, 100.0, 100.0) == 0.0
    c = PidController(kp=2.0, ki=0.0, out_max=20.0)
    assert pid_step(c, 150.0, 100.0) == 20.0
    c = PidController(kp=2.0, ki=0.0, out_max=20.0)
    assert pid_step(c, 103.0, 100.0) == 6.0


def test_pid_anti_windup():
    c = PidController(kp=1.0, ki=0.5, out_max=20.0)
    history = []
    for _ in range(50):
        c.step(110.0, 100.0)
        history.append(c.integral)
    # integral grows until kp*e + ki*I reaches the rail, then freezes
    assert history[-1] == history[-2]
    assert 1.0 * 10 + 0.5 * history[-1] <= 20.0 + 0.5 * 10
    assert history[0] > 0


def test_pid_output_clamped():
    c = PidController(kp=50.0, ki=1.0, kd=5.0, out_max=20.0)
    rng = np.random.default_rng(0)
    outs = [c.step(190.0, 190.0 + rng.normal(0, 5)) for _ in range(500)]
    assert min(outs) >= 0.0 and max(outs) <= 20.0


@pytest.fixture(scope="module")
def nominal_run():
    return simulate_control_run(ThermalPlant(), default_controller(), SETPOINT, 12 * 3600, 1.0)


def test_nominal_stability(nominal_run):
    assert nominal_run.settling_time_s is not None
    assert nominal_run.peak_to_peak_K <= 0.004
    assert nominal_run.mean_power_W == pytest.approx(6.5, rel=0.01)
    assert nominal_run.power_W.min() >= 0 and nominal_run.power_W.max() <= 20


def test_proportional_droop():
    trace = simulate_control_run(ThermalPlant(), PidController(kp=8.0, ki=0.0), SETPOINT, 12 * 3600, 1.0)
    assert trace.mean_offset_K < -0.5
    assert trace.mean_offset_K == pytest.approx(-6.5 / (8.0 + conductance_from_anchor()), rel=0.01)


def test_zero_heater_cools_monotonically():
    trace = simulate_control_run(ThermalPlant(), PidController(kp=0.0, ki=0.0), SETPOINT, 20000, 1.0, T0_K=250.0)
    assert np.all(np.diff(trace.T_K) < 0)
    assert trace.T_K[-1] > 77.0


def test_noise_run_reproducible():
    plant = ThermalPlant(sensor_noise_K=5e-4)
    a = simulate_control_run(plant, default_controller(), SETPOINT, 20000, 1.0, seed=3)
    b = simulate_control_run(plant, default_controller(), SETPOINT, 20000, 1.0, seed=3)
    assert np.array_equal(a.T_K, b.T_K)


def test_unstable_dt_rejected():
    plant = ThermalPlant()
    with pytest.raises(ValueError):
        simulate_control_run(plant, default_controller(), SETPOINT, 1e5, 0.2 * plant.time_constant_s)


def test_euler_first_order_convergence():
    plant = ThermalPlant(heat_capacity_J_per_K=50.0)
    t_end, T0, P = 2000.0, 120.0, 9.0
    errors = []
    for dt in (4.0, 2.0, 1.0):
        T = T0
        for _ in range(int(t_end / dt)):
            T = plant_step(T, P, dt, plant)
        errors.append(abs(T - plant.analytic(T0, P, t_end)))
    ratios = [errors[0] / errors[1], errors[1] / errors[2]]
    assert ratios == pytest.approx([2.0, 2.0], rel=0.05)


def test_ln2_budget():
    parasitic = parasitic_from_evaporation(150.0, 6.5)
    b = Ln2Budget(6.5, parasitic, 15.0)
    assert b.evaporation_g_per_h == pytest.approx(150.0)
    assert b.endurance_h == pytest.approx(96.0, rel=0.05)
    assert thermo.evaporation_rate_g_per_h(ThermalPlant(), SETPOINT, parasitic) == pytest.approx(150.0)


def test_trace_csv(nominal_run):
    lines = nominal_run.to_csv().splitlines()
    assert lines[0] == "t_s,T_K,power_W"
    assert len(lines) == len(nominal_run.t_s) + 1
