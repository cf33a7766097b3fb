"""Lumped thermal model of the LN2-cooled detector capsule under PID heater control.

The capsule is a single heat capacity linked to the 77 K nitrogen bath by a
conductance. The conductance is fitted to one operating point, 6.5 W of
heater power holding -80 degC, not derived from material data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BATH_K = 77.0
LN2_LATENT_HEAT_J_PER_KG = 199e3
ZERO_C_K = 273.15


def conductance_from_anchor(power_W: float = 6.5, temperature_K: float = ZERO_C_K - 80.0) -> float:
    """Bath link that makes ``power_W`` the steady heater power at ``temperature_K``."""
    if temperature_K <= BATH_K:
        raise ValueError("anchor temperature must be above the bath")
    return power_W / (temperature_K - BATH_K)


@dataclass(frozen=True)
class ThermalPlant:
    heat_capacity_J_per_K: float = 500.0
    conductance_W_per_K: float = field(default_factory=conductance_from_anchor)
    heater_max_W: float = 20.0
    sensor_noise_K: float = 0.0
    bath_T_K: float = BATH_K

    def __post_init__(self):
        if self.heat_capacity_J_per_K <= 0 or self.conductance_W_per_K <= 0 or self.heater_max_W <= 0:
            raise ValueError("plant parameters must be positive")
        if self.sensor_noise_K < 0:
            raise ValueError("sensor noise must be non-negative")
        if self.bath_T_K != BATH_K:
            raise ValueError("bath is fixed at 77 K")

    @property
    def time_constant_s(self) -> float:
        return self.heat_capacity_J_per_K / self.conductance_W_per_K

    def steady_power(self, T_K: float) -> float:
        return self.conductance_W_per_K * (T_K - self.bath_T_K)

    def analytic(self, T0_K: float, power_W: float, t_s):
        """Exact temperature under constant heater power."""
        T_inf = self.bath_T_K + power_W / self.conductance_W_per_K
        return T_inf + (T0_K - T_inf) * np.exp(-np.asarray(t_s) / self.time_constant_s)


def plant_step(T_K: float, power_W: float, dt_s: float, plant: ThermalPlant) -> float:
    """One explicit Euler step."""
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    return T_K + dt_s * (power_W - plant.conductance_W_per_K * (T_K - plant.bath_T_K)) / plant.heat_capacity_J_per_K


@dataclass
class PidController:
    """Positional PID, derivative on measurement, conditional-integration anti-windup."""

    kp: float
    ki: float
    kd: float = 0.0
    dt_s: float = 1.0
    out_min: float = 0.0
    out_max: float = 20.0
    integral: float = 0.0
    _last_measured: float | None = None

    def reset(self):
        self.integral = 0.0
        self._last_measured = None

    def step(self, setpoint: float, measured: float) -> float:
        error = setpoint - measured
        deriv = 0.0 if self._last_measured is None else -(measured - self._last_measured) / self.dt_s
        self._last_measured = measured
        unclamped = self.kp * error + self.ki * (self.integral + error * self.dt_s) + self.kd * deriv
        # integrate only while the output is not pushed further into a rail
        if not ((unclamped > self.out_max and error > 0) or (unclamped < self.out_min and error < 0)):
            self.integral += error * self.dt_s
        out = self.kp * error + self.ki * self.integral + self.kd * deriv
        return min(max(out, self.out_min), self.out_max)


def pid_step(ctrl: PidController, setpoint_K: float, measured_K: float) -> float:
    return ctrl.step(setpoint_K, measured_K)


@dataclass
class ControlTrace:
    t_s: np.ndarray
    T_K: np.ndarray
    power_W: np.ndarray
    setpoint_K: float
    settle_band_K: float
    stability_window_s: float

    @property
    def settling_time_s(self) -> float | None:
        """First time after which T stays within the settle band for good."""
        outside = np.flatnonzero(np.abs(self.T_K - self.setpoint_K) > self.settle_band_K)
        if len(outside) == 0:
            return float(self.t_s[0])
        if outside[-1] == len(self.T_K) - 1:
            return None
        return float(self.t_s[outside[-1] + 1])

    def _window(self):
        return self.t_s >= self.t_s[-1] - self.stability_window_s

    @property
    def peak_to_peak_K(self) -> float:
        T = self.T_K[self._window()]
        return float(T.max() - T.min())

    @property
    def mean_power_W(self) -> float:
        return float(self.power_W[self._window()].mean())

    @property
    def mean_offset_K(self) -> float:
        return float(self.T_K[self._window()].mean() - self.setpoint_K)

    def to_csv(self) -> str:
        rows = np.column_stack([self.t_s, self.T_K, self.power_W])
        lines = ["t_s,T_K,power_W"]
        lines += [f"{t:.3f},{T:.6f},{p:.6f}" for t, T, p in rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "setpoint_K": self.setpoint_K,
            "settling_time_s": self.settling_time_s,
            "stability_window_s": self.stability_window_s,
            "peak_to_peak_K": self.peak_to_peak_K,
            "stability_pm_K": self.peak_to_peak_K / 2,
            "mean_offset_K": self.mean_offset_K,
            "mean_power_W": self.mean_power_W,
        }


def simulate_control_run(plant: ThermalPlant, ctrl: PidController, setpoint_K: float, duration_s: float,
                         dt_s: float, seed=None, T0_K: float | None = None, settle_band_K: float = 0.01,
                         stability_window_s: float = 3 * 3600.0) -> ControlTrace:
    """Closed-loop run sampled every ``dt_s``; the controller runs at the same period."""
    if dt_s <= 0 or dt_s >= 0.1 * plant.time_constant_s:
        raise ValueError(f"dt {dt_s} s unstable for plant time constant {plant.time_constant_s:.1f} s")
    ctrl.dt_s = dt_s
    ctrl.out_max = min(ctrl.out_max, plant.heater_max_W)
    ctrl.reset()
    rng = np.random.default_rng(seed)
    n = int(round(duration_s / dt_s)) + 1
    t = np.arange(n) * dt_s
    T = np.empty(n)
    P = np.empty(n)
    T_now = plant.bath_T_K if T0_K is None else T0_K
    noise = rng.normal(0.0, plant.sensor_noise_K, n) if plant.sensor_noise_K > 0 else np.zeros(n)
    for i in range(n):
        p = ctrl.step(setpoint_K, T_now + noise[i])
        T[i] = T_now
        P[i] = p
        T_now = plant_step(T_now, p, dt_s, plant)
    return ControlTrace(t, T, P, setpoint_K, settle_band_K, min(stability_window_s, duration_s))


@dataclass(frozen=True)
class Ln2Budget:
    heater_W: float
    parasitic_W: float
    fill_kg: float = 15.0
    latent_heat_J_per_kg: float = LN2_LATENT_HEAT_J_PER_KG

    @property
    def evaporation_g_per_h(self) -> float:
        return (self.heater_W + self.parasitic_W) / self.latent_heat_J_per_kg * 3.6e6

    @property
    def endurance_h(self) -> float:
        return self.fill_kg * 1000 / self.evaporation_g_per_h

    def to_dict(self):
        return {"heater_W": self.heater_W, "parasitic_W": self.parasitic_W, "fill_kg": self.fill_kg,
                "evaporation_g_per_h": self.evaporation_g_per_h, "endurance_h": self.endurance_h}


def parasitic_from_evaporation(evaporation_g_per_h: float = 150.0, heater_W: float = 6.5,
                               latent_heat_J_per_kg: float = LN2_LATENT_HEAT_J_PER_KG) -> float:
    """Heat leak into the bath that, with the heater, boils off the given mass rate."""
    return evaporation_g_per_h / 3.6e6 * latent_heat_J_per_kg - heater_W


def evaporation_rate_g_per_h(plant: ThermalPlant, T_K: float, parasitic_W: float) -> float:
    return Ln2Budget(plant.steady_power(T_K), parasitic_W).evaporation_g_per_h


def default_controller() -> PidController:
    return PidController(kp=8.0, ki=0.02, kd=0.0)
