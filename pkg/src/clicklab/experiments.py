"""End-to-end pipelines behind the command-line tool.

Each ``run_*`` function takes a parsed config document and returns a
:class:`Outcome`: a JSON-ready report plus named artifacts (histograms, tag
runs, traces) for the caller to write. Every ``auto`` setting is resolved
and recorded under ``report["resolved"]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, filters, metrics, pairs, simkit, thermo
from .configfile import ConfigDoc, ConfigError
from .metrics import Histogram, Measured
from .timetag import ChannelStream, TagRun

S_TO_PS = 10**12


@dataclass
class Outcome:
    report: dict
    histograms: dict[str, Histogram] = field(default_factory=dict)
    runs: dict[str, TagRun] = field(default_factory=dict)
    traces: dict[str, str] = field(default_factory=dict)


class PreconditionError(ValueError):
    """Analysis cannot proceed on the given data (exit code 3)."""


def _is_auto(doc, key):
    return str(doc.get(key, "auto")).lower() == "auto"


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _labels(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _m(x: Measured) -> dict:
    return {"value": x.value, "error": x.error}


def _seeds(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


def _base_report(command, doc, seed):
    return {"command": command, "version": __version__, "seed": seed,
            "config": dict(doc.values), "config_source": doc.source, "resolved": {}}


def _load_detector(doc: ConfigDoc, key: str):
    ref = doc.get(key)
    if ref is None or ref.lower() == "none":
        return None
    base = Path(doc.source).parent if doc.source and doc.source != "<string>" else None
    return simkit.DetectorModel.load(ref, base)


def _duration_ps(doc) -> int:
    return int(round(doc.require("duration_s", float) * S_TO_PS))


# ---------------------------------------------------------------------------
# simulate


def run_simulate(doc: ConfigDoc, seed: int) -> Outcome:
    source = doc.require("source").lower()
    T = _duration_ps(doc)
    rep = _base_report("simulate", doc, seed)
    s_src, s_a, s_b = _seeds(seed, 3)
    temp = doc.get("temperature_C", -80.0, float)
    runs = {}

    if source == "dark-only":
        det = _load_detector(doc, "detector")
        if det is None:
            rate = doc.require("dark_rate_Hz", float)
            stream = simkit.simulate_poisson_clicks(rate, T, s_src, channel=doc.get("channel", 1, int))
        else:
            empty = ChannelStream(doc.get("channel", 1, int), np.empty(0, np.int64), T)
            stream = simkit.detect(empty, det, temp, doc.get("wavelength_nm", 1560.0, float), doc.get("bias"), T, s_a)
        runs["dark"] = TagRun.from_streams(stream)
    elif source == "cw":
        src = simkit.CwSourceModel(doc.require("power_W", float), doc.get("wavelength_nm", 1560.0, float),
                                   doc.get("attenuation_mu", 4.7e-12, float))
        photons = simkit.photon_arrivals_cw(src, T, s_src, channel=doc.get("channel", 1, int))
        det = _load_detector(doc, "detector")
        stream = photons if det is None else simkit.detect(photons, det, temp, src.wavelength_nm, doc.get("bias"), T, s_a)
        runs["cw"] = TagRun.from_streams(stream)
        rep["resolved"]["photon_rate_Hz"] = src.photon_rate
    elif source == "pdc":
        src = simkit.PdcSourceModel.from_config(doc)
        sync, sig, idl = simkit.simulate_pdc(src, T, s_src)
        det_s, det_i = _load_detector(doc, "detector_signal"), _load_detector(doc, "detector_idler")
        if det_s is not None:
            sig = simkit.detect(sig, det_s, temp, src.wavelength_nm, doc.get("bias_signal"), T, s_a)
        if det_i is not None:
            idl = simkit.detect(idl, det_i, temp, src.wavelength_nm, doc.get("bias_idler"), T, s_b)
        runs.update(sync=TagRun.from_streams(sync), signal=TagRun.from_streams(sig), idler=TagRun.from_streams(idl))
    else:
        raise ConfigError(f"unknown source {source!r}; expected cw, pdc or dark-only")

    for name, run in runs.items():
        run.metadata.update(source=source, seed=str(seed), temperature_C=str(temp), stream=name)
    rep["results"] = {name: {ch: {"count": len(s), "rate_Hz": s.rate} for ch, s in run.streams.items()}
                      for name, run in runs.items()}
    return Outcome(rep, runs=runs)


# ---------------------------------------------------------------------------
# characterize


def characterize_point(det: simkit.DetectorModel, temperature_C: float, bias: str | None, src: simkit.CwSourceModel,
                       T: int, seed, block: int | None = None, residual_target: float = 0.1,
                       hist_bin_ps: int = 100_000, hist_max_delay_ps: int | None = None,
                       mu_rel_err: float = metrics.MU_REL_ERR) -> tuple[dict, Histogram]:
    """Dark run + CW run at one operating point, analysed like the single-detector measurement."""
    s_dark, s_photons, s_light = _seeds(seed, 3)
    empty = ChannelStream(1, np.empty(0, np.int64), T)
    dark = simkit.detect(empty, det, temperature_C, src.wavelength_nm, bias, T, s_dark)
    if len(dark) < 2:
        raise PreconditionError("dark run has fewer than two clicks; lengthen duration_s")
    raw_rate = dark.rate
    window = metrics.afterpulse_window(raw_rate)
    max_delay = hist_max_delay_ps or window
    h = metrics.inter_event_histogram(dark, hist_bin_ps, max_delay)
    chosen = metrics.choose_blocking_time(h, residual_target)
    auto = block is None
    if auto:
        block = max(chosen, det.dead_time_ps)
    dark_blocked = filters.blocking_filter(dark, block)

    photons = simkit.photon_arrivals_cw(src, T, s_photons, channel=1)
    light = simkit.detect(photons, det, temperature_C, src.wavelength_nm, bias, T, s_light)
    light_blocked = filters.blocking_filter(light, block)

    R = metrics.count_rate(light_blocked)
    D = metrics.count_rate(dark_blocked)
    eff = metrics.detector_efficiency(metrics.EfficiencyInput(
        R.value, D.value, block, src.power_W, src.attenuation_mu, src.wavelength_nm, R.error, D.error, mu_rel_err))
    nep_val = metrics.nep(eff.value, D.value, src.wavelength_nm) if eff.value > 0 else None
    nep_err = nep_val * math.hypot(eff.error / eff.value, 0.5 * D.error / D.value) if nep_val and D.value else None

    ap_raw = metrics.afterpulse_probability(dark, window)
    ap_raw_x = metrics.afterpulse_excess(dark, window)
    ap_blk = metrics.afterpulse_probability(dark_blocked, window) if len(dark_blocked) else None
    ap_blk_x = metrics.afterpulse_excess(dark_blocked, window) if len(dark_blocked) else None
    point = {
        "temperature_C": temperature_C, "bias": bias, "wavelength_nm": src.wavelength_nm,
        "raw_dark_rate_Hz": raw_rate, "afterpulse_window_ps": window,
        "histogram_max_delay_ps": int(max_delay),
        "blocking_ps": int(block), "blocking_auto": auto, "blocking_suggested_ps": int(chosen),
        "afterpulse_raw": ap_raw.probability, "afterpulse_raw_err": ap_raw.error,
        "afterpulse_raw_excess": ap_raw_x.probability,
        "afterpulse_blocked": ap_blk.probability if ap_blk else None,
        "afterpulse_blocked_err": ap_blk.error if ap_blk else None,
        "afterpulse_blocked_excess": ap_blk_x.probability if ap_blk_x else None,
        "R_det_Hz": _m(R), "D_Hz": _m(D), "efficiency": _m(eff),
        "nep_W_per_rtHz": nep_val, "nep_err": nep_err,
        "true_efficiency": det.efficiency(temperature_C, src.wavelength_nm, bias),
    }
    return point, h


def run_characterize(doc: ConfigDoc, seed: int) -> Outcome:
    det = _load_detector(doc, "detector")
    if det is None:
        raise ConfigError("characterize needs a detector model")
    src = simkit.CwSourceModel(doc.get("power_W", 1e-3, float), doc.get("wavelength_nm", 1560.0, float),
                               doc.get("attenuation_mu", 4.7e-12, float))
    T = _duration_ps(doc)
    temps = _floats(doc.get("sweep_temperature_C", doc.get("temperature_C", "-60")))
    biases = _labels(doc.get("sweep_bias", doc.get("bias", ""))) or [None]
    block = None if _is_auto(doc, "blocking_us") else int(round(doc.get("blocking_us", conv=float) * 1e6))
    max_delay = None if _is_auto(doc, "hist_max_delay_us") else int(round(doc.get("hist_max_delay_us", conv=float) * 1e6))
    residual = doc.get("residual_target", 0.1, float)
    bin_ps = doc.get("hist_bin_ps", 100_000, int)
    mu_rel = doc.get("mu_rel_err", metrics.MU_REL_ERR, float)

    rep = _base_report("characterize", doc, seed)
    rep["resolved"].update(residual_target=residual, photon_rate_Hz=src.photon_rate,
                           blocking="auto" if block is None else block)
    points, hists = [], {}
    seeds = _seeds(seed, len(temps) * len(biases))
    k = 0
    for temp in temps:
        for bias in biases:
            try:
                point, h = characterize_point(det, temp, bias, src, T, seeds[k], block, residual, bin_ps, max_delay,
                                              mu_rel)
            except simkit.ModelRangeError as e:
                raise PreconditionError(str(e)) from None
            k += 1
            points.append(point)
            hists[f"interevent_T{temp:g}_{bias}"] = h
    rep["results"] = {"points": points}
    return Outcome(rep, histograms=hists)


# ---------------------------------------------------------------------------
# pdc


def _gate_period(doc, src) -> float | None:
    p = str(doc.get("gate_period", "pulse")).lower()
    if p == "pulse":
        return src.pulse_period_ps
    if p in ("none", "sync"):
        return None
    return float(p)


def analyze_pdc(sync: ChannelStream, sig: ChannelStream, idl: ChannelStream, rep_rate_Hz: float, *,
                block_ps: int = 5_000_000, gate_width_ps: int | None = 1300, gate_period_ps: float | None = None,
                gate_offsets: tuple | None = None, window_ps: int = 1300, offset_ps: int | None = None,
                hist_bin_ps: int = 100, xcorr_range_ps: int | None = None) -> tuple[dict, dict]:
    """Blocking, gating, coincidences, accidentals, CAR and Klyshko for one signal/idler run.

    ``gate_width_ps=None`` switches gating off.
    """
    res, hists = {}, {}
    res["raw_singles_Hz"] = {"signal": _m(metrics.count_rate(sig)), "idler": _m(metrics.count_rate(idl))}
    sig_b, idl_b = filters.blocking_filter(sig, block_ps), filters.blocking_filter(idl, block_ps)
    res["blocked_singles_Hz"] = {"signal": _m(metrics.count_rate(sig_b)), "idler": _m(metrics.count_rate(idl_b))}

    resolved = {"blocking_ps": int(block_ps)}
    if gate_width_ps is not None:
        if len(sync) == 0:
            raise PreconditionError("gating needs sync tags")
        offsets = []
        for name, s in (("signal", sig_b), ("idler", idl_b)):
            h = metrics.sync_histogram(s, sync, hist_bin_ps, period_ps=gate_period_ps)
            hists[f"sync_{name}_blocked"] = h
            hists[f"sync_{name}_raw"] = metrics.sync_histogram(sig if name == "signal" else idl, sync, hist_bin_ps,
                                                                period_ps=gate_period_ps)
            if gate_offsets is None:
                if h.counts.sum() == 0:
                    raise PreconditionError(f"no {name} clicks to locate the gate")
                offsets.append(metrics.suggest_offset(h, gate_period_ps))
        if gate_offsets is not None:
            offsets = list(gate_offsets)
        gates = [filters.GateConfig(int(o), int(gate_width_ps), gate_period_ps) for o in offsets]
        resolved.update(gate_offset_signal_ps=offsets[0], gate_offset_idler_ps=offsets[1],
                        gate_width_ps=int(gate_width_ps), gate_period_ps=gate_period_ps)
        sig_g, idl_g = filters.time_gate(sig, sync, gates[0]), filters.time_gate(idl, sync, gates[1])
        sig_bg, idl_bg = filters.time_gate(sig_b, sync, gates[0]), filters.time_gate(idl_b, sync, gates[1])
    else:
        resolved["gate"] = "off"
        sig_g, idl_g, sig_bg, idl_bg = sig, idl, sig_b, idl_b
    res["gated_singles_Hz"] = {"signal": _m(metrics.count_rate(sig_g)), "idler": _m(metrics.count_rate(idl_g))}
    Ns, Ni = metrics.count_rate(sig_bg), metrics.count_rate(idl_bg)
    res["singles_Hz"] = {"signal": _m(Ns), "idler": _m(Ni)}

    xr = xcorr_range_ps or int(2 * 1e12 / rep_rate_Hz)
    hx = pairs.cross_correlation_histogram(sig, idl, hist_bin_ps, xr)
    hists["xcorr_raw"] = hx
    hists["xcorr_blocked_gated"] = pairs.cross_correlation_histogram(sig_bg, idl_bg, hist_bin_ps, xr)
    if offset_ps is None:
        if hx.counts.sum() == 0:
            raise PreconditionError("no signal/idler pairs to locate the coincidence peak")
        offset_ps = pairs.peak_offset(hx)
    resolved.update(coincidence_offset_ps=int(offset_ps), coincidence_window_ps=int(window_ps))

    coinc = {}
    for label, (a, b) in {"raw": (sig, idl), "gated": (sig_g, idl_g), "blocked_gated": (sig_bg, idl_bg)}.items():
        matched = pairs.count_coincidences(a, b, offset_ps, window_ps)
        every = pairs.count_pairs_in_window(a, b, offset_ps, window_ps)
        coinc[label] = {"matched": matched.to_dict(), "histogram_pairs": every.to_dict()}
    res["coincidences"] = coinc

    C = pairs.count_coincidences(sig_bg, idl_bg, offset_ps, window_ps).rate
    A = pairs.accidental_measured(Ns, Ni, rep_rate_Hz)
    res["accidentals_Hz"] = _m(A)
    res["car"] = _m(pairs.car(C.value, A.value, C.error, A.error)) if A.value > 0 else None
    if Ns.value > 0 and Ni.value > 0:
        res["klyshko"] = pairs.klyshko(C.value, A.value, Ns.value, Ni.value, C.error, A.error, Ns.error,
                                       Ni.error).to_dict()
    else:
        res["klyshko"] = None

    ap = {}
    for name, s in (("signal", sig_bg), ("idler", idl_bg)):
        if len(s) > 1:
            w = metrics.afterpulse_window(s.rate)
            est, exc = metrics.afterpulse_probability(s, w), metrics.afterpulse_excess(s, w)
            ap[name] = {"window_ps": w, "probability": est.probability, "error": est.error,
                        "excess": exc.probability}
    res["afterpulse_blocked_gated"] = ap
    res["resolved"] = resolved
    return res, hists


def run_pdc(doc: ConfigDoc, seed: int) -> Outcome:
    src = simkit.PdcSourceModel.from_config(doc)
    T = _duration_ps(doc)
    temp = doc.get("temperature_C", -80.0, float)
    det_s, det_i = _load_detector(doc, "detector_signal"), _load_detector(doc, "detector_idler")
    s_src, s_a, s_b = _seeds(seed, 3)
    sync, sig_ph, idl_ph = simkit.simulate_pdc(src, T, s_src)
    try:
        sig = sig_ph if det_s is None else simkit.detect(sig_ph, det_s, temp, src.wavelength_nm,
                                                         doc.get("bias_signal"), T, s_a)
        idl = idl_ph if det_i is None else simkit.detect(idl_ph, det_i, temp, src.wavelength_nm,
                                                         doc.get("bias_idler"), T, s_b)
    except simkit.ModelRangeError as e:
        raise PreconditionError(str(e)) from None

    gate = str(doc.get("gate_width_ps", "1300")).lower()
    offsets = None
    if not (_is_auto(doc, "gate_offset_signal_ps") and _is_auto(doc, "gate_offset_idler_ps")):
        offsets = (doc.require("gate_offset_signal_ps", int), doc.require("gate_offset_idler_ps", int))
    res, hists = analyze_pdc(
        sync, sig, idl, src.rep_rate_Hz,
        block_ps=int(round(doc.get("blocking_us", 5.0, float) * 1e6)),
        gate_width_ps=None if gate == "off" else int(float(gate)),
        gate_period_ps=_gate_period(doc, src),
        gate_offsets=offsets,
        window_ps=doc.get("coincidence_window_ps", 1300, int),
        offset_ps=None if _is_auto(doc, "coincidence_offset_ps") else doc.get("coincidence_offset_ps", conv=int),
        hist_bin_ps=doc.get("hist_bin_ps", 100, int),
    )
    rep = _base_report("pdc", doc, seed)
    rep["resolved"].update(res.pop("resolved"))
    rep["resolved"]["pulse_period_ps"] = src.pulse_period_ps
    rep["results"] = res
    rep["results"]["sync_count"] = len(sync)
    rep["results"]["photons_at_detectors"] = {"signal": len(sig_ph), "idler": len(idl_ph)}
    return Outcome(rep, histograms=hists)


# ---------------------------------------------------------------------------
# thermo


def run_thermo(doc: ConfigDoc, seed: int) -> Outcome:
    anchor_W = doc.get("anchor_power_W", 6.5, float)
    anchor_K = doc.get("anchor_temperature_C", -80.0, float) + thermo.ZERO_C_K
    G = doc.get("conductance_W_per_K", None, float) or thermo.conductance_from_anchor(anchor_W, anchor_K)
    plant = thermo.ThermalPlant(
        heat_capacity_J_per_K=doc.get("heat_capacity_J_per_K", 500.0, float),
        conductance_W_per_K=G,
        heater_max_W=doc.get("heater_max_W", 20.0, float),
        sensor_noise_K=doc.get("sensor_noise_K", 0.0, float),
    )
    ctrl = thermo.PidController(kp=doc.get("kp", 8.0, float), ki=doc.get("ki", 0.02, float),
                                kd=doc.get("kd", 0.0, float), out_max=plant.heater_max_W)
    setpoint = doc.get("setpoint_C", -80.0, float) + thermo.ZERO_C_K
    T0 = doc.get("T0_K", None, float)
    try:
        trace = thermo.simulate_control_run(plant, ctrl, setpoint, doc.get("duration_h", 12.0, float) * 3600,
                                            doc.get("dt_s", 1.0, float), seed, T0,
                                            settle_band_K=doc.get("settle_band_K", 0.01, float),
                                            stability_window_s=doc.get("stability_window_h", 3.0, float) * 3600)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    parasitic = doc.get("parasitic_W", None, float)
    if parasitic is None:
        parasitic = thermo.parasitic_from_evaporation(doc.get("anchor_evaporation_g_per_h", 150.0, float), anchor_W)
    budget = thermo.Ln2Budget(trace.mean_power_W, parasitic, doc.get("fill_kg", 15.0, float))
    rep = _base_report("thermo", doc, seed)
    rep["resolved"].update(conductance_W_per_K=G, parasitic_W=parasitic, setpoint_K=setpoint)
    rep["results"] = {"control": trace.summary(), "ln2": budget.to_dict()}
    return Outcome(rep, traces={"trace": trace.to_csv()})
