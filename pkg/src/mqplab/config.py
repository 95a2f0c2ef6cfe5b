"""Experiment configuration: a strict, human-editable TOML format.

Unknown keys are rejected; missing required keys are reported all at once.
Every run is reproducible from its resolved config echo plus the master seed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import (
    BatchelorKraichnan,
    FeedbackLaw,
    LinearSystem,
    OrnsteinUhlenbeck,
    ScalarWhite,
    Telegraph,
    ThermalNetwork,
    WhiteTensor,
    multi_zone_system,
    single_zone_reduction,
    single_zone_system,
    swimmer_system,
)

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message aggregates every detected problem."""


_MODEL_KEYS = {
    "swimmer": {"kind", "d", "D", "kappa", "convention"},
    "thermal_single": {"kind", "c0", "c1", "c_bar_o", "c_s", "T_bar", "T_o", "T_s",
                       "kappa", "D", "mode", "convention"},
    "thermal_multi": {"kind", "n_zones", "edges", "c_bar_o", "c_s", "kappa", "D_o",
                      "c_edge", "D_edge", "alpha", "beta", "T_o", "T_s", "T_bar"},
    "custom": {"kind", "drift", "additive_cov"},
}
_NOISE_KEYS = {"kind", "D", "convention", "amplitude", "corr_time", "sigma", "switch_rate", "cov"}
_FEEDBACK_KEYS = {"kind", "phi", "phis"}
_RUN_KEYS = {"dt", "horizon", "n_traj", "master_seed", "burn_in", "pool_stride",
             "record_stride", "reorth_interval", "scheme", "convention", "chunk_steps"}
_ANALYSIS_KEYS = {"q_list", "hill_k", "lyap_times", "cramer_method", "css_q",
                  "css_beta", "hjb_varsigma_f", "hjb_t_f", "hjb_t0", "hjb_n_steps"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {"model", "noise", "feedback", "run", "analysis", "output"}

_RUN_DEFAULTS = {
    "burn_in": 0.2,
    "pool_stride": 50,
    "record_stride": 1,
    "reorth_interval": 10,
    "scheme": "euler_maruyama",
    "master_seed": 0,
    "chunk_steps": 4096,
}
_ANALYSIS_DEFAULTS = {
    "q_list": [2.0],
    "cramer_method": "variance_gaussian",
    "lyap_times": [],
    "css_q": 2.0,
    "css_beta": 1.0,
    "hjb_varsigma_f": 0.0,
    "hjb_t_f": 0.0,
    "hjb_t0": -30.0,
    "hjb_n_steps": 10_000,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with defaults resolved."""

    model: dict
    noise: dict
    feedback: dict
    run: dict
    analysis: dict
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    def resolved(self) -> dict:
        return {"model": self.model, "noise": self.noise, "feedback": self.feedback,
                "run": self.run, "analysis": self.analysis, "output": self.output}


def _check_keys(errors, section, block, allowed, required):
    unknown = sorted(set(block) - allowed)
    if unknown:
        errors.append(f"[{section}] unknown keys: {', '.join(unknown)}")
    missing = sorted(k for k in required if k not in block)
    if missing:
        errors.append(f"[{section}] missing required keys: {', '.join(missing)}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    errors = []
    unknown_sections = sorted(set(raw) - _SECTIONS)
    if unknown_sections:
        errors.append(f"unknown sections: {', '.join(unknown_sections)}")

    model = dict(raw.get("model", {}))
    kind = model.get("kind")
    if kind not in _MODEL_KEYS:
        errors.append(f"[model] kind must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
        kind = None
    else:
        required = {
            "swimmer": {"d", "D", "kappa"},
            "thermal_single": {"kappa", "D"},
            "thermal_multi": {"n_zones", "c_bar_o", "c_s", "kappa", "D_o"},
            "custom": {"drift", "additive_cov"},
        }[kind]
        _check_keys(errors, "model", model, _MODEL_KEYS[kind], required)
        if kind == "thermal_single":
            has_direct = "c0" in model and "c1" in model
            has_physical = all(k in model for k in ("c_bar_o", "c_s", "T_bar", "T_o", "T_s"))
            if not (has_direct or has_physical):
                errors.append("[model] thermal_single needs (c0, c1) or "
                              "(c_bar_o, c_s, T_bar, T_o, T_s)")

    noise = dict(raw.get("noise", {}))
    if noise:
        _check_keys(errors, "noise", noise, _NOISE_KEYS, {"kind"})
        nk = noise.get("kind")
        if nk not in (None, "bk", "scalar_white", "white_tensor", "ou", "telegraph"):
            errors.append(f"[noise] unknown kind {nk!r}")

    feedback = dict(raw.get("feedback", {}))
    if feedback:
        _check_keys(errors, "feedback", feedback, _FEEDBACK_KEYS, {"kind"})
        fk = feedback.get("kind")
        if fk not in (None, "radial", "matrix", "sweep", "optimize"):
            errors.append(f"[feedback] unknown kind {fk!r}")
        if fk == "radial" and "phi" not in feedback:
            errors.append("[feedback] radial feedback needs phi")
        if fk == "matrix" and "phi" not in feedback:
            errors.append("[feedback] matrix feedback needs phi (a nested list)")
        if fk == "sweep" and "phis" not in feedback:
            errors.append("[feedback] sweep needs phis (a list of gains)")
    else:
        feedback = {"kind": "radial", "phi": 0.0}

    run = dict(raw.get("run", {}))
    _check_keys(errors, "run", run, _RUN_KEYS, {"dt", "horizon", "n_traj"})
    for key, val in _RUN_DEFAULTS.items():
        run.setdefault(key, val)
    if "dt" in run and "horizon" in run:
        if not (isinstance(run["dt"], (int, float)) and run["dt"] > 0):
            errors.append("[run] dt must be a positive number")
        elif run["dt"] >= run.get("horizon", float("inf")):
            errors.append("[run] dt must be smaller than horizon")
    if not (0.0 <= float(run.get("burn_in", 0.2)) < 1.0):
        errors.append("[run] burn_in fraction must be in [0, 1)")
    if "n_traj" in run and (not isinstance(run["n_traj"], int) or run["n_traj"] < 1):
        errors.append("[run] n_traj must be a positive integer")

    analysis = dict(raw.get("analysis", {}))
    _check_keys(errors, "analysis", analysis, _ANALYSIS_KEYS, set())
    for key, val in _ANALYSIS_DEFAULTS.items():
        analysis.setdefault(key, val)

    output = dict(raw.get("output", {}))
    _check_keys(errors, "output", output, _OUTPUT_KEYS, set())
    output.setdefault("dir", "out")

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return ExperimentConfig(model=model, noise=noise, feedback=feedback,
                            run=run, analysis=analysis, output=output, raw=raw)


# ---------------------------------------------------------------------------
# assembly into domain objects
# ---------------------------------------------------------------------------

def build_noise(cfg: ExperimentConfig, dim: int):
    n = cfg.noise
    if not n:
        return None
    kind = n["kind"]
    conv = n.get("convention")
    if kind == "bk":
        return BatchelorKraichnan(D=float(n["D"]), convention=conv or "stratonovich")
    if kind == "scalar_white":
        return ScalarWhite(D=float(n["D"]), convention=conv or "kinetic")
    if kind == "white_tensor":
        return WhiteTensor(cov=np.asarray(n["cov"], dtype=float),
                           convention=conv or "stratonovich")
    if kind == "ou":
        amp = np.asarray(n["amplitude"], dtype=float)
        if amp.ndim == 0:
            amp = amp.reshape(1, 1)
        return OrnsteinUhlenbeck(amplitude=amp, corr_time=float(n["corr_time"]))
    sig = np.asarray(n["sigma"], dtype=float)
    if sig.ndim == 0:
        sig = sig.reshape(1, 1)
    return Telegraph(sigma_plus=sig, sigma_minus=-sig, switch_rate=float(n["switch_rate"]))


def build_model(cfg: ExperimentConfig):
    """Returns (system factory phi -> LinearSystem, metadata dict).

    The factory bakes radial feedback into the system for the thermal families
    (where the gain acts through the supply channel); for swimmers and custom
    models the gain is passed separately to the integrator.
    """
    m = cfg.model
    kind = m["kind"]
    if kind == "swimmer":
        sys0 = swimmer_system(int(m["d"]), float(m["D"]), float(m["kappa"]),
                              convention=m.get("convention", "stratonovich"))
        meta = {"family": "swimmer", "d": int(m["d"]), "D": float(m["D"]),
                "kappa": float(m["kappa"])}
        return (lambda phi: (sys0, FeedbackLaw.radial(phi))), meta
    if kind == "thermal_single":
        kappa, D = float(m["kappa"]), float(m["D"])
        if "c0" in m:
            c0, c1 = float(m["c0"]), float(m["c1"])
            red = None
            kap_t = kappa
        else:
            red = single_zone_reduction(float(m["T_bar"]), float(m["T_o"]), float(m["T_s"]),
                                        float(m["c_bar_o"]), float(m["c_s"]),
                                        kappa=kappa, D=D)
            c0, c1, kap_t = red.c0, red.c1, red.kappa_tilde
        conv = m.get("convention", "kinetic")
        mode = m.get("mode", "paper")
        meta = {"family": "thermal_single", "c0": c0, "c1": c1, "D": D,
                "kappa": kap_t, "convention": conv}

        def factory(phi):
            c = c0 + c1 * phi
            sys = LinearSystem(dim=1, drift=np.array([[-c]]),
                               additive_cov=np.array([kap_t]),
                               mult_noise=ScalarWhite(D=D, convention=conv) if D > 0 else None)
            return sys, None

        return factory, meta
    if kind == "thermal_multi":
        edges = [tuple(e) for e in m.get("edges", [])]
        net = ThermalNetwork.uniform(
            int(m["n_zones"]), edges,
            c_bar_o=float(m["c_bar_o"]), c_s=float(m["c_s"]), kappa=float(m["kappa"]),
            D_o=float(m["D_o"]), c_edge=float(m.get("c_edge", 0.0)),
            D_edge=float(m.get("D_edge", 0.0)), alpha=float(m.get("alpha", 1.0)),
            beta=float(m.get("beta", 1.0)), T_o=float(m.get("T_o", 30.0)),
            T_s=float(m.get("T_s", 10.0)), T_bar=float(m.get("T_bar", 22.0)))
        meta = {"family": "thermal_multi", "net": net}

        def factory(phi):
            n = net.n_zones
            phi_m = np.asarray(phi, dtype=float)
            if phi_m.ndim == 0:
                phi_m = float(phi_m) * np.eye(n)
            fb = FeedbackLaw.matrix(phi_m)
            return multi_zone_system(net, fb), None

        return factory, meta
    drift = np.asarray(m["drift"], dtype=float)
    add = np.asarray(m["additive_cov"], dtype=float)
    d = drift.shape[0]

    def factory(phi):
        sys = LinearSystem(dim=d, drift=drift, additive_cov=add,
                           mult_noise=build_noise(cfg, d))
        fb = FeedbackLaw.radial(phi) if np.ndim(phi) == 0 else FeedbackLaw.matrix(phi)
        return sys, fb

    return factory, {"family": "custom", "dim": d}
