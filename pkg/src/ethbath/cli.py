"""Experiment runner: `ethbath <kind> --config file.json [--out DIR] ...`.

Each invocation executes one experiment kind end to end, writes its CSV/JSON
outputs into the output directory, and emits a run manifest listing every
produced file with its content hash. Reruns with the same config and seed
produce byte-identical CSV bodies.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, dynamics, eth, spectra, states, thermo
from .hamiltonian import (
    CouplingSpec,
    SpinChainParams,
    SystemParams,
    build_bath_hamiltonian,
    build_total_hamiltonian,
    model_spec_key,
    pauli_site_operator,
)

KINDS = (
    "eth-stats", "thermo", "rates", "bcf", "dynamics",
    "scaling", "levelstats", "typicality", "multi-op-rates", "validate",
)

DEFAULT_FREQ_BIN = {"chaotic": 0.05, "integrable": 0.4}
DEFAULT_WINDOW = 0.3


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Wraps a module failure with the name of the pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class ExperimentConfig:
    kind: str
    system: SystemParams
    bath: SpinChainParams
    preset: str | None
    coupling: CouplingSpec
    state: dict
    grid: dynamics.TimeGrid
    eth_opts: dict
    extra: dict
    seed: int
    out_dir: str
    cache_dir: str | None
    raw: dict = field(repr=False, default_factory=dict)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def parse_config(kind: str, raw: dict, out_dir: str, cache_dir: str | None, seed: int | None) -> ExperimentConfig:
    _require(kind in KINDS, f"unknown experiment kind {kind!r}")
    _require(isinstance(raw, dict), "config root must be a JSON object")

    sys_cfg = raw.get("system", {})
    try:
        system = SystemParams(omega0=float(sys_cfg.get("omega0", 1.525)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from exc

    bath_cfg = raw.get("bath", {})
    _require("L" in bath_cfg, "bath.L is required")
    preset = bath_cfg.get("preset")
    try:
        L = int(bath_cfg["L"])
        if preset is not None:
            _require(preset in ("chaotic", "integrable"), f"unknown bath preset {preset!r}")
            bath = (SpinChainParams.chaotic if preset == "chaotic" else SpinChainParams.integrable)(L)
        else:
            bath = SpinChainParams(
                L=L, J=float(bath_cfg["J"]), h_z=float(bath_cfg["hz"]),
                h_x=float(bath_cfg["hx"]), h_1=float(bath_cfg["h1"]),
                h_L=float(bath_cfg["hL"]),
            )
    except KeyError as exc:
        raise ConfigError(f"bath: missing coupling {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bath: {exc}") from exc

    c_cfg = raw.get("coupling", {})
    try:
        terms = tuple(
            (str(t[0]), int(t[1]), str(t[2])) for t in c_cfg.get("terms", [["x", 1, "x"]])
        )
        coupling = CouplingSpec(kappa=float(c_cfg.get("kappa", 0.15)), terms=terms)
        coupling.validate_sites(bath.L)
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"coupling: {exc}") from exc

    state = dict(raw.get("state", {}))
    state.setdefault("kind", "eigenstate")
    _require(
        state["kind"] in ("eigenstate", "typical_mc", "product"),
        f"unknown state kind {state['kind']!r}",
    )
    state.setdefault("deltaE", 0.3)

    g_cfg = raw.get("grid", {})
    try:
        grid = dynamics.TimeGrid(
            t_max=float(g_cfg.get("t_max", 100.0)), dt=float(g_cfg.get("dt", 0.25))
        )
    except (TypeError, ValueError, dynamics.GridError) as exc:
        raise ConfigError(f"grid: {exc}") from exc

    eth_opts = dict(raw.get("eth", {}))
    eth_opts.setdefault("window", DEFAULT_WINDOW)
    eth_opts.setdefault(
        "freq_bin", DEFAULT_FREQ_BIN["integrable" if preset == "integrable" else "chaotic"]
    )
    eth_opts.setdefault("min_states", 100)

    if seed is None:
        seed = int(raw.get("seed", 0))
    if cache_dir is None:
        cache_dir = raw.get("cache_dir") or os.environ.get("ETHBATH_CACHE")

    return ExperimentConfig(
        kind=kind, system=system, bath=bath, preset=preset, coupling=coupling,
        state=state, grid=grid, eth_opts=eth_opts, extra=raw, seed=seed,
        out_dir=out_dir, cache_dir=cache_dir, raw=raw,
    )


# -- shared pipeline pieces ----------------------------------------------------


def _bath_eigensystem(cfg: ExperimentConfig) -> spectra.EigenSystem:
    key = model_spec_key(cfg.system, cfg.bath, None) + "#bath"
    h = build_bath_hamiltonian(cfg.bath)
    return spectra.cached_diagonalize(h, cfg.cache_dir, key)


def _total_eigensystem(cfg: ExperimentConfig) -> spectra.EigenSystem:
    key = model_spec_key(cfg.system, cfg.bath, cfg.coupling) + "#total"
    h = build_total_hamiltonian(cfg.system, cfg.bath, cfg.coupling)
    return spectra.cached_diagonalize(h, cfg.cache_dir, key)


def _entropy_fit(eig: spectra.EigenSystem) -> thermo.EntropyFit:
    return thermo.entropy_fit(thermo.density_of_states(eig), degree=2)


def _target_energy(cfg: ExperimentConfig, eig: spectra.EigenSystem, fit: thermo.EntropyFit) -> float:
    """Energy of the requested bath preparation: explicit E or via beta."""
    if "E" in cfg.state:
        return float(cfg.state["E"])
    beta = float(cfg.state.get("beta", 0.0))
    return thermo.energy_at_beta(fit, beta)


def _prepare_bath_state(
    cfg: ExperimentConfig, eig: spectra.EigenSystem, e_target: float
) -> states.PureState:
    kind = cfg.state["kind"]
    if kind == "eigenstate":
        return states.eigenstate_preparation(eig, e_target)
    if kind == "typical_mc":
        return states.typical_microcanonical_state(
            eig, e_target, float(cfg.state["deltaE"]), int(cfg.state.get("seed", cfg.seed))
        )
    return states.product_state_with_energy(cfg.bath, e_target)


def _bath_coupling_operator(cfg: ExperimentConfig) -> np.ndarray:
    _, site, axis = cfg.coupling.terms[0]
    return pauli_site_operator(cfg.bath.L, site, axis).matrix


def _spectral_table(
    cfg: ExperimentConfig,
    eig: spectra.EigenSystem,
    b_eig: np.ndarray,
    e_target: float,
    beta: float,
) -> eth.SpectralFunctionTable:
    table = eth.spectral_function(
        b_eig, eig, e_target,
        window=float(cfg.eth_opts["window"]),
        freq_bin=float(cfg.eth_opts["freq_bin"]),
        min_states=int(cfg.eth_opts["min_states"]),
    )
    n = states.nearest_eigenstate_index(eig, e_target)
    var_b = float(np.sum(np.abs(b_eig[n, :]) ** 2) - np.real(b_eig[n, n]) ** 2)
    return eth.normalize_spectral_function(table, var_b, beta)


def _state_beta(cfg: ExperimentConfig, fit: thermo.EntropyFit, e_target: float) -> float:
    if "E" in cfg.state:
        return thermo.inverse_temperature(fit, e_target)
    return float(cfg.state.get("beta", 0.0))


# -- output helpers ------------------------------------------------------------


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- experiment kinds ------------------------------------------------------------


def _run_eth_stats(cfg: ExperimentConfig, out: str) -> list[str]:
    eig = _bath_eigensystem(cfg)
    b_eig = spectra.to_eigenbasis(_bath_coupling_operator(cfg), eig)
    profile = eth.diagonal_profile(b_eig, eig)
    fit = _entropy_fit(eig)
    e0 = _target_energy(cfg, eig, fit)
    beta = _state_beta(cfg, fit, e0)
    table = _spectral_table(cfg, eig, b_eig, e0, beta)

    diag_path = os.path.join(out, "diagonals.csv")
    _write_csv(diag_path, "E,Bnn", zip(profile.energies, profile.values))
    spec_path = os.path.join(out, "specfun.csv")
    mask = table.filled
    _write_csv(
        spec_path, "omega,f2,count",
        zip(table.omegas[mask], table.values[mask], table.counts[mask]),
    )
    summary_path = os.path.join(out, "summary.json")
    _write_json(summary_path, {
        "fluctuation": profile.fluctuation,
        "n_window_states": table.n_states,
        "normalization": table.normalization,
        "e0": e0,
        "beta": beta,
    })
    return [diag_path, spec_path, summary_path]


def _run_thermo(cfg: ExperimentConfig, out: str) -> list[str]:
    eig = _bath_eigensystem(cfg)
    dos = thermo.density_of_states(eig)
    fit = thermo.entropy_fit(dos, degree=int(cfg.extra.get("thermo", {}).get("degree", 2)))
    rows = []
    for center, count in zip(dos.centers, dos.counts):
        if count == 0 or not (fit.e_lo <= center <= fit.e_hi):
            continue
        beta = thermo.inverse_temperature(fit, center)
        try:
            capacity = thermo.heat_capacity(fit, center)
        except ValueError:
            capacity = math.nan
        try:
            beta_can = thermo.canonical_inverse_temperature(eig, center)
        except ValueError:
            beta_can = math.nan
        rows.append((center, fit.entropy(center), beta, capacity, beta_can))
    path = os.path.join(out, "thermo.csv")
    _write_csv(path, "E,S,beta,C,beta_canonical", rows)
    return [path]


def _run_rates(cfg: ExperimentConfig, out: str) -> list[str]:
    eig = _bath_eigensystem(cfg)
    b_eig = spectra.to_eigenbasis(_bath_coupling_operator(cfg), eig)
    fit = _entropy_fit(eig)
    e0 = _target_energy(cfg, eig, fit)
    beta = _state_beta(cfg, fit, e0)
    table = _spectral_table(cfg, eig, b_eig, e0, beta)
    kappa = cfg.coupling.kappa

    capacity = None
    deriv = None
    try:
        capacity = thermo.heat_capacity(fit, e0)
        if math.isfinite(capacity) and capacity > 0:
            deriv = eth.spectral_function_energy_derivative(
                b_eig, eig, table, delta_e=table.window,
                min_states=int(cfg.eth_opts["min_states"]),
            )
    except (ValueError, eth.WindowError):
        capacity = None

    rows = []
    mask = table.filled
    for omega in table.omegas[mask]:
        gamma = eth.transition_rate(table, kappa, beta, float(omega))
        if deriv is not None and capacity is not None and deriv.omegas[0] <= omega <= deriv.omegas[-1]:
            gamma_fs = eth.finite_size_transition_rate(
                table, deriv, kappa, beta, capacity, float(omega)
            )
        else:
            gamma_fs = math.nan
        rows.append((float(omega), gamma, gamma_fs))
    path = os.path.join(out, "rates.csv")
    _write_csv(path, "omega,gamma,gamma_fs", rows)
    return [path]


def _run_bcf(cfg: ExperimentConfig, out: str) -> list[str]:
    eig = _bath_eigensystem(cfg)
    b_eig = spectra.to_eigenbasis(_bath_coupling_operator(cfg), eig)
    fit = _entropy_fit(eig)
    e0 = _target_energy(cfg, eig, fit)
    psi = _prepare_bath_state(cfg, eig, e0)
    bcf = dynamics.bath_correlation_function(
        eig, b_eig, psi, cfg.grid, preparation=cfg.state["kind"]
    )
    path = os.path.join(out, "bcf.csv")
    _write_csv(
        path, "tau,re_C,im_C",
        zip(bcf.times, bcf.values.real, bcf.values.imag),
    )
    summary = {"variance_at_zero": bcf.variance_at_zero, "preparation": bcf.preparation}
    try:
        beta = _state_beta(cfg, fit, e0)
        table = _spectral_table(cfg, eig, b_eig, e0, beta)
        recon = dynamics.bcf_from_spectral_function(table, beta, cfg.grid)
        summary["max_reconstruction_error"] = float(
            np.max(np.abs(recon.values - bcf.values))
        )
    except (eth.WindowError, ValueError):
        summary["max_reconstruction_error"] = None
    spath = os.path.join(out, "summary.json")
    _write_json(spath, summary)
    return [path, spath]


def _lindblad_for(
    cfg: ExperimentConfig,
    bath_eig: spectra.EigenSystem,
    b_eig: np.ndarray,
    e0: float,
    beta: float,
    psi_bath: states.PureState,
):
    table = _spectral_table(cfg, bath_eig, b_eig, e0, beta)
    psi_e = psi_bath.to_energy_basis(bath_eig).amplitudes
    b_expect = float(np.real(np.vdot(psi_e, b_eig @ psi_e)))
    effective = dynamics.mean_field_shift(cfg.system, cfg.coupling.kappa, b_expect)
    lowering = dynamics.lowering_operators(effective.hamiltonian)
    rate = dynamics.RateFunction(table=table, kappa=cfg.coupling.kappa, beta=beta)
    model = dynamics.build_lindblad(effective, lowering, rate)
    return model, effective, table


def _system_rho0(cfg: ExperimentConfig) -> tuple[np.ndarray, states.PureState]:
    kind = cfg.state.get("system", "polarized")
    psi = states.system_initial_state(kind)
    amps = psi.amplitudes
    return np.outer(amps, amps.conj()), psi


def _run_dynamics(cfg: ExperimentConfig, out: str) -> list[str]:
    bath_eig = _bath_eigensystem(cfg)
    b_eig = spectra.to_eigenbasis(_bath_coupling_operator(cfg), bath_eig)
    fit = _entropy_fit(bath_eig)
    e0 = _target_energy(cfg, bath_eig, fit)
    beta = _state_beta(cfg, fit, e0)
    psi_bath = _prepare_bath_state(cfg, bath_eig, e0)
    rho0, psi_sys = _system_rho0(cfg)

    model, effective, _table = _lindblad_for(cfg, bath_eig, b_eig, e0, beta, psi_bath)
    lind = dynamics.lindblad_evolve_sampled(model, rho0, cfg.grid)

    total_eig = _total_eigensystem(cfg)
    psi_bath_comp = psi_bath.to_computational_basis(bath_eig)
    psi0 = states.PureState(
        amplitudes=np.kron(psi_sys.amplitudes, psi_bath_comp.amplitudes),
        basis="computational",
    )
    exact = dynamics.exact_evolve(total_eig, psi0, cfg.grid)

    tdist = dynamics.trace_distance_series(exact, lind)
    path = os.path.join(out, "trajectory.csv")
    _write_csv(
        path, "t,p0,p1,re_rho01,im_rho01,trace_dist_vs_lindblad",
        zip(
            exact.times,
            exact.populations,
            1.0 - exact.populations,
            exact.rhos[:, 0, 1].real,
            exact.rhos[:, 0, 1].imag,
            tdist,
        ),
    )

    omega_p = effective.omega_prime
    gamma_pop = model.gamma_pop
    summary = {
        "omega_prime": omega_p,
        "beta": beta,
        "e0": e0,
        "gamma_pop_prediction": gamma_pop,
        "avg_trace_distance": dynamics.time_averaged_trace_distance(
            exact, lind, cfg.grid.t_max
        ),
    }
    p_inf = model.rate_at(omega_p) / gamma_pop if gamma_pop > 0 else 0.5
    try:
        rate_exact, res_exact = dynamics.fit_exponential_rate(
            exact.times, exact.populations, p_inf
        )
        summary["fitted_rate_exact"] = rate_exact
        summary["fit_residual_exact"] = res_exact
    except ValueError as exc:
        summary["fitted_rate_exact"] = None
        summary["fit_note"] = str(exc)
    tail = exact.times >= 0.5 * cfg.grid.t_max
    rho_mf = dynamics.mean_force_state(total_eig, beta)
    summary["long_time_p0_exact"] = float(np.mean(exact.populations[tail]))
    summary["mean_force_p0"] = float(np.real(rho_mf[0, 0]))
    spath = os.path.join(out, "summary.json")
    _write_json(spath, summary)
    return [path, spath]


def _run_scaling(cfg: ExperimentConfig, out: str) -> list[str]:
    sc = cfg.extra.get("scaling", {})
    l_values = [int(x) for x in sc.get("L_values", [6, 8, 10, 12])]
    state_kinds = list(sc.get("state_kinds", ["eigenstate", "typical_mc"]))
    t_final = float(sc.get("t_final", cfg.grid.t_max))
    _require(t_final <= cfg.grid.t_max, "scaling.t_final exceeds grid.t_max")

    make_bath = (
        SpinChainParams.chaotic if cfg.preset != "integrable" else SpinChainParams.integrable
    )
    # Lindblad reference from the largest bath in the sweep
    l_ref = max(l_values)
    ref_cfg = _with_bath(cfg, make_bath(l_ref))
    ref_eig = _bath_eigensystem(ref_cfg)
    ref_b = spectra.to_eigenbasis(_bath_coupling_operator(ref_cfg), ref_eig)
    ref_fit = _entropy_fit(ref_eig)
    e0_ref = _target_energy(ref_cfg, ref_eig, ref_fit)
    beta = _state_beta(ref_cfg, ref_fit, e0_ref)

    rows = []
    for state_kind in state_kinds:
        s_cfg = dict(cfg.state)
        s_cfg["kind"] = state_kind
        psi_ref = _prepare_bath_state(
            _with_state(ref_cfg, s_cfg), ref_eig, e0_ref
        )
        model, _, _ = _lindblad_for(ref_cfg, ref_eig, ref_b, e0_ref, beta, psi_ref)
        rho0, psi_sys = _system_rho0(cfg)
        lind = dynamics.lindblad_evolve_sampled(model, rho0, cfg.grid)
        for L in l_values:
            run_cfg = _with_state(_with_bath(cfg, make_bath(L)), s_cfg)
            bath_eig = _bath_eigensystem(run_cfg)
            fit = _entropy_fit(bath_eig)
            e0 = _target_energy(run_cfg, bath_eig, fit)
            psi_bath = _prepare_bath_state(run_cfg, bath_eig, e0)
            total_eig = _total_eigensystem(run_cfg)
            psi0 = states.PureState(
                amplitudes=np.kron(
                    psi_sys.amplitudes,
                    psi_bath.to_computational_basis(bath_eig).amplitudes,
                ),
                basis="computational",
            )
            exact = dynamics.exact_evolve(total_eig, psi0, cfg.grid)
            avg = dynamics.time_averaged_trace_distance(exact, lind, t_final)
            rows.append((L, avg, state_kind))
    path = os.path.join(out, "scaling.csv")
    _write_csv(path, "L,avg_trace_distance,state_kind", rows)
    return [path]


def _with_bath(cfg: ExperimentConfig, bath: SpinChainParams) -> ExperimentConfig:
    import copy

    new = copy.copy(cfg)
    new.bath = bath
    return new


def _with_state(cfg: ExperimentConfig, state: dict) -> ExperimentConfig:
    import copy

    new = copy.copy(cfg)
    new.state = dict(state)
    return new


def _run_levelstats(cfg: ExperimentConfig, out: str) -> list[str]:
    total_eig = _total_eigensystem(cfg)
    stats = spectra.gap_ratios(total_eig.eigenvalues)
    path = os.path.join(out, "summary.json")
    _write_json(path, {
        "mean_gap_ratio": stats.mean_ratio,
        "n_degenerate": stats.n_degenerate,
        "n_ratios": int(stats.ratios.size),
        "histogram": {
            "edges": stats.hist_edges,
            "counts": stats.hist_counts,
        },
    })
    return [path]


def _run_typicality(cfg: ExperimentConfig, out: str) -> list[str]:
    eig = _bath_eigensystem(cfg)
    b_eig = spectra.to_eigenbasis(_bath_coupling_operator(cfg), eig)
    fit = _entropy_fit(eig)
    e0 = _target_energy(cfg, eig, fit)
    window = states.microcanonical_window(eig, e0, float(cfg.state["deltaE"]))
    n_samples = int(cfg.extra.get("typicality", {}).get("n_samples", 50))
    report = dynamics.typicality_spread(
        eig, b_eig, window, n_samples, cfg.seed, cfg.grid
    )
    path = os.path.join(out, "typicality.csv")
    _write_csv(
        path, "sample,max_dev_B,max_dev_C",
        zip(range(n_samples), report.max_dev_b, report.max_dev_c),
    )
    pooled = report.deviations_b.ravel()
    eps_grid = np.linspace(pooled.max() * 0.05, pooled.max() * 1.5, 30)
    levy = [
        {
            "epsilon": float(e),
            "empirical": report.exceedance_fraction(float(e)),
            "bound": dynamics.levy_bound_observable(float(e), report.window_dim),
        }
        for e in eps_grid
    ]
    spath = os.path.join(out, "summary.json")
    _write_json(spath, {
        "window_dim": report.window_dim,
        "mc_average": report.mc_average,
        "median_spread_B": report.median_spread_b,
        "levy_check": levy,
        "levy_satisfied": all(p["empirical"] <= p["bound"] for p in levy),
    })
    return [path, spath]


def _run_multi_op_rates(cfg: ExperimentConfig, out: str) -> list[str]:
    eig = _bath_eigensystem(cfg)
    ops_cfg = cfg.extra.get("operators", [[1, "x"], [1, "z"]])
    ops = [
        spectra.to_eigenbasis(pauli_site_operator(cfg.bath.L, int(site), str(axis)).matrix, eig)
        for site, axis in ops_cfg
    ]
    fit = _entropy_fit(eig)
    e0 = _target_energy(cfg, eig, fit)
    beta = _state_beta(cfg, fit, e0)
    matrices = eth.rate_matrix_multi(
        ops, eig, e0,
        window=float(cfg.eth_opts["window"]),
        freq_bin=float(cfg.eth_opts["freq_bin"]),
        kappa=cfg.coupling.kappa, beta=beta,
        min_states=int(cfg.eth_opts["min_states"]),
    )
    p = len(ops)
    header = "omega,count,min_eigenvalue," + ",".join(f"eig_{i}" for i in range(p))
    rows = [
        (m.omega, m.count, m.min_eigenvalue, *[float(x) for x in m.eigenvalues])
        for m in matrices
    ]
    path = os.path.join(out, "rate_matrix.csv")
    _write_csv(path, header, rows)
    worst = min((m.min_eigenvalue for m in matrices), default=0.0)
    spath = os.path.join(out, "summary.json")
    _write_json(spath, {
        "n_bins": len(matrices),
        "worst_min_eigenvalue": worst,
        "max_hermiticity_residual": max(
            (m.hermiticity_residual for m in matrices), default=0.0
        ),
    })
    return [path, spath]


def validate(cfg: ExperimentConfig) -> list[str]:
    """Physics lint: returns a list of warning strings (schema errors raise)."""
    warnings_out: list[str] = []
    if cfg.coupling.kappa == 0:
        warnings_out.append("kappa = 0: dynamics is trivial (no system-bath coupling)")
    dim_total = 2 ** (cfg.bath.L + 1)
    mem = 16 * dim_total**2
    if mem > 8 * 2**30:
        warnings_out.append(
            f"total dimension {dim_total} needs ~{mem / 2**30:.0f} GiB for a complex "
            "eigendecomposition; expect memory pressure"
        )
    # mean level spacing estimate from a Gaussian DOS of width ~ sqrt(L) * ||couplings||
    scale = math.sqrt(cfg.bath.L) * max(
        abs(cfg.bath.J), abs(cfg.bath.h_x), abs(cfg.bath.h_z), 1e-12
    )
    spacing = 2.0 * 4.0 * scale / 2**cfg.bath.L
    if 0 < cfg.coupling.kappa < spacing:
        warnings_out.append(
            f"kappa = {cfg.coupling.kappa} below the estimated mean level spacing "
            f"{spacing:.3g}; coupling too weak to induce nontrivial dynamics"
        )
    if cfg.bath.L <= 12:
        try:
            eig = _bath_eigensystem(cfg)
            fit = _entropy_fit(eig)
            beta = float(cfg.state.get("beta", 0.0))
            try:
                e0 = thermo.energy_at_beta(fit, beta)
            except thermo.FitDomainError:
                warnings_out.append(
                    f"target beta = {beta} lies outside the entropy-fit domain"
                )
                return warnings_out
            b_eig = spectra.to_eigenbasis(_bath_coupling_operator(cfg), eig)
            try:
                table = _spectral_table(cfg, eig, b_eig, e0, beta)
                rate = dynamics.RateFunction(table, cfg.coupling.kappa, beta)
                omega_p = cfg.system.omega0
                gamma_max = max(rate(omega_p), rate(-omega_p))
                mask = table.filled
                x, y = table.omegas[mask], table.values[mask]
                half = 0.5 * float(np.max(y))
                width = float(x[y >= half][-1] - x[y >= half][0]) if (y >= half).any() else 0.0
                tau_b = 1.0 / width if width > 0 else math.inf
                if gamma_max * tau_b > 0.1:
                    warnings_out.append(
                        f"Markov criterion violated: gamma_max * tau_B = "
                        f"{gamma_max * tau_b:.3g} > 0.1"
                    )
            except (eth.WindowError, eth.SupportError, ValueError) as exc:
                warnings_out.append(f"could not evaluate the Markov criterion: {exc}")
        except Exception as exc:  # lint must not crash validation
            warnings_out.append(f"physics lint skipped: {exc}")
    return warnings_out


_RUNNERS = {
    "eth-stats": _run_eth_stats,
    "thermo": _run_thermo,
    "rates": _run_rates,
    "bcf": _run_bcf,
    "dynamics": _run_dynamics,
    "scaling": _run_scaling,
    "levelstats": _run_levelstats,
    "typicality": _run_typicality,
    "multi-op-rates": _run_multi_op_rates,
}


def run(cfg: ExperimentConfig) -> dict:
    """Execute the configured pipeline; returns the run manifest."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    start = time.time()
    if cfg.kind == "validate":
        produced = []
        diagnostics = validate(cfg)
        path = os.path.join(cfg.out_dir, "validate.json")
        _write_json(path, {"warnings": diagnostics})
        for w in diagnostics:
            print(f"warning: {w}", file=sys.stderr)
        produced.append(path)
    else:
        runner = _RUNNERS[cfg.kind]
        try:
            produced = runner(cfg, cfg.out_dir)
        except (ConfigError, StageError):
            raise
        except Exception as exc:
            for name in os.listdir(cfg.out_dir):
                if name != "run_manifest.json":
                    try:
                        os.unlink(os.path.join(cfg.out_dir, name))
                    except OSError:
                        pass
            raise StageError(cfg.kind, exc) from exc
    manifest = {
        "kind": cfg.kind,
        "config_hash": hashlib.sha256(
            json.dumps(cfg.raw, sort_keys=True).encode()
        ).hexdigest(),
        "seed": cfg.seed,
        "versions": {"ethbath": __version__, "numpy": np.__version__},
        "wall_seconds": time.time() - start,
        "files": {os.path.basename(p): _sha256(p) for p in produced},
    }
    _write_json(os.path.join(cfg.out_dir, "run_manifest.json"), manifest)
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ethbath",
        description="Pure-state chaotic-bath master-equation experiments",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--cache-dir", default=None, help="eigensystem cache directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    if args.threads is not None:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            print("warning: threadpoolctl unavailable; --threads ignored", file=sys.stderr)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(args.kind, raw, args.out, args.cache_dir, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run(cfg)
    except StageError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"out": cfg.out_dir, "files": sorted(manifest["files"])}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
