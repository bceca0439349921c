"""Alternating least-squares fit of the time-varying harmonic model.

Each outer iteration solves the amplitude problem in closed form (the model
is linear in the Fourier coefficients once the phase is frozen) and then
refines the common-phase polynomial with a small Newton trust-region solver
that keeps the instantaneous f0 track inside its bounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.linalg import null_space
from scipy.optimize import brentq

from .model import (
    AmplitudeParams,
    FittedModel,
    ModelConfig,
    PhaseParams,
    WindowedFrame,
    amplitude_tracks,
    basis_matrix,
    f0_track,
    f0dot_track,
    rate_tracks,
    synthesize,
)

__all__ = [
    "FitOptions",
    "PhaseSolverState",
    "RankDeficientError",
    "InfeasibleStartError",
    "ConvergenceError",
    "UnvoicedError",
    "cost",
    "build_design_matrix",
    "solve_amplitudes",
    "phase_state",
    "phase_jacobian",
    "phase_hessian",
    "solve_phase",
    "fit",
    "init_f0_autocorrelation",
    "check_feasible",
    "unvoiced_model",
]

log = logging.getLogger(__name__)

# slack that turns the strict lower f0 bound into a closed one
_STRICT_MARGIN = 1e-12


class RankDeficientError(np.linalg.LinAlgError):
    """The design matrix is numerically singular."""


class InfeasibleStartError(ValueError):
    """The initial phase violates the f0 constraints."""


class ConvergenceError(RuntimeError):
    """The phase solver hit its iteration cap."""


class UnvoicedError(ValueError):
    """No usable periodicity was found in the frame."""


@dataclass(frozen=True)
class FitOptions:
    """Initialization and solver settings for :func:`fit`.

    With ``warmup_scan`` the warm-up stage of each higher-order phase
    coefficient starts from the best point of a grid over its feasible
    range (amplitudes re-solved at every grid point), so a large chirp is
    not missed when the zero initial value lies outside its basin.
    ``accelerate`` follows each joint phase update with a safeguarded
    Newton step on the amplitude-eliminated cost (see
    :func:`_profile_newton`) or a line search along recent updates,
    whichever lowers the cost more; neither can raise it.

    ``init_strategy`` is ``"provided"`` (use ``init_f0``) or
    ``"autocorrelation"`` (estimate it within ``search_band``).
    Trust-region radii are in radians of fundamental phase at the window
    edge, which is how the phase variables are scaled internally.
    """

    init_f0: Optional[float] = None
    init_strategy: str = "provided"
    stage_warmup: bool = True
    warmup_scan: bool = True
    accelerate: bool = True
    search_band: Optional[tuple[float, float]] = None
    voicing_threshold: float = 0.3
    xtol: float = 1e-10
    tr_radius0: float = 0.5
    tr_radius_max: float = 8.0
    tr_radius_min: float = 1e-13
    max_solver_iters: int = 200

    def __post_init__(self):
        if self.init_strategy not in ("provided", "autocorrelation"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.init_strategy == "provided" and self.init_f0 is None:
            raise ValueError("init_f0 is required with init_strategy='provided'")


@dataclass(frozen=True)
class PhaseSolverState:
    """Residual and derivative tracks of the phase subproblem.

    ``c1`` and ``c2`` are the first and second derivatives of the model
    with respect to the common phase sample ``phi_n``.
    """

    phi: np.ndarray
    e: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    H: np.ndarray  # Taylor basis rows h_0..h_{L_phi}

    @property
    def cost(self) -> float:
        return 0.5 * float(self.e @ self.e)


# ---------------------------------------------------------------------------
# amplitude step


def build_design_matrix(phase: PhaseParams, config: ModelConfig, N: int) -> np.ndarray:
    """``A = [M | H_1 M | ... | H_L M]`` with ``M = [1/2 | C | S]``."""
    H = basis_matrix(N, max(config.L, phase.L_phi))
    phi_n = phase.phi @ H[1: phase.L_phi + 1]
    arg = phi_n[:, None] * np.arange(1, config.P + 1)[None, :]
    M = np.hstack([np.full((N, 1), 0.5), np.cos(arg), np.sin(arg)])
    return np.hstack([H[ell][:, None] * M for ell in range(config.L + 1)])


def solve_amplitudes(frame: WindowedFrame, phase: PhaseParams,
                     config: ModelConfig) -> AmplitudeParams:
    """Least-squares amplitudes for a frozen phase (pseudo-inverse solve)."""
    x = frame.samples
    N = x.size
    if N < config.n_amp:
        raise ValueError(f"need at least {config.n_amp} samples, got {N}")
    A = build_design_matrix(phase, config, N)
    theta, _, rank, _ = np.linalg.lstsq(A, x, rcond=N * np.finfo(float).eps)
    if rank < A.shape[1]:
        raise RankDeficientError(
            f"design matrix rank {rank} < {A.shape[1]} columns "
            f"(f0 near 0 or {config.P} harmonics too many for {N} samples?)")
    return AmplitudeParams(theta, config.P, config.L)


def cost(frame: WindowedFrame, phase: PhaseParams, amps: AmplitudeParams) -> float:
    e = synthesize(phase, amps, frame.N) - frame.samples
    return 0.5 * float(e @ e)


# ---------------------------------------------------------------------------
# phase step


def _state(x: np.ndarray, a: np.ndarray, b: np.ndarray, phi: np.ndarray,
           H: np.ndarray) -> PhaseSolverState:
    P = b.shape[0]
    p = np.arange(1, P + 1)[:, None]
    phi_n = phi @ H[1: phi.size + 1]
    arg = p * phi_n[None, :]
    C, S = np.cos(arg), np.sin(arg)
    aC = a[1:] * C
    bS = b * S
    s = 0.5 * a[0] + np.sum(aC + bS, axis=0)
    c1 = np.sum(p * (b * C - a[1:] * S), axis=0)
    c2 = -np.sum(p * p * (aC + bS), axis=0)
    return PhaseSolverState(phi=phi, e=s - x, c1=c1, c2=c2, H=H)


def phase_state(frame: WindowedFrame, phase: PhaseParams,
                amps: AmplitudeParams) -> PhaseSolverState:
    a, b = amplitude_tracks(amps, frame.N)
    H = basis_matrix(frame.N, phase.L_phi)
    return _state(frame.samples, a, b, np.array(phase.phi), H)


def phase_jacobian(state: PhaseSolverState) -> np.ndarray:
    """dG/dphi_l = sum_n e_n c1_n h_l(n - n0)."""
    L_phi = state.phi.size
    return state.H[1: L_phi + 1] @ (state.e * state.c1)


def phase_hessian(state: PhaseSolverState) -> np.ndarray:
    """d2G/dphi_l dphi_j = sum_n (c1_n**2 + e_n c2_n) h_l h_j."""
    L_phi = state.phi.size
    Hl = state.H[1: L_phi + 1]
    w = state.c1 ** 2 + state.e * state.c2
    return (Hl * w) @ Hl.T


def _constraint_system(config: ModelConfig, N: int, L_phi: int):
    """Linear inequalities ``G phi <= h`` equivalent to the f0 bounds."""
    H = basis_matrix(N, L_phi)
    if L_phi <= 2:
        # linear f0 track: extremes sit at the window ends
        cols = np.unique([0, N - 1])
    else:
        cols = np.arange(N)
    g = H[:L_phi, cols].T / (2 * np.pi)
    rows = [g, -g]
    rhs = [np.full(len(cols), config.f0_max),
           np.full(len(cols), -(config.f0_min + _STRICT_MARGIN))]
    if config.f0dot_max is not None and L_phi >= 2:
        gd = np.zeros((len(cols), L_phi))
        gd[:, 1:] = H[: L_phi - 1, cols].T / (2 * np.pi)
        rows += [gd, -gd]
        rhs += [np.full(len(cols), config.f0dot_max)] * 2
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    # identical rows (e.g. a constant f0 track) add nothing
    _, keep = np.unique(np.hstack([G, h[:, None]]), axis=0, return_index=True)
    keep = np.sort(keep)
    return G[keep], h[keep]


def check_feasible(phase: PhaseParams, config: ModelConfig, N: int,
                   tol: float = 0.0) -> bool:
    f0 = f0_track(phase, N)
    ok = f0.min() > config.f0_min - tol and f0.max() <= config.f0_max + tol
    if config.f0dot_max is not None:
        ok = ok and np.abs(f0dot_track(phase, N)).max() <= config.f0dot_max + tol
    return bool(ok)


def _tr_step(g: np.ndarray, B: np.ndarray, delta: float) -> tuple[np.ndarray, bool]:
    """Exact minimizer of ``g.s + s.B.s/2`` over ``|s| <= delta``.

    Returns the step and whether it is an interior Newton step.
    """
    k = g.size
    if k == 0:
        return np.zeros(0), True
    w, V = np.linalg.eigh(B)
    gt = V.T @ g
    gnorm = np.linalg.norm(g)
    if w[0] > 0:
        s = -V @ (gt / w)
        if np.linalg.norm(s) <= delta:
            return s, True
    lam0 = max(0.0, -w[0])
    scale = max(np.abs(w).max(), 1.0)

    def snorm(lam):
        return np.linalg.norm(gt / (w + lam))

    # hard case: the gradient has no weight on the lowest eigenvector
    degenerate = np.abs(w + lam0) <= 1e-12 * scale
    if w[0] <= 0 and np.all(np.abs(gt[degenerate]) <= 1e-12 * max(gnorm, 1e-300)):
        d = w + lam0
        st = np.where(degenerate, 0.0, -gt / np.where(degenerate, 1.0, d))
        rest = delta ** 2 - st @ st
        if rest >= 0:
            st[np.argmax(degenerate)] = np.sqrt(rest)
            return V @ st, False
    lo = lam0 + 1e-14 * scale
    hi = lam0 + gnorm / delta + 1e-14 * scale
    if snorm(lo) <= delta:
        return -V @ (gt / (w + lo)), False
    lam = brentq(lambda t: snorm(t) - delta, lo, hi, xtol=1e-15 * scale, rtol=1e-12)
    return -V @ (gt / (w + lam)), False


def _edge_scale(N: int, L_phi: int) -> np.ndarray:
    """``|h_l|`` at the window edge: converts phi_l to radians of phase there."""
    D = np.abs(basis_matrix(N, L_phi)[1:, 0])
    D[D == 0] = 1.0
    return D


def _fast_lstsq(A: np.ndarray, x: np.ndarray) -> Optional[np.ndarray]:
    """Pivoted-QR least squares for the search loops; ``None`` if singular."""
    N = x.size
    theta, _, rank, _ = scipy.linalg.lstsq(A, x, cond=N * np.finfo(float).eps,
                                           lapack_driver="gelsy", check_finite=False)
    return theta if rank == A.shape[1] else None


def _profile_cost(x: np.ndarray, phi: np.ndarray, config: ModelConfig) -> float:
    """Cost at ``phi`` with the amplitudes re-solved; ``inf`` if singular."""
    A = build_design_matrix(PhaseParams(phi), config, x.size)
    theta = _fast_lstsq(A, x)
    if theta is None:
        return np.inf
    r = x - A @ theta
    return 0.5 * float(r @ r)


def _profile_grad(x: np.ndarray, phi: np.ndarray, config: ModelConfig):
    """Gradient and value of the cost with amplitudes re-solved at ``phi``.

    At the amplitude optimum the amplitude derivatives drop out, so the
    gradient is the phase Jacobian evaluated with the re-solved amplitudes.
    """
    N = x.size
    theta = _fast_lstsq(build_design_matrix(PhaseParams(phi), config, N), x)
    if theta is None:
        return None, np.inf
    a, b = amplitude_tracks(AmplitudeParams(theta, config.P, config.L), N)
    st = _state(x, a, b, phi, basis_matrix(N, phi.size))
    return phase_jacobian(st), st.cost


def _profile_newton(x: np.ndarray, phi: np.ndarray, config: ModelConfig,
                    fd_step: float = 1e-6, max_halvings: int = 10):
    """One safeguarded Newton step on the amplitude-eliminated cost.

    When amplitude slopes can absorb part of a phase error the alternating
    iteration crawls (or zig-zags) along a narrow valley of this reduced
    cost; a Newton step on it, with the Hessian from central differences of
    the exact gradient, crosses the valley directly. The step is clipped to
    the feasible set and halved until the cost decreases; ``phi`` is
    returned unchanged if it never does. Returns ``(phi, cost)``.
    """
    D = _edge_scale(x.size, phi.size)
    g, c0 = _profile_grad(x, phi, config)
    if g is None:
        return phi, c0
    n = phi.size
    B = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = fd_step / D[i]
        gp, _ = _profile_grad(x, phi + e, config)
        gm, _ = _profile_grad(x, phi - e, config)
        if gp is None or gm is None:
            return phi, c0
        B[:, i] = (gp - gm) / (2 * fd_step) / D
    B = 0.5 * (B + B.T)
    gz = g / D
    w, V = np.linalg.eigh(B)
    if w.max() <= 0:
        return phi, c0
    # negative curvature directions are dropped rather than followed
    keep = w > 1e-12 * w.max()
    s = -(V[:, keep] @ ((V[:, keep].T @ gz) / w[keep])) / D
    if not np.any(s):
        return phi, c0
    Gc, hc = _constraint_system(config, x.size, n)
    Gs = Gc @ s
    slack = hc - Gc @ phi
    t = 1.0
    if np.any(Gs > 0):
        t = min(1.0, float(np.min(np.maximum(slack[Gs > 0], 0.0) / Gs[Gs > 0])) * (1 - 1e-12))
    for _ in range(max_halvings):
        trial = phi + t * s
        if not np.any(Gc @ trial > hc):
            c = _profile_cost(x, trial, config)
            if c < c0:
                return trial, c
        t *= 0.5
    return phi, c0


def _extrapolate(x: np.ndarray, anchors: Sequence[np.ndarray], phi: np.ndarray,
                 config: ModelConfig, cost0: Optional[float] = None,
                 max_factor: float = 64.0):
    """Line searches along recent phase changes of the outer iteration.

    Steps further along ``phi - anchor`` for each anchor (earlier iterates),
    re-solving amplitudes and doubling the step while the cost keeps
    falling. Following the change over two iterations cancels a zig-zag
    across a narrow valley. Only feasible points are tried; returns
    ``(phi, cost)`` with ``phi`` unchanged when nothing improves.
    """
    Gc, hc = _constraint_system(config, x.size, phi.size)
    best = _profile_cost(x, phi, config) if cost0 is None else cost0
    best_phi = phi
    for anchor in anchors:
        d = phi - anchor
        if not np.any(d):
            continue
        beta = 1.0
        while beta <= max_factor:
            trial = phi + beta * d
            if np.any(Gc @ trial > hc):
                break
            c = _profile_cost(x, trial, config)
            if not c < best:
                break
            best_phi, best = trial, c
            beta *= 2.0
    return best_phi, best


def _scan_coefficient(frame: WindowedFrame, phase: PhaseParams, idx: int,
                      config: ModelConfig, max_points: int = 2000) -> PhaseParams:
    """Grid search of one phase coefficient with exact amplitudes at each point.

    The grid spacing is ``pi / (2P)`` radians of phase at the window edge.
    The current value is always a candidate, so the cost cannot increase.
    """
    x = frame.samples
    N = x.size
    phi = np.array(phase.phi)
    Gc, hc = _constraint_system(config, N, phi.size)
    g = Gc[:, idx]
    room = hc - Gc @ phi + g * phi[idx]
    lo = np.max(room[g < 0] / g[g < 0]) if np.any(g < 0) else -np.inf
    hi = np.min(room[g > 0] / g[g > 0]) if np.any(g > 0) else np.inf
    edge = _edge_scale(N, phi.size)[idx]
    step = np.pi / (2 * config.P)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        return phase
    z_lo, z_hi = lo * edge, hi * edge
    n_pts = min(max_points, int((z_hi - z_lo) / step))
    if n_pts < 2:
        return phase
    grid = np.concatenate([[phi[idx]], np.linspace(z_lo, z_hi, n_pts + 2)[1:-1] / edge])
    best, best_cost = phi[idx], np.inf
    for v in grid:
        trial = phi.copy()
        trial[idx] = v
        c = _profile_cost(x, trial, config)
        if c < best_cost:
            best, best_cost = v, c
    phi[idx] = best
    return PhaseParams(phi)


def _solve_phase(x, a, b, phi0, config: ModelConfig, opts: FitOptions,
                 free: Optional[Sequence[int]] = None):
    """Newton trust-region on the free phase coefficients.

    Returns ``(phi, converged, iterations)``.
    """
    N = x.size
    L_phi = phi0.size
    free = np.arange(L_phi) if free is None else np.asarray(free, dtype=int)
    H = basis_matrix(N, L_phi)
    # scale so a unit step moves the phase at the window edge by ~1 rad
    D = _edge_scale(N, L_phi)[free]
    Gc, hc = _constraint_system(config, N, L_phi)
    Gz = Gc[:, free] / D

    phi = phi0.astype(float).copy()
    if np.any(Gc @ phi > hc):
        raise InfeasibleStartError(
            f"initial phase violates f0 bounds ({config.f0_min}, {config.f0_max}]")
    st = _state(x, a, b, phi, H)
    delta = opts.tr_radius0
    act_tol = 1e-12
    for it in range(1, opts.max_solver_iters + 1):
        g = phase_jacobian(st)[free] / D
        B = phase_hessian(st)[np.ix_(free, free)] / np.outer(D, D)
        slack = hc - Gc @ phi
        rownorm = np.linalg.norm(Gz, axis=1)
        active = np.flatnonzero(slack <= act_tol * np.maximum(np.abs(hc), 1e-3))

        # step in the nullspace of the active constraints that block it
        Z = np.eye(free.size)
        working = []
        while True:
            sr, interior = _tr_step(Z.T @ g, Z.T @ B @ Z, delta)
            s = Z @ sr
            if s.size == 0 or not np.any(s):
                break
            push = Gz[active] @ s / (rownorm[active] * np.linalg.norm(s))
            push[np.isin(active, working)] = 0.0
            if push.size == 0 or push.max() <= 1e-12:
                break
            working.append(int(active[np.argmax(push)]))
            Z = null_space(Gz[working])
            if Z.shape[1] == 0:
                s = np.zeros(free.size)
                interior = True
                break

        snorm = np.linalg.norm(s)
        if snorm <= opts.xtol:
            return phi, True, it

        # stop at the first inactive constraint along the step
        Gs = Gz @ s
        blocking = (Gs > 0)
        blocking[active] = False
        t = 1.0
        if np.any(blocking):
            t = min(1.0, float(np.min(np.maximum(slack[blocking], 0.0) / Gs[blocking])))
            if t < 1.0:
                # land just inside so rounding cannot leave the feasible set
                t *= 1.0 - 1e-12
                interior = False
        s = t * s
        pred = -(g @ s + 0.5 * s @ B @ s)
        if pred <= 0.0:
            return phi, True, it

        trial = phi.copy()
        trial[free] += s / D
        if np.any(Gc @ trial > hc):
            delta = 0.25 * snorm * t
            continue
        st_new = _state(x, a, b, trial, H)
        actual = st.cost - st_new.cost
        ratio = actual / pred
        if ratio > 1e-4 and actual >= 0.0:
            phi, st = trial, st_new
            if interior and t == 1.0 and snorm <= 1e3 * opts.xtol:
                return phi, True, it
            if ratio > 0.75 and snorm * t >= 0.99 * delta:
                delta = min(2.0 * delta, opts.tr_radius_max)
            elif ratio < 0.25:
                delta = 0.25 * snorm * t
        else:
            delta = 0.25 * snorm * t
        if delta < opts.tr_radius_min:
            # reduction now below rounding noise of the cost
            return phi, True, it
    return phi, False, opts.max_solver_iters


def solve_phase(frame: WindowedFrame, amps: AmplitudeParams, config: ModelConfig,
                phase_init: PhaseParams, opts: Optional[FitOptions] = None,
                free: Optional[Sequence[int]] = None) -> PhaseParams:
    """Minimize the cost over the phase coefficients with amplitudes frozen.

    ``free`` restricts the optimization to a subset of coefficient indices.
    Raises :class:`InfeasibleStartError` for an infeasible start and
    :class:`ConvergenceError` if the solver hits its iteration cap.
    """
    opts = opts or FitOptions(init_f0=0.25 / config.P)
    a, b = amplitude_tracks(amps, frame.N)
    phi, ok, _ = _solve_phase(frame.samples, a, b, np.array(phase_init.phi), config, opts, free)
    if not ok:
        raise ConvergenceError(
            f"phase solver did not converge in {opts.max_solver_iters} iterations")
    return PhaseParams(phi)


# ---------------------------------------------------------------------------
# initialization


def init_f0_autocorrelation(frame: WindowedFrame, search_band: tuple[float, float],
                            threshold: float = 0.3) -> float:
    """Normalized f0 from the autocorrelation peak within ``search_band``.

    Lags are searched between ``1/f_hi`` and ``1/f_lo``. The shortest lag
    whose correlation reaches 90% of the band maximum wins, which avoids
    locking onto a multiple of the period. Raises :class:`UnvoicedError`
    below ``threshold``.
    """
    f_lo, f_hi = search_band
    if not 0 < f_lo < f_hi < 0.5:
        raise ValueError(f"search band {search_band} must lie inside (0, 0.5)")
    x = frame.samples - frame.samples.mean()
    N = x.size
    kmin = max(2, int(np.floor(1.0 / f_hi)))
    kmax = int(np.ceil(1.0 / f_lo))
    if N <= 2 * kmax:
        raise ValueError(f"frame of {N} samples too short for f_lo={f_lo}")
    energy = np.cumsum(np.concatenate([[0.0], x * x]))
    if energy[-1] <= 0:
        raise UnvoicedError("silent frame")
    nfft = 1 << int(np.ceil(np.log2(2 * N)))
    X = np.fft.rfft(x, nfft)
    r = np.fft.irfft(X * np.conj(X), nfft)[: kmax + 2]
    lags = np.arange(kmax + 2)
    # energy of x[0:N-k] and x[k:N]
    e_head = energy[N - lags]
    e_tail = energy[-1] - energy[lags]
    with np.errstate(invalid="ignore", divide="ignore"):
        rn = np.where(e_head * e_tail > 0, r / np.sqrt(e_head * e_tail), 0.0)
    peaks = [k for k in range(kmin, kmax + 1)
             if rn[k] >= rn[k - 1] and rn[k] >= rn[k + 1]]
    if not peaks:
        raise UnvoicedError("no autocorrelation peak in band")
    best = max(rn[k] for k in peaks)
    if best < threshold:
        raise UnvoicedError(f"peak autocorrelation {best:.3f} below {threshold}")
    k = next(k for k in peaks if rn[k] >= 0.9 * best)
    y0, y1, y2 = rn[k - 1], rn[k], rn[k + 1]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den < 0 else 0.0
    return 1.0 / (k + float(np.clip(shift, -0.5, 0.5)))


# ---------------------------------------------------------------------------
# alternating fit


def unvoiced_model(frame: WindowedFrame, config: ModelConfig,
                   flags: tuple[str, ...] = ("unvoiced",)) -> FittedModel:
    """Zero harmonic part; the whole frame is residual."""
    x = frame.samples
    phi = np.zeros(config.L_phi)
    return FittedModel(
        config=config,
        phase=PhaseParams(phi),
        amps=AmplitudeParams.zeros(config.P, config.L),
        s_hat=np.zeros_like(x),
        v_hat=x.copy(),
        iters=0,
        converged=False,
        fs=frame.fs,
        t_center=frame.t_center,
        voiced=False,
        cost_history=(0.5 * float(x @ x),),
        flags=flags,
    )


def fit(frame: WindowedFrame, config: ModelConfig, opts: FitOptions) -> FittedModel:
    """Fit the model to one frame by alternating amplitude and phase solves.

    Iteration ``k`` first solves the amplitudes for the current phase, then
    the phase for those amplitudes. With ``stage_warmup`` the first
    ``L_phi`` phase steps each move a single coefficient (``phi_1``, then
    ``phi_2``, ...). Iteration stops once the squared change of the phase
    vector drops below ``config.rho``; the amplitudes are re-solved for the
    final phase so the residual satisfies the normal equations.
    """
    x = frame.samples
    N = x.size
    if N < config.min_samples():
        raise ValueError(
            f"{N} samples cannot identify {config.min_samples()} parameters")

    if opts.init_strategy == "autocorrelation":
        band = opts.search_band or (max(config.f0_min, 2.0 / N), config.f0_max)
        try:
            f0_init = init_f0_autocorrelation(frame, band, opts.voicing_threshold)
        except UnvoicedError:
            return unvoiced_model(frame, config)
    else:
        f0_init = float(opts.init_f0)
    phase = PhaseParams.from_f0(f0_init, config.L_phi)
    if not check_feasible(phase, config, N):
        raise InfeasibleStartError(
            f"initial f0 {f0_init} outside ({config.f0_min}, {config.f0_max}]")

    H = basis_matrix(N, max(config.L, config.L_phi))
    edge = _edge_scale(N, config.L_phi)
    history = []
    flags = []
    converged = False
    anchors = []
    k = 0
    for k in range(1, config.max_iters + 1):
        warm = opts.stage_warmup and k <= config.L_phi
        if warm and k >= 2 and opts.warmup_scan:
            phase = _scan_coefficient(frame, phase, k - 1, config)
        amps = solve_amplitudes(frame, phase, config)
        a, b = amplitude_tracks(amps, N)
        st = _state(x, a, b, np.array(phase.phi), H[: config.L_phi + 1])
        history.append(st.cost)
        free = [k - 1] if warm else None
        phi, ok, _ = _solve_phase(x, a, b, np.array(phase.phi), config, opts, free)
        if not ok and "phase_solver_cap" not in flags:
            flags.append("phase_solver_cap")
            log.debug("phase solver hit its cap at outer iteration %d", k)
        history.append(_state(x, a, b, phi, H[: config.L_phi + 1]).cost)
        if opts.accelerate and not warm:
            # far from a minimum the reduced cost can be non-convex and the
            # Newton step small, so the line search competes with it
            newton = _profile_newton(x, phi, config)
            line = _extrapolate(x, anchors, phi, config, _profile_cost(x, phi, config))
            phi = min(newton, line, key=lambda c: c[1])[0]
        anchors = [np.array(phase.phi)] + anchors[:1]
        step = float(np.sum(((phi - phase.phi) * edge) ** 2))
        phase = PhaseParams(phi)
        if step < config.rho and not (opts.stage_warmup and k < config.L_phi):
            converged = True
            break

    amps = solve_amplitudes(frame, phase, config)
    s_hat = build_design_matrix(phase, config, N) @ amps.coeffs
    v_hat = x - s_hat
    history.append(0.5 * float(v_hat @ v_hat))
    if not converged:
        flags.append("max_iters")
    if not check_feasible(phase, config, N, tol=1e-9):
        flags.append("infeasible")
    if config.r_max is not None:
        _, adot, bdot = rate_tracks(phase, amps, N)
        idx = config.rate_constrained_harmonics
        idx = range(config.P + 1) if idx is None else idx
        worst = max([np.abs(adot[p]).max() for p in idx]
                    + [np.abs(bdot[p - 1]).max() for p in idx if p > 0])
        if worst > config.r_max:
            flags.append("rate_violation")
    return FittedModel(
        config=config,
        phase=phase,
        amps=amps,
        s_hat=s_hat,
        v_hat=v_hat,
        iters=k,
        converged=converged,
        fs=frame.fs,
        t_center=frame.t_center,
        voiced=True,
        cost_history=tuple(history),
        flags=tuple(flags),
    )
