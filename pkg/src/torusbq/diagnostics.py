"""2D vorticity diagnostics: curl/Biot-Savart, blow-up monitors, energy budget.

The scalar vorticity w = -d2 u1 + d1 u2 closes on itself in 2D (no vortex
stretching), which is what the blow-up monitors exploit:

* tau_R fires when |grad u|_inf exceeds R;
* Gamma_R fires when |w|_{L^2} + |w|_{L^4} + int |grad w|_{L^2} ds (plus the
  control budget int |h|_{H0} ds in controlled runs) exceeds R.

gronwall_record evaluates the log-Gronwall quantities driving the
no-blow-up argument: Y = 1 + |grad w|_{L^4}^4 + |grad theta|_{L^4}^4, the
prefactor g = 1 + |u|_inf^2 + |w|_{L^2} + |grad w|_{L^2} (+ |h|_{H0}), the
forcing weight sigma built from the curled noise modes, and the martingale
bound Z <= (1 + |grad curl f|_{W^{0,4}}) Y^{3/4}.

vorticity_consistency cross-checks the primal solver against an independent
stepper for the curled system driven by the same Brownian increments.  The
twin intentionally uses Crank-Nicolson diffusion (the primal is backward
Euler), giving a clean O(dt) discrepancy between two consistent schemes; with
identical time discretisations the dealiased nonlinear terms agree to
rounding and a dt-refinement study would only measure noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .forcing import RandomStream, sample_increment
from .solver import (
    SolverConfig,
    State,
    TrajectoryRecord,
    build_initial_state,
    run,
)
from .spectral import (
    SpectralScalarField,
    SpectralVectorField,
    dealias,
    gradient,
    lp_norm,
    perp_div_2d,
    sobolev_norm,
)
from .transport import advect


def curl_2d(u: SpectralVectorField) -> SpectralScalarField:
    """Scalar vorticity w = -d2 u1 + d1 u2 (2D only)."""
    return perp_div_2d(u)


def biot_savart(w: SpectralScalarField) -> SpectralVectorField:
    """Mean-free divergence-free velocity with curl_2d(u) = w.

    Inverts u = perp-grad of the stream function solving the Poisson problem;
    the k = 0 velocity is a free parameter on the torus and is set to zero.
    Rejects vorticity with a nonzero mean (reporting the measured mean).
    """
    g = w.grid
    if g.dimension != 2:
        raise ValueError("biot_savart requires dimension 2")
    c = w.coefficients
    mean = c[g.mode_index((0, 0))]
    if abs(mean) > 1e-12 * max(sobolev_norm(w, 0), 1e-300):
        raise ValueError(f"vorticity must be mean-free, measured mean {mean:.3e}")
    k2 = np.where(g.k2_masked == 0.0, 1.0, g.k2_masked)
    psi = np.where(g.k2_masked == 0.0, 0.0, -c / k2)
    u1 = -g.deriv[1] * psi
    u2 = g.deriv[0] * psi
    return SpectralVectorField(
        [
            SpectralScalarField.from_coefficients(g, u1),
            SpectralScalarField.from_coefficients(g, u2),
        ]
    )


# -- log-Gronwall quantities ---------------------------------------------------


@dataclass
class GronwallRecord:
    """The quantities Y, g, sigma and the martingale bound at one instant."""

    t: float
    Y: float
    g: float
    sigma: float
    Z_bound: float
    grad_w_l4: float
    grad_theta_l4: float
    second_derivative_term: float


def _curled_noise_aggregate(config: SolverConfig, state: State) -> float:
    """|grad curl f|_{W^{0,4}}: L^4 norm in x of the mode-wise l^2 aggregate
    of sqrt(lambda_k) grad(curl(f e_k))."""
    noise = config.noise
    if noise is None or noise.intensity.mode == "off" or noise.spec.truncation == 0:
        return 0.0
    grid = config.grid
    agg = np.zeros(grid.shape)
    for i in range(noise.spec.truncation):
        lam = noise.spec.eigenvalues[i]
        if lam == 0.0:
            continue
        fe = noise.intensity.mode_field(i, state.u, state.theta, state.t)
        grad_curl = gradient(curl_2d(fe))
        agg += lam * (
            grad_curl.components[0].samples ** 2 + grad_curl.components[1].samples ** 2
        )
    a = np.sqrt(agg)
    return float((np.sum(a**4) * grid.cell_volume) ** 0.25)


def gronwall_record(state: State, config: SolverConfig) -> GronwallRecord:
    """Evaluate the log-Gronwall quantities at the current state."""
    if config.grid.dimension != 2:
        raise ValueError("gronwall_record requires dimension 2")
    u, theta = state.u, state.theta
    w = curl_2d(u)
    grad_w = gradient(w)
    grad_theta = gradient(theta)
    gw4 = lp_norm(grad_w, 4)
    gt4 = lp_norm(grad_theta, 4)
    Y = 1.0 + gw4**4 + gt4**4
    gval = 1.0 + lp_norm(u, np.inf) ** 2 + lp_norm(w, 2) + lp_norm(grad_w, 2)
    h_h0 = 0.0
    if config.control is not None:
        h_h0 = float(np.linalg.norm(config.control.value_at(state.t)))
        gval += h_h0
    noise_w44 = _curled_noise_aggregate(config, state)
    if config.control is not None:
        sigma = (1.0 + noise_w44 + noise_w44 * h_h0**0.25) ** 4
    else:
        sigma = (1.0 + noise_w44) ** 4
    z_bound = (1.0 + noise_w44) * Y**0.75
    hess_sq = np.zeros(config.grid.shape)
    for comp in grad_w.components:
        for second in gradient(comp).components:
            hess_sq += second.samples**2
    grad_w_mag_sq = grad_w.components[0].samples ** 2 + grad_w.components[1].samples ** 2
    second_term = float(np.sum(hess_sq * grad_w_mag_sq) * config.grid.cell_volume)
    return GronwallRecord(
        t=state.t,
        Y=Y,
        g=gval,
        sigma=sigma,
        Z_bound=z_bound,
        grad_w_l4=gw4,
        grad_theta_l4=gt4,
        second_derivative_term=second_term,
    )


# -- stopping rules -------------------------------------------------------------


@dataclass
class StoppingRule:
    """First-passage monitor over a trajectory record.

    kind "tau_R" watches |grad u|_inf; "gamma_R" watches
    |w|_{L^2} + |w|_{L^4} + int |grad w|_{L^2} ds + int |h|_{H0} ds with
    left-endpoint quadrature (the control term vanishes in uncontrolled
    runs); "custom" evaluates the supplied functional on the record.
    Thresholds are monotone: a larger R never fires earlier on the same path.
    """

    kind: str
    threshold: float
    functional: Optional[Callable[[TrajectoryRecord], float]] = None

    def __post_init__(self):
        if self.kind not in ("tau_R", "gamma_R", "custom"):
            raise ValueError(f"unknown stopping rule kind {self.kind!r}")
        if self.kind == "custom" and self.functional is None:
            raise ValueError("custom rules need a functional")

    def running_values(self, record: TrajectoryRecord) -> np.ndarray:
        """The monitored functional at every recorded time."""
        if self.kind == "tau_R":
            return record.column("linf_grad_u")
        if self.kind == "gamma_R":
            dt = record.dt
            grad_w = record.column("l2_grad_w")
            h = record.column("h_h0")
            integrand = np.nan_to_num(grad_w) + h
            integral = np.concatenate([[0.0], np.cumsum(integrand[:-1]) * dt])
            return record.column("l2_w") + record.column("l4_w") + integral
        values = np.empty(len(record.rows))
        for i in range(len(record.rows)):
            partial = TrajectoryRecord(dt=record.dt, rows=record.rows[: i + 1])
            values[i] = self.functional(partial)
        return values

    def fires(self, record: TrajectoryRecord) -> bool:
        vals = self.running_values(record)
        last = vals[-1]
        return bool(np.isfinite(last) and last > self.threshold)

    def describe(self) -> str:
        return f"{self.kind}(threshold={self.threshold:g})"


def check_stopping(record: TrajectoryRecord, rule: StoppingRule) -> Optional[float]:
    """First recorded time the rule's running functional exceeds its threshold."""
    values = rule.running_values(record)
    times = record.times
    hits = np.nonzero(np.isfinite(values) & (values > rule.threshold))[0]
    if len(hits) == 0:
        return None
    return float(times[hits[0]])


def energy_budget(record: TrajectoryRecord) -> np.ndarray:
    """Per-step residuals of the deterministic kinetic-energy identity.

    Only meaningful without noise; stochastic budgets hold in expectation and
    are checked through ensembles instead, so epsilon > 0 records are refused.
    """
    if record.epsilon > 0:
        raise ValueError("energy budget applies to deterministic (epsilon=0) runs")
    return record.column("energy_residual")


# -- vorticity-form consistency --------------------------------------------------


def _curled_mode_data(config, u, theta, t):
    """Per-mode curl fields and spatial means of the forcing at a state."""
    noise = config.noise
    curls = []
    means = []
    for i in range(noise.spec.truncation):
        fe = noise.intensity.mode_field(i, u, theta, t)
        curls.append(curl_2d(fe).coefficients)
        means.append(
            np.array(
                [c.coefficient_at((0, 0)) for c in fe.components], dtype=complex
            )
        )
    return curls, means


def vorticity_consistency(
    config: SolverConfig,
    stream: Optional[RandomStream] = None,
    initial_state: Optional[State] = None,
):
    """Pathwise gap between primal-curl and an independently stepped vorticity.

    Runs the primal solver, then re-integrates the curled system (advection
    u.grad w, buoyancy d1 theta, curled noise modes, Crank-Nicolson
    diffusion) from the same initial data with bitwise-identical Brownian
    increments; the velocity is reconstructed each step by Biot-Savart with
    the mean mode tracked by its own scalar equation, and both vorticities
    are compared mean-removed.  Returns a dict with per-step L^2 gaps and the
    sup over the horizon.
    """
    grid = config.grid
    if grid.dimension != 2:
        raise ValueError("vorticity consistency requires dimension 2")
    if config.cutoff_R > 0 or config.galerkin_modes is not None:
        raise ValueError("vorticity consistency applies to the untruncated system")
    if config.control is not None:
        raise ValueError("vorticity consistency applies to uncontrolled runs")
    primal = run(
        config, stream=stream, initial_state=initial_state, store_states=True
    )
    states = primal.states
    dt, nu = config.dt, config.viscosity
    eps = config.epsilon

    state0 = states[0]
    w = curl_2d(state0.u)
    theta = state0.theta
    mean_u = np.array(
        [c.coefficient_at((0, 0)) for c in state0.u.components], dtype=complex
    )
    cn_minus = 1.0 - 0.5 * dt * nu * grid.k2
    cn_plus = 1.0 + 0.5 * dt * nu * grid.k2

    gaps = [0.0]
    times = [0.0]
    vol_factor = 2 * np.pi  # sqrt((2 pi)^2), L^2 norm from coefficients

    for j in range(len(states) - 1):
        u_rec = biot_savart(w)
        coeffs = [c.coefficients.copy() for c in u_rec.components]
        for ax in range(2):
            coeffs[ax][grid.mode_index((0, 0))] = mean_u[ax]
        u_full = SpectralVectorField(
            [SpectralScalarField.from_coefficients(grid, c) for c in coeffs]
        )

        grad_w = gradient(w)
        adv = (
            u_full.components[0].samples * grad_w.components[0].samples
            + u_full.components[1].samples * grad_w.components[1].samples
        )
        adv_hat = dealias(
            SpectralScalarField.from_samples(grid, adv)
        ).coefficients
        buoy_hat = grid.deriv[0] * theta.coefficients

        rhs = cn_minus * w.coefficients + dt * (-adv_hat + buoy_hat)
        if eps > 0:
            inc = sample_increment(config.noise.spec, dt, stream, j)
            curls, means = _curled_mode_data(config, u_full, theta, j * dt)
            weights = np.sqrt(eps * config.noise.spec.eigenvalues) * inc.coefficients
            for wgt, ck, mk in zip(weights, curls, means):
                rhs = rhs + wgt * ck
                mean_u = mean_u + wgt * mk
        mean_theta = theta.coefficient_at((0, 0))
        mean_u[-1] += dt * mean_theta

        w = SpectralScalarField.from_coefficients(grid, rhs / cn_plus)
        theta = advect(theta, u_full, dt, config.scheme)

        w_primal = curl_2d(states[j + 1].u)
        diff = w.coefficients - w_primal.coefficients
        gaps.append(float(vol_factor * np.sqrt(np.sum(np.abs(diff) ** 2))))
        times.append(states[j + 1].t)

    return {
        "times": np.array(times),
        "gaps": np.array(gaps),
        "sup_gap": float(np.max(gaps)),
        "primal": primal,
    }
