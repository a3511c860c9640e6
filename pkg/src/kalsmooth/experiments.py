"""Simulation, scoring and Monte Carlo runners for the numerical studies.

Random streams come from ``numpy.random.Philox`` keyed by
``SeedSequence([seed, replication, cell, role])``.  The role separates
process noise, measurement noise and data splits, so every method scored
on a given (replication, cell) sees exactly the same data.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import linear, model as M, plq
from .constrained import IPOptions, StackedConstraints, smooth_constrained_nonlinear, solve_qp_constrained
from .errors import AllMeasurementsRemoved, InvalidParameter, ShapeMismatch
from .linear import assemble
from .nonlinear import GNOptions, LeastSquaresObjective, smooth_nonlinear
from .robust import L1Objective, smooth_l1_laplace

RNG_NAME = "numpy.random.Philox"
ROLE_PROCESS = 0
ROLE_MEASUREMENT = 1
ROLE_SPLIT = 2


def stream(seed, replication=0, cell=0, role=ROLE_MEASUREMENT):
    """Independent generator for one (replication, cell, role) triple."""
    ss = np.random.SeedSequence([int(seed), int(replication), int(cell), int(role)])
    return np.random.Generator(np.random.Philox(ss))


def package_version():
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


# -- noise --------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseMixtureSpec:
    """``(1 - p) N(0, base_var) + p N(0, phi)``.  ``phi`` may be None when ``p = 0``."""

    p: float = 0.0
    base_var: float = 1.0
    phi: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidParameter(f"contamination fraction p must lie in [0, 1], got {self.p}")
        if not self.base_var > 0:
            raise InvalidParameter(f"base_var must be positive, got {self.base_var}")
        if self.phi is None and self.p > 0:
            raise InvalidParameter("phi is required when p > 0")
        if self.phi is not None and not self.phi > 0:
            raise InvalidParameter(f"phi must be positive, got {self.phi}")

    @property
    def variance(self):
        phi = self.base_var if self.phi is None else self.phi
        return (1 - self.p) * self.base_var + self.p * phi

    @property
    def phi_label(self):
        return "-" if self.phi is None else repr(float(self.phi))

    def sample(self, rng, size):
        # all three draws are always taken so streams line up across cells
        pick = rng.random(size) < self.p
        base = rng.standard_normal(size) * np.sqrt(self.base_var)
        out = rng.standard_normal(size) * np.sqrt(self.base_var if self.phi is None else self.phi)
        return np.where(pick, out, base)


def gaussian_draw(rng, cov):
    """One draw from ``N(0, cov)``; semidefinite (even zero) covariances are fine."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    vals, vecs = np.linalg.eigh(cov)
    return vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(len(vals)))


def _per_step(cov, N, n, what):
    if cov is None:
        return None
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        return np.tile(float(cov) * np.eye(n), (N, 1, 1))
    if cov.shape == (n, n):
        return np.tile(cov, (N, 1, 1))
    if cov.shape == (N, n, n):
        return cov
    raise ShapeMismatch(f"{what} override must be scalar, ({n}, {n}) or ({N}, {n}, {n}); got {cov.shape}")


def simulate(model, seed, noise=None, process_cov=None, meas_cov=None, replication=0, cell=0, truth=None):
    """Draw a ground-truth trajectory and its measurements.

    Parameters
    ----------
    model : NonlinearStateSpace or LinearStateSpace
    seed : int
        Base seed; with ``replication`` and ``cell`` it selects the streams.
    noise : NoiseMixtureSpec, optional
        Scalar measurement noise applied to every component.  Defaults to
        Gaussian noise with the model's ``R``.
    process_cov, meas_cov : array_like, optional
        Override ``Q`` (scalar, one block or one per step) and ``R`` (scalar).
    truth : ndarray, optional
        A fixed trajectory; process noise is then skipped.

    Returns
    -------
    x : ndarray, shape (N, n)
    z : list of ndarray
    """
    if isinstance(model, M.LinearStateSpace):
        model = model.as_nonlinear()
    N, n = model.N, model.n
    if truth is None:
        Q = _per_step(process_cov, N, n, "process covariance")
        Q = model.Q if Q is None else Q
        rng = stream(seed, replication, cell, ROLE_PROCESS)
        x = np.empty((N, n))
        prev = model.x0
        for k in range(N):
            mean = model.w0 if (k == 0 and prev is None) else model.g(k, prev)
            x[k] = mean + gaussian_draw(rng, Q[k])
            prev = x[k]
    else:
        x = np.asarray(truth, dtype=float)
        if x.shape != (N, n):
            raise ShapeMismatch(f"truth must be {(N, n)}, got {x.shape}")
    rng = stream(seed, replication, cell, ROLE_MEASUREMENT)
    z = []
    for k in range(N):
        hk = np.atleast_1d(model.h(k, x[k])).astype(float)
        if noise is not None:
            v = noise.sample(rng, hk.size)
        elif meas_cov is not None:
            v = gaussian_draw(rng, float(meas_cov) * np.eye(hk.size))
        else:
            v = gaussian_draw(rng, model.R[k])
        z.append(hk + v)
    return x, z


def mse(estimate, truth):
    """``(1/N) sum_k |x_k - xhat_k|^2`` over all state components."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ShapeMismatch(f"estimate {estimate.shape} and truth {truth.shape} differ in shape")
    if truth.ndim == 1:
        truth, estimate = truth[:, None], estimate[:, None]
    return float(np.mean(np.sum((estimate - truth) ** 2, axis=1)))


# -- reports ------------------------------------------------------------------


def summarize(values):
    """Median and central 95% interval (linear-interpolation percentiles)."""
    v = np.sort(np.asarray(values, dtype=float))
    lo, med, hi = np.percentile(v, [2.5, 50.0, 97.5])
    return float(med), float(lo), float(hi)


@dataclass
class MSEReport:
    """Per-cell, per-method replication MSEs.

    ``cells`` maps a :class:`NoiseMixtureSpec` to ``{method: [mse, ...]}``.
    """

    methods: Tuple[str, ...]
    cells: Dict[NoiseMixtureSpec, Dict[str, List[float]]] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    def add(self, cell, method, value):
        self.cells.setdefault(cell, {m: [] for m in self.methods})[method].append(float(value))

    def summary(self, cell, method):
        return summarize(self.cells[cell][method])

    def median(self, cell, method):
        return self.summary(cell, method)[0]

    def find(self, p, phi=None):
        for cell in self.cells:
            if cell.p == p and cell.phi == phi:
                return cell
        raise KeyError((p, phi))

    def rows(self):
        for cell, by_method in self.cells.items():
            for method in self.methods:
                for rep, value in enumerate(by_method[method]):
                    yield {"cell_p": repr(float(cell.p)), "cell_phi": cell.phi_label, "method": method,
                           "replication": rep, "mse": repr(value)}

    def summary_rows(self):
        for cell, by_method in self.cells.items():
            for method in self.methods:
                med, lo, hi = summarize(by_method[method])
                yield {"cell_p": repr(float(cell.p)), "cell_phi": cell.phi_label, "method": method,
                       "median": repr(med), "lo95": repr(lo), "hi95": repr(hi)}

    def format_table(self):
        lines = ["p      phi     " + "".join(f"{m:>28}" for m in self.methods)]
        for cell, by_method in self.cells.items():
            row = f"{cell.p:<6} {cell.phi_label:<7} "
            for m in self.methods:
                med, lo, hi = summarize(by_method[m])
                row += f"{med:>10.3g} ({lo:.3g}, {hi:.3g})".rjust(28)
            lines.append(row)
        return "\n".join(lines)


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_report(report, out_dir, name):
    """Write ``<name>.csv``, ``<name>_summary.csv`` and ``<name>_meta.json``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "replications": os.path.join(out_dir, f"{name}.csv"),
        "summary": os.path.join(out_dir, f"{name}_summary.csv"),
        "meta": os.path.join(out_dir, f"{name}_meta.json"),
    }
    write_csv(paths["replications"], report.rows(), ["cell_p", "cell_phi", "method", "replication", "mse"])
    write_csv(paths["summary"], report.summary_rows(), ["cell_p", "cell_phi", "method", "median", "lo95", "hi95"])
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(report.meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return paths


@dataclass(frozen=True)
class ExperimentSpec:
    """Plumbing for one harness run."""

    scenario: str
    params: Dict[str, object] = field(default_factory=dict)
    cells: Tuple[NoiseMixtureSpec, ...] = ()
    methods: Tuple[str, ...] = ()
    replications: int = 100
    seed: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if int(self.replications) < 1:
            raise InvalidParameter(f"replications must be at least 1, got {self.replications}")

    def metadata(self, scale=None):
        meta = {
            "scenario": self.scenario,
            "params": dict(self.params),
            "cells": [asdict(c) for c in self.cells],
            "methods": list(self.methods),
            "replications": int(self.replications),
            "seed": int(self.seed),
            "rng": RNG_NAME,
            "stream_key": "SeedSequence([seed, replication, cell, role]); roles process=0, measurement=1, split=2",
            "version": package_version(),
        }
        if scale is not None:
            meta["scale"] = scale
        return meta


# -- baselines ------------------------------------------------------------------


def outlier_removal_baseline(model, z=None, threshold=3.0):
    """Gaussian smoother refit after dropping measurements beyond ``threshold`` sigma.

    ``sigma`` is the square root of the corresponding diagonal entry of
    ``R_k``.  Dropped components become empty measurement slots.
    ``info["removed"]`` counts them and ``info["keep"]`` holds the masks.
    """
    if not isinstance(model, M.LinearStateSpace):
        raise InvalidParameter("outlier removal baseline needs a linear model")
    if z is not None:
        model = model.with_measurements(z)
    first = linear.smooth(model)
    keep = []
    for k in range(model.N):
        if model.m[k] == 0:
            keep.append(np.zeros(0, dtype=bool))
            continue
        resid = model.z[k] - model.H[k] @ first.x[k]
        keep.append(np.abs(resid) <= threshold * np.sqrt(np.diag(model.R[k])))
    total = sum(model.m)
    kept = int(sum(int(np.sum(kk)) for kk in keep))
    if total and kept == 0:
        raise AllMeasurementsRemoved(f"all {total} measurements exceed {threshold} standard deviations")
    refit = linear.smooth(model.mask(keep))
    refit.info.update({"removed": total - kept, "keep": keep, "first_pass": first.x})
    return refit


# -- scenarios --------------------------------------------------------------------


def robust_linear_scenario(N=100, sigma2=0.3, R=0.25, Q0=1.0):
    """Two periods of a sine, state ``(derivative, value)``, value measured.

    Returns ``(model, truth)``.  The prior mean of ``x[0]`` is zero with
    covariance ``Q0 I``.
    """
    dt = 4 * np.pi / N
    t = dt * np.arange(1, N + 1)
    truth = np.column_stack([-np.cos(t), -np.sin(t)])
    model = M.smooth_signal_model(N, dt, sigma2, R, Q0=Q0 * np.eye(2))
    return model, truth


def sine_scenario(N=100, T=2 * np.pi, sigma2=1.0, R=0.35**2, Q0=100.0):
    """Sine tracked with the smooth-signal model; truth is ``(cos t, sin t)``."""
    dt = T / N
    t = dt * np.arange(1, N + 1)
    truth = np.column_stack([np.cos(t), np.sin(t)])
    model = M.smooth_signal_model(N, dt, sigma2, R, Q0=Q0 * np.eye(2))
    return model, truth, t


def box_constraints(N, lower, upper):
    """Bounds ``lower_k <= value_k <= upper_k`` on the second state component.

    Encoded as ``B_k x <= b_k`` with ``B_k = [[0, 1], [0, -1]]`` and
    ``b_k = (upper_k, -lower_k)``.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (N,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (N,))
    if np.any(lower > upper):
        raise InvalidParameter("box lower bound exceeds upper bound")
    Bk = np.array([[0.0, 1.0], [0.0, -1.0]])
    return M.ConstraintSet(b=[np.array([u, -lo]) for lo, u in zip(lower, upper)], B=[Bk] * N)


def box_scenario(N=100, T=4 * np.pi, sigma2=1.0, R=1.0, Q0=100.0):
    """Sine bounded in ``[-1, 1]`` with unit measurement variance."""
    model, truth, t = sine_scenario(N=N, T=T, sigma2=sigma2, R=R, Q0=Q0)
    return model, truth, t, box_constraints(N, -1.0, 1.0)


def variable_box_scenario(N=100, T=4 * np.pi, alpha=0.25, beta=1.0, sigma2=1.0, R=0.25, Q0=100.0):
    """``exp(-alpha t) sin(beta t) + 0.1 t`` inside its exponential envelope."""
    dt = T / N
    t = dt * np.arange(1, N + 1)
    e = np.exp(-alpha * t)
    value = e * np.sin(beta * t) + 0.1 * t
    deriv = e * (beta * np.cos(beta * t) - alpha * np.sin(beta * t)) + 0.1
    model = M.smooth_signal_model(N, dt, sigma2, R, Q0=Q0 * np.eye(2))
    return model, np.column_stack([deriv, value]), t, box_constraints(N, 0.1 * t - e, 0.1 * t + e)


def solve_box(model, constraints, opts=None):
    """Constrained linear smoother for an affine constraint set."""
    B = StackedConstraints.from_constraint_set(constraints, model.n)
    sol, _ = solve_qp_constrained(assemble(model), B, B.b, IPOptions() if opts is None else opts)
    return sol


SHIP_START = (0.0, 0.0, 0.0, 1.0)


def ship_start(model):
    """The infeasible starting trajectory ``(0, 0, 0, 1)`` at every step."""
    return np.tile(np.asarray(SHIP_START), (model.N, 1))


def smooth_ship(model, constraints=None, opts=GNOptions(), ip_opts=None):
    """Ship smoother from :func:`ship_start`; unconstrained when ``constraints`` is None."""
    x0 = ship_start(model)
    if constraints is None:
        return smooth_nonlinear(model, x_init=x0, opts=opts)
    return smooth_constrained_nonlinear(model, constraints, x_init=x0, opts=opts,
                                        ip_opts=IPOptions() if ip_opts is None else ip_opts)


# -- Van der Pol helpers ------------------------------------------------------------


VDP_CONTINUATION = (100.0, 10.0, 1.0)


def vdp_seed_trajectory(model, z, sigma2=10.0):
    """Starting guess from a smooth-signal fit to the measured component.

    The fitted value becomes the first state and the fitted derivative the
    second, matching ``dx1/dt = x2``.
    """
    dt = float(model.times[0]) if model.times is not None else 1.0
    fit = linear.smooth(M.smooth_signal_model(model.N, dt, sigma2, float(model.R[0][0, 0]), z=z,
                                              Q0=100 * np.eye(2)))
    return np.column_stack([fit.x[:, 1], fit.x[:, 0]])


def continuation(smoother, model, x_init, scales=VDP_CONTINUATION, objective=None, opts=GNOptions(), **kwargs):
    """Run ``smoother`` on a sequence of models with ``Q_k`` (k >= 1) inflated by ``scales``.

    Large process variances make the objective nearly convex in the
    trajectory, so each stage lands near the basin of the next.  The last
    scale should be 1 so the final stage solves the intended problem.

    Unless ``opts.tol`` is set, every stage uses the default tolerance of
    the whole run, ``1e-8 (1 + f(x_init))`` with ``f = objective`` of the
    target model.  Returns the last ``(SmootherSolution, trace)`` pair.
    """
    from dataclasses import replace

    if opts.tol is None and objective is not None:
        opts = replace(opts, tol=1e-8 * (1.0 + abs(objective(np.asarray(x_init, dtype=float)))))
    out = None
    for scale in scales:
        Q = model.Q.copy()
        Q[1:] *= scale
        out = smoother(replace(model, Q=Q), x_init=x_init, opts=opts, **kwargs)
        x_init = out[0].x
    return out


def smooth_vdp(model, z=None, method="gn", init="continuation", opts=GNOptions()):
    """Van der Pol smoothing with the documented initialization strategy.

    ``init`` is ``"propagate"`` (noise-free run from the prior mean),
    ``"seeded"`` (:func:`vdp_seed_trajectory`) or ``"continuation"``
    (seeded start followed by :func:`continuation`).
    """
    if z is not None:
        model = model.with_measurements(z)
    if method == "gn":
        smoother, objective = smooth_nonlinear, LeastSquaresObjective(model)
    elif method == "l1":
        smoother, objective = smooth_l1_laplace, L1Objective(model)
    else:
        raise InvalidParameter(f"unknown Van der Pol method {method!r}; use 'gn' or 'l1'")
    if init == "propagate":
        return smoother(model, opts=opts)
    if init not in ("seeded", "continuation"):
        raise InvalidParameter(f"unknown initialization {init!r}")
    x0 = vdp_seed_trajectory(model, model.z)
    if init == "seeded":
        return smoother(model, x_init=x0, opts=opts)
    return continuation(smoother, model, x0, objective=objective, opts=opts)


# -- tables -----------------------------------------------------------------------


LINEAR_CELLS = (
    NoiseMixtureSpec(0.0, 0.25),
    NoiseMixtureSpec(0.1, 0.25, 1.0),
    NoiseMixtureSpec(0.1, 0.25, 4.0),
    NoiseMixtureSpec(0.1, 0.25, 10.0),
    NoiseMixtureSpec(0.1, 0.25, 100.0),
)

VDP_CELLS = (NoiseMixtureSpec(0.0, 1.0),) + tuple(
    NoiseMixtureSpec(p, 1.0, phi) for p in (0.1, 0.2, 0.3) for phi in (10.0, 100.0, 1000.0)
)


def _linear_methods(model):
    return {
        "GKF": lambda: linear.filter_estimates(model),
        "IGS": lambda: linear.smooth(model).x,
        "ILS": lambda: smooth_l1_laplace(model)[0].x,
        "ORB": lambda: outlier_removal_baseline(model).x,
    }


def run_robust_linear_table(replications=100, seed=0, cells=LINEAR_CELLS, methods=("GKF", "IGS", "ILS"),
                            N=100, sigma2=0.3, Q0=1.0, progress=None):
    """Gaussian filter, Gaussian smoother and l1 smoother under contaminated noise.

    The truth is fixed; each replication draws fresh measurement noise per
    cell.  ``"ORB"`` (the 3-sigma outlier-removal refit) may be added to
    ``methods``.
    """
    base, truth = robust_linear_scenario(N=N, sigma2=sigma2, Q0=Q0)
    report = MSEReport(methods=tuple(methods))
    spec = ExperimentSpec("robust-linear", {"N": N, "sigma2": sigma2, "R": 0.25, "Q0": Q0}, tuple(cells),
                          tuple(methods), replications, seed)
    report.meta = spec.metadata()
    for ci, cell in enumerate(cells):
        for rep in range(replications):
            _, z = simulate(base, seed, noise=cell, replication=rep, cell=ci, truth=truth)
            mdl = base.with_measurements(z)
            runners = _linear_methods(mdl)
            for name in methods:
                report.add(cell, name, mse(runners[name](), truth))
            if progress:
                progress(ci, rep)
    return report


def vdp_truth(model, seed, replication, process_var=0.01):
    """Truth trajectory from ``x0`` with process noise of the given variance at every step."""
    x, _ = simulate(model, seed, replication=replication, cell=0, process_cov=process_var, meas_cov=0.0)
    return x


def run_robust_vdp_table(replications=100, seed=0, cells=VDP_CELLS, methods=("IGS", "ILS"), N=164,
                         init="continuation", progress=None):
    """Gauss-Newton smoother versus l1 Gauss-Newton on the Van der Pol oscillator.

    Each replication draws one truth trajectory shared by all cells; the
    cells differ only in the measurement noise.
    """
    dt = 16.0 / N
    base = M.vanderpol_model(N=N, dt=dt, R=1.0)
    report = MSEReport(methods=tuple(methods))
    spec = ExperimentSpec("robust-vdp", {"N": N, "dt": dt, "R": 1.0, "init": init}, tuple(cells),
                          tuple(methods), replications, seed)
    report.meta = spec.metadata()
    which = {"IGS": "gn", "ILS": "l1"}
    for rep in range(replications):
        truth = vdp_truth(base, seed, rep)
        for ci, cell in enumerate(cells):
            _, z = simulate(base, seed, noise=cell, replication=rep, cell=ci + 1, truth=truth)
            mdl = base.with_measurements(z)
            for name in methods:
                sol, _ = smooth_vdp(mdl, method=which[name], init=init)
                report.add(cell, name, mse(sol.x, truth))
            if progress:
                progress(ci, rep)
    return report


# -- Vapnik cross validation ----------------------------------------------------------


@dataclass
class VapnikCVResult:
    lam2: float
    eps: float
    support_vectors: int
    n_train: int
    validation_mse: float
    gaussian_lam2: float
    gaussian_validation_mse: float
    grid_lam2: np.ndarray
    grid_eps: np.ndarray
    scores: np.ndarray
    gaussian_scores: np.ndarray
    fit: np.ndarray
    gaussian_fit: np.ndarray
    times: np.ndarray
    truth: np.ndarray
    z: np.ndarray
    train: np.ndarray

    @property
    def support_fraction(self):
        return self.support_vectors / self.n_train


def vapnik_truth(t):
    return np.exp(np.sin(8 * t))


def _wiener_model(N, lam2, z, train):
    mdl = M.smooth_signal_model(N, 1.0 / N, lam2, 1.0, z=[np.array([zk - 1.0]) for zk in z])
    return mdl.mask([np.array([bool(t)]) for t in train])


def run_vapnik_cv(samples=500, n_lam=5, n_eps=10, seed=0, train_frac=0.65, lam2_range=(1e-2, 1e4),
                  eps_range=(0.0, 1.0), p=0.1, sv_tol=1e-6):
    """Grid cross validation of the Vapnik smoother against the Gaussian one.

    The state is ``(derivative, f - 1)`` with ``f(0) = 1`` known, so the
    prior mean of the first state is zero.  Measurements use unit ``R`` so
    ``eps`` is in data units.  Validation error is the mean squared
    prediction error on the held-out samples.
    """
    N = int(samples)
    if N < 4:
        raise InvalidParameter(f"need at least 4 samples, got {samples}")
    if not 0 < train_frac < 1:
        raise InvalidParameter(f"train_frac must lie in (0, 1), got {train_frac}")
    t = np.arange(1, N + 1) / N
    f = vapnik_truth(t)
    noise = NoiseMixtureSpec(p, 0.25, 25.0)
    z = f + noise.sample(stream(seed, 0, 0, ROLE_MEASUREMENT), N)
    perm = stream(seed, 0, 0, ROLE_SPLIT).permutation(N)
    train = np.zeros(N, dtype=bool)
    train[perm[: int(round(train_frac * N))]] = True
    val = ~train
    lam_grid = np.logspace(np.log10(lam2_range[0]), np.log10(lam2_range[1]), n_lam)
    eps_grid = np.linspace(eps_range[0], eps_range[1], n_eps)

    def val_err(x):
        return float(np.mean((z[val] - 1.0 - x[val, 1]) ** 2))

    scores = np.empty((n_lam, n_eps))
    fits = {}
    for i, lam2 in enumerate(lam_grid):
        mdl = _wiener_model(N, lam2, z, train)
        for j, eps in enumerate(eps_grid):
            x = plq.smooth_plq(mdl, v_penalty=plq.vapnik(eps)).x
            scores[i, j] = val_err(x)
            fits[i, j] = x
    g_scores = np.empty(n_lam)
    g_fits = []
    for i, lam2 in enumerate(lam_grid):
        x = linear.smooth(_wiener_model(N, lam2, z, train)).x
        g_scores[i] = val_err(x)
        g_fits.append(x)
    i, j = np.unravel_index(int(np.argmin(scores)), scores.shape)
    gi = int(np.argmin(g_scores))
    best = fits[i, j]
    resid = z[train] - 1.0 - best[train, 1]
    sv = int(np.sum(np.abs(resid) > eps_grid[j] - sv_tol))
    return VapnikCVResult(
        lam2=float(lam_grid[i]), eps=float(eps_grid[j]), support_vectors=sv, n_train=int(train.sum()),
        validation_mse=float(scores[i, j]), gaussian_lam2=float(lam_grid[gi]),
        gaussian_validation_mse=float(g_scores[gi]), grid_lam2=lam_grid, grid_eps=eps_grid, scores=scores,
        gaussian_scores=g_scores, fit=best[:, 1] + 1.0, gaussian_fit=g_fits[gi][:, 1] + 1.0, times=t, truth=f,
        z=z, train=train,
    )


# -- timing -------------------------------------------------------------------------


def random_blocktri(N, n, rng):
    """Random diagonally dominant (hence SPD) block-tridiagonal matrix."""
    from .blocktri import BlockTriMatrix

    sub = 0.5 * rng.standard_normal((N - 1, n, n))
    A = rng.standard_normal((N, n, n))
    diag = A @ A.transpose(0, 2, 1) + 4 * n * np.eye(n)
    return BlockTriMatrix(diag, sub)


def bench_scaling(n=3, sizes=(1000, 4000), repeats=5, seed=0):
    """Median wall time of one block-tridiagonal solve per size.

    The compiled kernels are warmed up first so the timings exclude JIT
    compilation.  Returns ``{N: seconds}``.
    """
    import time

    from . import blocktri

    rng = stream(seed, 0, 0, ROLE_PROCESS)
    warm = random_blocktri(4, n, rng)
    blocktri.solve(warm, np.ones((4, n)))
    out = {}
    for N in sizes:
        A = random_blocktri(int(N), n, rng)
        r = rng.standard_normal((int(N), n))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            blocktri.solve(A, r)
            times.append(time.perf_counter() - t0)
        out[int(N)] = float(np.median(times))
    return out
