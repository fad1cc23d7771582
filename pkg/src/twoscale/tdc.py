"""Off-policy policy evaluation with linear features.

Random tabular MDP instances with a reverse-engineered reward so the
target value function is exactly representable, stochastic oracles for
gradient-corrected temporal difference learning (two coupled
d-dimensional variables), a single-variable TD(0) baseline, and exact
ground-truth solvers for the fixed point, the auxiliary solution, and
the projected Bellman error.

Sampling is i.i.d.: each transition draws the state from the exact
stationary distribution of the behavior policy, the action from the
behavior policy, and the successor from the transition kernel. Target
policy expectations are recovered with per-sample importance ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, SingularMatrixError, linear_solve
from .solver import ExactAccessors, StepSchedule, Trace, TwoTimeScaleProblem

__all__ = [
    "LinearFeatures",
    "TabularMdp",
    "TdcInstance",
    "TdcProblem",
    "bellman_reward",
    "dump_instance",
    "exact_mspbe",
    "exact_omega_star",
    "generate_instance",
    "load_instance",
    "run_td0",
    "sample_transition",
    "sample_transitions",
    "stationary_distribution",
    "td0_sample",
    "tdc_sample",
]


@dataclass
class TabularMdp:
    """Finite MDP with per-state reward and discounting."""

    P: np.ndarray        # [S, A, S] transition probabilities
    r_state: np.ndarray  # [S] reward attached to the departing state
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, float)
        self.r_state = np.asarray(self.r_state, float)
        S, A, S2 = self.P.shape
        if S != S2:
            raise ValueError("P must have shape [S, A, S]")
        if np.any(self.P < 0.0):
            raise ValueError("negative transition probability")
        if np.max(np.abs(self.P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


@dataclass
class LinearFeatures:
    """Row-per-state feature matrix, d <= S."""

    Phi: np.ndarray  # [S, d]

    def __post_init__(self):
        self.Phi = np.asarray(self.Phi, float)
        if not np.all(np.isfinite(self.Phi)):
            raise ValueError("features must be finite")
        S, d = self.Phi.shape
        if d > S:
            raise ValueError("feature dimension exceeds state count")


def stationary_distribution(P_state: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic state chain.

    Solves the fixed-point system directly (last equation replaced by
    the normalization constraint); chains without a unique solution
    fall back to the power method from the uniform distribution.
    """
    S = P_state.shape[0]
    A = np.eye(S) - P_state.T
    A[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    try:
        mu = linear_solve(A, rhs)
    except SingularMatrixError:
        mu = np.full(S, 1.0 / S) @ np.linalg.matrix_power(P_state, 1 << 20)
        if np.abs(mu @ P_state - mu).max() > 1e-9:
            raise ValueError("power method found no stationary distribution")
    if mu.min() < -1e-10:
        raise ValueError("chain has no nonnegative stationary solution")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def bellman_reward(P_pi: np.ndarray, gamma: float, V: np.ndarray) -> np.ndarray:
    """Per-state reward making V the fixed point: R = (I - gamma P_pi) V."""
    return V - gamma * (P_pi @ V)


class TdcInstance:
    """A policy-evaluation instance with exact ground truth.

    Holds the MDP, features, the target/behavior policy pair, the
    representable fixed point theta_star, and the behavior stationary
    distribution mu_b. Derived expectation matrices (all under mu_b
    with importance weighting on target-dependent terms) are cached:

        cov      = Phi' D Phi
        a_mat    = Phi' D (I - gamma P_pi) Phi
        b_vec    = Phi' D R
        next_cov = (P_pi Phi)' D Phi

    Mean operators then read
        mean_F(theta, omega) = -2 (b_vec - a_mat theta)
                               + 2 gamma next_cov omega
        mean_G(theta, omega) = cov omega - (b_vec - a_mat theta).
    """

    def __init__(self, mdp: TabularMdp, features: LinearFeatures,
                 pi_target: np.ndarray, pi_behavior: np.ndarray,
                 theta_star: np.ndarray, seed=None):
        self.mdp = mdp
        self.features = features
        self.pi_target = np.asarray(pi_target, float)
        self.pi_behavior = np.asarray(pi_behavior, float)
        self.theta_star = np.asarray(theta_star, float)
        self.seed = seed
        S, A = mdp.n_states, mdp.n_actions
        for name, pi in (("target", self.pi_target), ("behavior", self.pi_behavior)):
            if pi.shape != (S, A) or np.any(pi < 0.0):
                raise ValueError(f"bad {name} policy")
            if np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-9:
                raise ValueError(f"{name} policy rows must sum to 1")
        if np.any(self.pi_behavior <= 0.0):
            raise ValueError("behavior policy must have full support")

        Phi = features.Phi
        self.P_pi = np.einsum("sap,sa->sp", mdp.P, self.pi_target)
        self.P_b = np.einsum("sap,sa->sp", mdp.P, self.pi_behavior)
        self.mu_b = stationary_distribution(self.P_b)
        self.mu_pi = stationary_distribution(self.P_pi)
        self.rho = self.pi_target / self.pi_behavior

        self._cum_mu = np.cumsum(self.mu_b)
        self._cum_pib = np.cumsum(self.pi_behavior, axis=1)
        self._cum_P = np.cumsum(mdp.P, axis=2)

        D = self.mu_b[:, None] * Phi
        self.cov = Phi.T @ D
        self.next_cov = (self.P_pi @ Phi).T @ D
        self.a_mat = self.cov - mdp.gamma * self.next_cov.T
        self.b_vec = D.T @ mdp.r_state

        # target-weighted counterparts, used only for reporting
        Dp = self.mu_pi[:, None] * Phi
        self._cov_pi = Phi.T @ Dp
        self._a_pi = self._cov_pi - mdp.gamma * ((self.P_pi @ Phi).T @ Dp).T
        self._b_pi = Dp.T @ mdp.r_state

    def mean_f(self, theta, omega):
        resid = self.b_vec - self.a_mat @ theta
        return -2.0 * resid + 2.0 * self.mdp.gamma * (self.next_cov @ omega)

    def mean_g(self, theta, omega):
        return self.cov @ omega - (self.b_vec - self.a_mat @ theta)

    def bellman_residual(self) -> float:
        V = self.features.Phi @ self.theta_star
        r = self.mdp.r_state - bellman_reward(self.P_pi, self.mdp.gamma, V)
        return float(np.max(np.abs(r)))


def generate_instance(n_states: int, n_actions: int, d: int, gamma: float,
                      seed) -> TdcInstance:
    """Random instance with a representable value function.

    Draw order is fixed: transition kernel (uniform entries, rows
    normalized), target-policy logits (standard normal, softmax rows),
    features (standard normal), theta_star (standard normal). The
    behavior policy is uniform. The per-state reward is reverse
    engineered so Phi theta_star solves the target Bellman equation.
    """
    if d > n_states:
        raise ValueError("need d <= n_states")
    rng = SeededRng(seed)
    S, A = n_states, n_actions
    P = rng.uniform(S * A * S).reshape(S, A, S)
    P /= P.sum(axis=2, keepdims=True)
    pi_behavior = np.full((S, A), 1.0 / A)
    logits = rng.normal(S * A).reshape(S, A)
    ex = np.exp(logits - logits.max(axis=1, keepdims=True))
    pi_target = ex / ex.sum(axis=1, keepdims=True)
    Phi = rng.normal(S * d).reshape(S, d)
    theta_star = rng.normal(d)

    P_pi = np.einsum("sap,sa->sp", P, pi_target)
    R = bellman_reward(P_pi, gamma, Phi @ theta_star)
    mdp = TabularMdp(P=P, r_state=R, gamma=gamma)
    return TdcInstance(mdp, LinearFeatures(Phi), pi_target, pi_behavior,
                       theta_star, seed=seed)


def _draw(cum: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, cum.size - 1)


def sample_transition(instance: TdcInstance, rng: SeededRng):
    """One i.i.d. transition (s, a, s'): s ~ mu_b, a ~ pi_b, s' ~ P."""
    s = _draw(instance._cum_mu, float(rng.uniform()))
    a = _draw(instance._cum_pib[s], float(rng.uniform()))
    sp = _draw(instance._cum_P[s, a], float(rng.uniform()))
    return s, a, sp


def sample_transitions(instance: TdcInstance, n: int, rng: SeededRng):
    """Vectorized batch of i.i.d. transitions (uses 3 uniform blocks)."""
    u1 = rng.uniform(n)
    u2 = rng.uniform(n)
    u3 = rng.uniform(n)
    s = np.minimum(np.searchsorted(instance._cum_mu, u1, side="right"),
                   instance._cum_mu.size - 1)
    a = np.minimum((instance._cum_pib[s] < u2[:, None]).sum(axis=1),
                   instance._cum_pib.shape[1] - 1)
    sp = np.minimum((instance._cum_P[s, a] < u3[:, None]).sum(axis=1),
                    instance._cum_P.shape[2] - 1)
    return s, a, sp


def tdc_sample(instance: TdcInstance, theta, omega, transition):
    """Sampled operator pair for the gradient-corrected update.

    With rho = pi(a|s)/pi_b(a|s) and the temporal difference
    delta = r(s) + gamma phi(s')'theta - phi(s)'theta:

        F = -2 rho delta phi(s) + 2 gamma rho phi(s') (phi(s)'omega)
        G = phi(s) (phi(s)'omega) - rho delta phi(s)
    """
    s, a, sp = transition
    Phi = instance.features.Phi
    phi_s = Phi[s]
    phi_sp = Phi[sp]
    rho = instance.rho[s, a]
    gamma = instance.mdp.gamma
    delta = instance.mdp.r_state[s] + gamma * (phi_sp @ theta) - phi_s @ theta
    proj = phi_s @ omega
    F = (-2.0 * rho * delta) * phi_s + (2.0 * gamma * rho * proj) * phi_sp
    G = proj * phi_s - (rho * delta) * phi_s
    return F, G


def td0_sample(instance: TdcInstance, theta, transition):
    """Importance-weighted semi-gradient: -rho delta phi(s)."""
    s, a, sp = transition
    Phi = instance.features.Phi
    phi_s = Phi[s]
    rho = instance.rho[s, a]
    gamma = instance.mdp.gamma
    delta = instance.mdp.r_state[s] + gamma * (Phi[sp] @ theta) - phi_s @ theta
    return (-rho * delta) * phi_s


def exact_omega_star(instance: TdcInstance, theta) -> np.ndarray:
    """Auxiliary solution: cov omega = b_vec - a_mat theta."""
    try:
        return linear_solve(instance.cov, instance.b_vec - instance.a_mat @ theta)
    except Exception as err:
        raise type(err)(f"singular feature covariance, regenerate features: {err}")


def exact_mspbe(instance: TdcInstance, theta, weighting: str = "behavior") -> float:
    """Squared weighted norm of the projected Bellman residual.

    `weighting` picks the diagonal weighting distribution: "behavior"
    (the distribution the sampler actually visits, used as the
    objective the oracles descend) or "target" (the evaluated policy's
    stationary distribution, reported for reference).
    """
    if weighting == "behavior":
        cov, a_mat, b_vec = instance.cov, instance.a_mat, instance.b_vec
    elif weighting == "target":
        cov, a_mat, b_vec = instance._cov_pi, instance._a_pi, instance._b_pi
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    resid = b_vec - a_mat @ theta
    return float(resid @ linear_solve(cov, resid))


class TdcProblem(TwoTimeScaleProblem):
    """Adapter exposing a TdcInstance through the solver interface."""

    def __init__(self, instance: TdcInstance):
        self.instance = instance
        d = instance.features.Phi.shape[1]
        self.dim_theta = d
        self.dim_omega = d
        self.exact = ExactAccessors(
            grad_h=lambda th: instance.mean_f(th, exact_omega_star(instance, th)),
            omega_star=lambda th: exact_omega_star(instance, th),
            theta_star=instance.theta_star.copy(),
            h=lambda th: exact_mspbe(instance, th),
            h_star=0.0,
            mean_f=instance.mean_f,
            mean_g=instance.mean_g,
        )

    def sample(self, theta, omega, rng: SeededRng):
        return tdc_sample(self.instance, theta, omega,
                          sample_transition(self.instance, rng))


def run_td0(instance: TdcInstance, schedule: StepSchedule, n_iters: int,
            seed, stride: int = 1) -> Trace:
    """Single-variable TD(0) baseline run, recording z and the
    projected Bellman errors at every stride."""
    if n_iters < 1 or stride < 1:
        raise ValueError("n_iters and stride must be >= 1")
    rng = seed if isinstance(seed, SeededRng) else SeededRng(seed)
    _, alp_t, _ = schedule.tabulate(n_iters)
    theta = np.zeros(instance.features.Phi.shape[1])
    theta_star = instance.theta_star
    names = ("z", "x", "mspbe_pi")
    ks, cols = [], {n: [] for n in names}
    flagged, abort_k = False, None

    def record(k):
        d = theta - theta_star
        vals = (float(d @ d), exact_mspbe(instance, theta),
                exact_mspbe(instance, theta, weighting="target"))
        if not np.all(np.isfinite(vals)):
            return False
        ks.append(k)
        for n, v in zip(names, vals):
            cols[n].append(v)
        return True

    k = 0
    while k < n_iters:
        if k % stride == 0 and not record(k):
            flagged, abort_k = True, k
            break
        sample = td0_sample(instance, theta, sample_transition(instance, rng))
        if not np.isfinite(float(sample.sum())):
            flagged, abort_k = True, k
            break
        theta = theta - alp_t[k] * sample
        k += 1
    if not flagged and not record(n_iters):
        flagged, abort_k = True, n_iters
    return Trace(ks=np.asarray(ks, np.int64),
                 metrics={n: np.asarray(c) for n, c in cols.items()},
                 flagged=flagged, abort_k=abort_k)


# --- flat text serialization ------------------------------------------------

def _write_block(lines, M):
    M = np.atleast_2d(np.asarray(M, float))
    for row in M:
        lines.append(" ".join(repr(float(v)) for v in row))


def dump_instance(instance: TdcInstance, path) -> None:
    """Write the instance in a flat text format.

    Header `tdc S A d gamma seed`, then row-major blocks for the
    transition kernel (S*A rows of S), features (S rows of d), target
    and behavior policies (S rows of A each), theta_star (1 row), and
    the per-state reward (1 row). Floats use repr for exact round trip.
    """
    mdp = instance.mdp
    S, A = mdp.n_states, mdp.n_actions
    d = instance.features.Phi.shape[1]
    seed = instance.seed if instance.seed is not None else -1
    lines = [f"tdc {S} {A} {d} {repr(float(mdp.gamma))} {seed}"]
    _write_block(lines, mdp.P.reshape(S * A, S))
    _write_block(lines, instance.features.Phi)
    _write_block(lines, instance.pi_target)
    _write_block(lines, instance.pi_behavior)
    _write_block(lines, instance.theta_star)
    _write_block(lines, mdp.r_state)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path) -> TdcInstance:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "tdc":
        raise ValueError("not a tdc instance file")
    S, A, d = int(head[1]), int(head[2]), int(head[3])
    gamma = float(head[4])
    seed = int(head[5])
    vals = [np.array([float(tok) for tok in ln.split()]) for ln in lines[1:]]
    rows = iter(vals)
    take = lambda n: np.stack([next(rows) for _ in range(n)])
    P = take(S * A).reshape(S, A, S)
    Phi = take(S)
    pi_target = take(S)
    pi_behavior = take(S)
    theta_star = next(rows)
    r_state = next(rows)
    mdp = TabularMdp(P=P, r_state=r_state, gamma=gamma)
    return TdcInstance(mdp, LinearFeatures(Phi), pi_target, pi_behavior,
                       theta_star, seed=None if seed == -1 else seed)
