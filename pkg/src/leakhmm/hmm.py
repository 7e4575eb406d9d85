"""First-order hidden Markov models with Gaussian-mixture emissions.

The recursions run on per-step normalised forward/backward variables held in
log form: ``log_c[t]`` is the log of the step's scale factor and the sequence
log-likelihood is ``log_c.sum()``.  Holding the normalised variables as logs
rather than probabilities keeps far-tail observations finite.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gmm
from .errors import (
    DimensionMismatchError,
    InvalidInputError,
    NoAdmissiblePathError,
    ParseError,
)
from .features import ObservationSequence
from .gmm import GaussianMixture

FORMAT_VERSION = 1


class Topology(str, Enum):
    ERGODIC = "ergodic"
    LEFT_TO_RIGHT = "left_to_right"


def allowed_transitions(topology: Topology, n_states: int) -> np.ndarray:
    """Boolean ``(N, N)`` mask of transitions the topology permits."""
    if Topology(topology) is Topology.ERGODIC:
        return np.ones((n_states, n_states), dtype=bool)
    i, j = np.indices((n_states, n_states))
    return (j == i) | (j == i + 1)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass(eq=False)
class HmmModel:
    """The three-tuple ``(pi, A, B)`` plus topology and state names.

    ``emissions`` holds one :class:`GaussianMixture` per state, or is empty for
    a skeleton whose emissions have not been fitted yet.
    """

    pi: np.ndarray
    A: np.ndarray
    emissions: list = field(default_factory=list)
    topology: Topology = Topology.ERGODIC
    state_names: list | None = None

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64).copy()
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64)).copy()
        self.topology = Topology(self.topology)
        self.emissions = list(self.emissions)
        n = self.pi.size
        if self.pi.shape != (n,) or n == 0 or self.A.shape != (n, n):
            raise InvalidInputError(f"pi of length {n} does not match A of shape {self.A.shape}")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1) > 1e-9:
            raise InvalidInputError(f"pi must be a probability vector, got {self.pi}")
        if np.any(self.A < 0) or np.any(np.abs(self.A.sum(axis=1) - 1) > 1e-9):
            raise InvalidInputError("every row of A must be a probability vector")
        if np.any(self.A[~allowed_transitions(self.topology, n)] != 0):
            raise InvalidInputError(f"A has mass on transitions a {self.topology.value} model forbids")
        if self.emissions:
            if len(self.emissions) != n:
                raise InvalidInputError(f"{len(self.emissions)} emission mixtures for {n} states")
            if len({m.dim for m in self.emissions}) != 1:
                raise DimensionMismatchError("emission mixtures have different dimensions")
        if self.state_names is None:
            self.state_names = [f"s{i}" for i in range(n)]
        self.state_names = [str(s) for s in self.state_names]
        if len(self.state_names) != n or len(set(self.state_names)) != n:
            raise InvalidInputError("need one distinct name per state")
        for s in self.state_names:
            if not s or any(ch in s for ch in ",\n\r") or s != s.strip():
                raise InvalidInputError(f"invalid state name {s!r}")

    @property
    def n_states(self) -> int:
        return self.pi.size

    @property
    def dim(self) -> int:
        if not self.emissions:
            raise InvalidInputError("model has no fitted emissions")
        return self.emissions[0].dim

    def with_emissions(self, emissions: Sequence[GaussianMixture]) -> "HmmModel":
        return replace(self, emissions=list(emissions))

    def emission_log_densities(self, X: np.ndarray) -> np.ndarray:
        """``log b_j(o_t)`` as a ``(T, N)`` array."""
        return np.column_stack([gmm.log_density(m, X) for m in self.emissions])


def _as_obs(model: HmmModel, obs) -> np.ndarray:
    X = obs.observations if isinstance(obs, ObservationSequence) else np.asarray(obs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise InvalidInputError("empty observation sequence")
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"model expects {model.dim}-D observations, got shape {X.shape}"
        )
    return X


def _lse(M: np.ndarray, axis: int) -> np.ndarray:
    """``log(sum(exp(M)))`` along ``axis``; slices that are all ``-inf`` stay ``-inf``."""
    m = M.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(M - safe).sum(axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


# The recursions below work on a batch of equal-length sequences:
# log_B has shape (S, T, N).


def _forward(log_pi, log_A, log_B):
    S, T, N = log_B.shape
    log_alpha = np.empty((S, T, N))
    log_c = np.empty((S, T))
    a = log_pi + log_B[:, 0]
    for t in range(T):
        if t:
            a = _lse(log_alpha[:, t - 1, :, None] + log_A, axis=1) + log_B[:, t]
        c = _lse(a, axis=1)
        if np.any(c == -np.inf):
            raise NoAdmissiblePathError(f"observation {t} has zero probability under every admissible path")
        log_c[:, t] = c
        log_alpha[:, t] = a - c[:, None]
    return log_alpha, log_c


def _backward(log_A, log_B, log_c):
    S, T, N = log_B.shape
    log_beta = np.zeros((S, T, N))
    for t in range(T - 2, -1, -1):
        nxt = log_B[:, t + 1] + log_beta[:, t + 1] - log_c[:, t + 1, None]
        log_beta[:, t] = _lse(log_A + nxt[:, None, :], axis=2)
    return log_beta


def _posteriors(log_pi, log_A, log_B, want_xi=True):
    log_alpha, log_c = _forward(log_pi, log_A, log_B)
    log_beta = _backward(log_A, log_B, log_c)
    lg = log_alpha + log_beta
    gamma = np.exp(lg - lg.max(axis=2, keepdims=True))
    gamma /= gamma.sum(axis=2, keepdims=True)
    xi = None
    if want_xi:
        nxt = log_B[:, 1:] + log_beta[:, 1:] - log_c[:, 1:, None]
        lx = log_alpha[:, :-1, :, None] + log_A + nxt[:, :, None, :]
        if lx.shape[1]:
            lx = lx - lx.max(axis=(2, 3), keepdims=True)
        xi = np.exp(lx)
        if xi.shape[1]:
            xi /= xi.sum(axis=(2, 3), keepdims=True)
    return gamma, xi, log_c


def step_log_likelihoods(model: HmmModel, obs) -> np.ndarray:
    """``log p(o_t | o_1..o_{t-1})`` for every step; these sum to the sequence log-likelihood."""
    X = _as_obs(model, obs)
    _, log_c = _forward(_log(model.pi), _log(model.A), model.emission_log_densities(X)[None])
    return log_c[0]


def sequence_log_likelihood(model: HmmModel, obs) -> float:
    """``log P(obs | model)`` by the scaled forward recursion."""
    return float(step_log_likelihoods(model, obs).sum())


def forward_backward(model: HmmModel, obs):
    """State and transition posteriors.

    Returns
    -------
    gamma : ndarray, shape (T, N)
        ``P(q_t = i | obs)``.
    xi : ndarray, shape (T-1, N, N)
        ``P(q_t = i, q_{t+1} = j | obs)``.
    log_likelihood : float
    """
    X = _as_obs(model, obs)
    gamma, xi, log_c = _posteriors(_log(model.pi), _log(model.A), model.emission_log_densities(X)[None])
    return gamma[0], xi[0], float(log_c.sum())


def viterbi_log(log_pi, log_A, log_B):
    T, N = log_B.shape
    delta = log_pi + log_B[0]
    back = np.zeros((T, N), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(N)] + log_B[t]
    best = float(delta.max())
    if best == -np.inf:
        raise NoAdmissiblePathError("no state path has nonzero probability")
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


def viterbi(model: HmmModel, obs) -> tuple[np.ndarray, float]:
    """Most probable state path and its joint log-probability.

    Ties go to the lower state index at every backtrack step.
    """
    X = _as_obs(model, obs)
    return viterbi_log(_log(model.pi), _log(model.A), model.emission_log_densities(X))


def posterior_decode(model: HmmModel, obs) -> np.ndarray:
    gamma, _, _ = forward_backward(model, obs)
    return np.argmax(gamma, axis=1)


# -- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    tolerance: float = 1e-6
    max_iterations: int = 200
    floor_scale: float = 1e-6
    min_occupancy: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 1 or self.tolerance < 0:
            raise InvalidInputError("max_iterations must be >= 1 and tolerance >= 0")


@dataclass
class TrainReport:
    iterations: int = 0
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False
    starved: list = field(default_factory=list)  # (iteration, state) pairs
    floored: int = 0


@dataclass
class _Stats:
    log_likelihood: float
    pi: np.ndarray
    trans: np.ndarray
    state_occupancy: np.ndarray
    mix_weights: list  # per state, (T_total, K_j) joint state/component posteriors


def _e_step(model: HmmModel, sequences: list[np.ndarray], X_all: np.ndarray) -> _Stats:
    N = model.n_states
    log_pi, log_A = _log(model.pi), _log(model.A)
    comp_lp = [m.weighted_log_pdfs(X_all) for m in model.emissions]
    log_B_all = np.column_stack([_lse(lp, axis=1) for lp in comp_lp])

    offsets = np.cumsum([0] + [X.shape[0] for X in sequences])
    by_length = {}
    for i, X in enumerate(sequences):
        by_length.setdefault(X.shape[0], []).append(i)

    pi_acc = np.zeros(N)
    trans = np.zeros((N, N))
    gamma_all = np.empty((X_all.shape[0], N))
    ll = 0.0
    for T, idx in sorted(by_length.items()):
        log_B = np.stack([log_B_all[offsets[i] : offsets[i] + T] for i in idx])
        gamma, xi, log_c = _posteriors(log_pi, log_A, log_B, want_xi=T > 1)
        ll += float(log_c.sum())
        pi_acc += gamma[:, 0].sum(axis=0)
        if T > 1:
            trans += xi.sum(axis=(0, 1))
        for g, i in zip(gamma, idx):
            gamma_all[offsets[i] : offsets[i] + T] = g

    mix_weights = []
    for j, lp in enumerate(comp_lp):
        within = np.exp(lp - log_B_all[:, j : j + 1])
        within /= within.sum(axis=1, keepdims=True)
        mix_weights.append(within * gamma_all[:, j : j + 1])
    return _Stats(ll, pi_acc, trans, gamma_all.sum(axis=0), mix_weights)


def _m_step(model, stats, n_seq, X_all, eps, config, report, iteration) -> HmmModel:
    pi = stats.pi / n_seq
    pi /= pi.sum()

    A = model.A.copy()
    row = stats.trans.sum(axis=1)
    for i in range(model.n_states):
        if row[i] > 0:
            A[i] = stats.trans[i] / row[i]
    A[~allowed_transitions(model.topology, model.n_states)] = 0.0

    emissions = []
    for j, mix in enumerate(model.emissions):
        if stats.state_occupancy[j] < config.min_occupancy:
            report.starved.append((iteration, j))
            emissions.append(mix)
            continue
        W = stats.mix_weights[j]
        counts = W.sum(axis=0)
        means, covs = [], []
        for k, comp in enumerate(mix.components):
            if counts[k] < config.min_occupancy:
                means.append(comp.mean)
                covs.append(comp.covariance)
                continue
            mean, cov = gmm.weighted_moments(X_all, W[:, k])
            cov, hit = gmm.floor_covariance(cov, eps)
            report.floored += hit
            means.append(mean)
            covs.append(cov)
        emissions.append(GaussianMixture.from_arrays(counts / counts.sum(), means, covs))
    return replace(model, pi=pi, A=A, emissions=emissions)


def baum_welch(
    model: HmmModel,
    training: Sequence,
    config: TrainConfig | None = None,
) -> tuple[HmmModel, TrainReport]:
    """Re-estimate ``pi``, ``A`` and all emission mixtures by EM over several sequences.

    Expected counts are pooled across sequences before normalising; ``pi``
    becomes the average first-step posterior.  Transitions that start at zero,
    including the zeros a left-to-right topology requires, stay exactly zero.
    A state whose total occupancy falls below ``config.min_occupancy`` keeps
    its emissions for that iteration and is listed in ``report.starved``.

    ``report.log_likelihood_trace[0]`` is the total log-likelihood of the
    initial model; entry ``i`` is the value after iteration ``i``.
    """
    config = config or TrainConfig()
    if not model.emissions:
        raise InvalidInputError("model emissions must be initialised before training")
    if len(training) == 0:
        raise InvalidInputError("no training sequences")
    sequences = [_as_obs(model, s) for s in training]
    X_all = np.vstack(sequences)
    eps = gmm.covariance_floor(X_all, config.floor_scale)

    report = TrainReport()
    stats = _e_step(model, sequences, X_all)
    ll = stats.log_likelihood
    report.log_likelihood_trace.append(ll)
    for it in range(1, config.max_iterations + 1):
        model = _m_step(model, stats, len(sequences), X_all, eps, config, report, it)
        stats = _e_step(model, sequences, X_all)
        new_ll = stats.log_likelihood
        report.log_likelihood_trace.append(new_ll)
        report.iterations = it
        if new_ll - ll <= config.tolerance * max(abs(ll), 1e-300):
            report.converged = True
            break
        ll = new_ll
    return model, report


def fit_state_emissions(
    sequences: Sequence[ObservationSequence],
    n_states: int,
    n_components: int = 3,
    config: gmm.FitConfig | None = None,
) -> tuple[list[GaussianMixture], list[gmm.FitReport]]:
    """Fit one mixture per state from labelled observations.

    All observations labelled ``j`` across ``sequences`` are pooled and a
    ``n_components`` mixture is fitted to them.
    """
    labelled = [s for s in sequences if s.labels is not None]
    if not labelled:
        raise InvalidInputError("supervised emission fitting needs labelled sequences")
    X = np.vstack([s.observations for s in labelled])
    y = np.concatenate([s.labels for s in labelled])
    mixtures, reports = [], []
    for j in range(n_states):
        pts = X[y == j]
        if pts.shape[0] < n_components:
            raise InvalidInputError(
                f"state {j} has {pts.shape[0]} training observations, fewer than K={n_components}"
            )
        mix, rep = gmm.fit(pts, n_components, config)
        mixtures.append(mix)
        reports.append(rep)
    return mixtures, reports


# -- presets -------------------------------------------------------------------

PRESETS = {
    "leak2_lr": dict(
        pi=[1.0, 0.0],
        A=[[0.5, 0.5], [0.0, 1.0]],
        topology=Topology.LEFT_TO_RIGHT,
        state_names=["no_leak", "leak"],
    ),
    "location3_ergodic": dict(
        pi=[1.0, 0.0, 0.0],
        A=np.full((3, 3), 1.0 / 3.0),
        topology=Topology.ERGODIC,
        state_names=["section1", "section2", "section3"],
    ),
    "depth3_lr": dict(
        pi=[1.0, 0.0, 0.0],
        A=[[0.9, 0.1, 0.0], [0.0, 0.9, 0.1], [0.0, 0.0, 1.0]],
        topology=Topology.LEFT_TO_RIGHT,
        state_names=["depth1", "depth2", "depth3"],
    ),
}

# Trained parameters and test accuracies reported for the original laboratory
# recordings. Documentation only: those recordings are not available.
LAB_REPORTED = {
    "leak2_lr": dict(accuracy=0.9251),
    "location3_ergodic": dict(
        pi=[0.0, 0.0, 1.0],
        A=[[0.232, 0.357, 0.411], [0.0, 0.525, 0.475], [0.539, 0.102, 0.359]],
        accuracy=0.9481,
    ),
    "depth3_lr": dict(
        pi=[1.0, 0.0, 0.0],
        A=[[0.974, 0.026, 0.0], [0.0, 0.976, 0.024], [0.0, 0.0, 1.0]],
        accuracy=0.9323,
    ),
}


def make_preset(name: str) -> HmmModel:
    """Initial ``(pi, A, topology)`` skeleton for a named experiment; no emissions."""
    try:
        params = PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return HmmModel(**params)


# -- serialisation ---------------------------------------------------------------


def dumps_model(model: HmmModel) -> str:
    parser = gmm.new_parser()
    parser["model"] = {
        "version": str(FORMAT_VERSION),
        "topology": model.topology.value,
        "n_states": str(model.n_states),
        "dim": str(model.dim if model.emissions else 0),
        "state_names": ",".join(model.state_names),
        "pi": gmm.format_vector(model.pi),
        "transitions": gmm.format_vector(model.A),
    }
    for j, mix in enumerate(model.emissions):
        gmm.mixture_to_sections(mix, parser, prefix=f"state.{j}.")
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads_model(text: str) -> HmmModel:
    parser = gmm.new_parser()
    parser.read_string(text)
    head = parser["model"]
    if int(head["version"]) != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model format version {head['version']}")
    n, d = int(head["n_states"]), int(head["dim"])
    emissions = [gmm.mixture_from_sections(parser, prefix=f"state.{j}.") for j in range(n)] if d else []
    return HmmModel(
        pi=gmm.parse_vector(head["pi"], n),
        A=gmm.parse_vector(head["transitions"], n * n).reshape(n, n),
        emissions=emissions,
        topology=Topology(head["topology"]),
        state_names=head["state_names"].split(","),
    )


def save_model(path, model: HmmModel) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> HmmModel:
    try:
        return loads_model(Path(path).read_text())
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ParseError(path, 0, f"invalid model file: {exc}") from None
