"""Ground truth for testing: seeded samplers and exhaustive-enumeration oracles.

Everything random here draws from ``numpy.random.Generator`` backed by the
PCG64 bit generator, seeded with the caller's integer seed.  Emission
densities inside :func:`brute_force_evaluate` come from
``scipy.stats.multivariate_normal`` so the oracle shares no numerical code
with the forward-backward implementation it checks.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .errors import ConfigError, InvalidInputError, NoAdmissiblePathError
from .features import ObservationSequence, Waveform
from .hmm import HmmModel, Topology

GENERATOR_ID = "numpy.random.Generator(PCG64)"
MAX_ENUMERATED_PATHS = 10**7


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _draw(cum: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cum, u, side="right"))


def _cumulative(p: np.ndarray) -> np.ndarray:
    cum = np.cumsum(p, axis=-1)
    return cum / cum[..., -1:]


def sample_from_model(model: HmmModel, T: int, seed: int) -> tuple[ObservationSequence, np.ndarray]:
    """Draw a state path and observations of length ``T`` from ``model``.

    Random numbers are consumed in a fixed order: ``T`` uniforms for the
    path, ``T`` uniforms for mixture components, then ``T * D`` standard
    normals.
    """
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    rng = rng_for(seed)
    u_path = rng.random(T)
    u_comp = rng.random(T)
    z = rng.standard_normal((T, model.dim))

    cum_pi = _cumulative(model.pi)
    cum_A = _cumulative(model.A)
    path = np.empty(T, dtype=np.int64)
    q = _draw(cum_pi, u_path[0])
    path[0] = q
    for t in range(1, T):
        q = _draw(cum_A[q], u_path[t])
        path[t] = q

    X = np.empty((T, model.dim))
    for j, mix in enumerate(model.emissions):
        at = np.flatnonzero(path == j)
        if at.size == 0:
            continue
        comp = np.searchsorted(_cumulative(mix.weights), u_comp[at], side="right")
        for k, c in enumerate(mix.components):
            sel = at[comp == k]
            X[sel] = c.mean + z[sel] @ c.cholesky.T
    return ObservationSequence(X, labels=path), path


@dataclass
class ScenarioSpec:
    """Sequences sampled from a known model."""

    true_model: HmmModel
    sequences: int
    length: int
    seed: int

    def __post_init__(self):
        if self.sequences < 1 or self.length < 1:
            raise InvalidInputError("need sequences >= 1 and length >= 1")

    @property
    def n_states(self) -> int:
        return self.true_model.n_states

    @property
    def topology(self) -> Topology:
        return self.true_model.topology

    def generate(self) -> list[ObservationSequence]:
        # one child seed per sequence keeps sequences independent of the count
        seeds = np.random.SeedSequence(self.seed).spawn(self.sequences)
        out = []
        for i, ss in enumerate(seeds):
            seq, _ = sample_from_model(self.true_model, self.length, int(ss.generate_state(1)[0]))
            seq.name = f"seq{i:04d}"
            out.append(seq)
        return out


# -- brute-force oracle -----------------------------------------------------------


@dataclass
class BruteForceResult:
    log_likelihood: float
    gamma: np.ndarray
    best_path: np.ndarray
    best_log_prob: float


def _oracle_log_emissions(model: HmmModel, X: np.ndarray) -> np.ndarray:
    out = np.empty((X.shape[0], model.n_states))
    for j, mix in enumerate(model.emissions):
        with np.errstate(divide="ignore"):
            terms = [
                np.log(w) + multivariate_normal(c.mean, c.covariance).logpdf(X).reshape(-1)
                for w, c in zip(mix.weights, mix.components)
            ]
        out[:, j] = logsumexp(np.column_stack(terms), axis=1)
    return out


def brute_force_evaluate(model: HmmModel, obs) -> BruteForceResult:
    """Likelihood, state posteriors and the best path by enumerating all ``N**T`` paths.

    Paths are visited in lexicographic order, so among exactly tied best paths
    the lexicographically smallest is returned.
    """
    X = obs.observations if isinstance(obs, ObservationSequence) else np.atleast_2d(obs)
    T, N = X.shape[0], model.n_states
    total = N**T
    if total > MAX_ENUMERATED_PATHS:
        raise InvalidInputError(f"{N}^{T} paths exceeds the enumeration limit {MAX_ENUMERATED_PATHS}")
    with np.errstate(divide="ignore"):
        log_pi, log_A = np.log(model.pi), np.log(model.A)
    log_B = _oracle_log_emissions(model, X)

    chunk = 1 << 18

    def paths(lo, hi):
        return np.stack(np.unravel_index(np.arange(lo, hi), (N,) * T), axis=1)

    scores = np.empty(total)
    for lo in range(0, total, chunk):
        p = paths(lo, min(total, lo + chunk))
        s = log_pi[p[:, 0]] + log_B[0, p[:, 0]]
        for t in range(1, T):
            s = s + log_A[p[:, t - 1], p[:, t]] + log_B[t, p[:, t]]
        scores[lo : lo + p.shape[0]] = s

    ll = float(logsumexp(scores))
    if ll == -np.inf:
        raise NoAdmissiblePathError("every path has zero probability")
    gamma = np.zeros((T, N))
    for lo in range(0, total, chunk):
        p = paths(lo, min(total, lo + chunk))
        w = np.exp(scores[lo : lo + p.shape[0]] - ll)
        for t in range(T):
            gamma[t] += np.bincount(p[:, t], weights=w, minlength=N)
    best = int(np.argmax(scores))
    return BruteForceResult(
        log_likelihood=ll,
        gamma=gamma,
        best_path=paths(best, best + 1)[0],
        best_log_prob=float(scores[best]),
    )


# -- synthetic waveforms ------------------------------------------------------------


@dataclass(frozen=True)
class SignalRecipe:
    """Decaying sinusoid burst ``a * exp(-decay * t) * sin(2 pi f t)`` plus white noise."""

    frequency_hz: float
    amplitude: float
    decay_per_s: float
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise InvalidInputError("frequency must be positive")
        if self.amplitude < 0 or self.decay_per_s < 0 or self.noise_std < 0:
            raise InvalidInputError("amplitude, decay and noise must be non-negative")

    def render(self, t: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
        x = self.amplitude * np.exp(-self.decay_per_s * t) * np.sin(2 * np.pi * self.frequency_hz * t)
        if self.noise_std > 0:
            x = x + self.noise_std * rng.standard_normal(t.size)
        return x


@dataclass
class SignalScenario:
    states: list
    recipes: list
    baseline: SignalRecipe
    sample_rate: float = 100_000.0
    duration: float = 1.0
    groups: int = 20
    seed: int = 0
    name: str = "scenario"
    preset: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.states) != len(self.recipes) or not self.states:
            raise InvalidInputError("need one recipe per state")
        if len(set(self.states)) != len(self.states):
            raise InvalidInputError("state names must be distinct")
        if self.sample_rate <= 0 or self.duration <= 0 or self.groups < len(self.states):
            raise InvalidInputError("need positive sample rate and duration, and groups >= states")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError(f"seed {self.seed} is not an unsigned 64-bit integer")
        for r in self.recipes + [self.baseline]:
            if r.frequency_hz >= self.sample_rate / 2:
                raise InvalidInputError(f"carrier {r.frequency_hz} Hz is not below Nyquist")

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.duration))

    def groups_per_state(self) -> list[int]:
        n = len(self.states)
        return [self.groups // n + (1 if j < self.groups % n else 0) for j in range(n)]


@dataclass
class GeneratedSet:
    baseline: Waveform
    recordings: list  # (name, Waveform, state label)


def generate_waveforms(scn: SignalScenario) -> GeneratedSet:
    """Render the baseline and every recording of the scenario.

    Noise is drawn from one generator in a fixed order (baseline, then
    recordings state by state), so output depends only on the scenario.
    """
    rng = rng_for(scn.seed)
    t = np.arange(scn.n_samples) / scn.sample_rate
    baseline = Waveform(scn.baseline.render(t, rng), scn.sample_rate)
    recordings = []
    for state, recipe, count in zip(scn.states, scn.recipes, scn.groups_per_state()):
        for i in range(count):
            recordings.append((f"{state}_{i:03d}", Waveform(recipe.render(t, rng), scn.sample_rate), state))
    return GeneratedSet(baseline, recordings)


def _recipe(section, where) -> SignalRecipe:
    try:
        return SignalRecipe(
            float(section["frequency_hz"]),
            float(section["amplitude"]),
            float(section.get("decay_per_s", "0")),
            float(section.get("noise_std", "0")),
        )
    except KeyError as exc:
        raise ConfigError(f"[{where}] is missing {exc.args[0]}") from None
    except (ValueError, InvalidInputError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def scenario_from_parser(parser: configparser.ConfigParser, seed: int | None = None) -> SignalScenario:
    """Build a scenario from ``[scenario]``, ``[baseline]`` and ``[state.<name>]`` sections.

    States take their index from the order of their sections in the file.
    """
    if "scenario" not in parser or "baseline" not in parser:
        raise ConfigError("scenario needs [scenario] and [baseline] sections")
    head = parser["scenario"]
    states = [s.split(".", 1)[1] for s in parser.sections() if s.startswith("state.")]
    if not states:
        raise ConfigError("scenario defines no [state.<name>] sections")
    try:
        return SignalScenario(
            states=states,
            recipes=[_recipe(parser[f"state.{s}"], f"state.{s}") for s in states],
            baseline=_recipe(parser["baseline"], "baseline"),
            sample_rate=float(head.get("sample_rate_hz", "100000")),
            duration=float(head.get("duration_s", "1.0")),
            groups=int(head.get("groups", "20")),
            seed=int(seed if seed is not None else head.get("seed", "0")),
            name=head.get("name", "scenario"),
            preset=head.get("preset"),
        )
    except ValueError as exc:
        raise ConfigError(f"[scenario]: {exc}") from None


def load_scenario(path, seed: int | None = None) -> SignalScenario:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_parser(parser, seed)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario file shipped with the package (``leak2``, ``location3``, ``depth3``)."""
    path = Path(__file__).with_name("scenarios") / f"{name}.ini"
    if not path.exists():
        raise ConfigError(f"no bundled scenario {name!r}")
    return path
