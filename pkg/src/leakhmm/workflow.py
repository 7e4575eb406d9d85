"""The detection workflow as file-to-file steps.

simulate -> features -> train -> decode -> eval.  Each step reads the
previous step's output directory and writes its own; every output is a
deterministic function of the inputs and the configured seeds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datastore, gmm, hmm, synth
from .config import RunConfig
from .datastore import LabeledDataset
from .errors import ConfigError, InvalidInputError
from .features import ObservationSequence, extract_windowed, read_waveform, window_count, write_waveform

log = logging.getLogger(__name__)

_FMT = "%.17g"


def _write_ini(path: Path, sections: dict) -> None:
    parser = gmm.new_parser()
    for name, values in sections.items():
        parser[name] = {k: str(v) for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def _write_csv(path: Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_FMT % v if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _out_dir(path) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"parent directory of {path} does not exist")
    path.mkdir(exist_ok=True)
    return path


# -- simulate ----------------------------------------------------------------------


def simulate(cfg: RunConfig, out) -> Path:
    """Render the configured scenario to ``out/baseline.csv`` and ``out/waveforms/``."""
    out = _out_dir(out)
    own_seed = cfg.parser.has_option("scenario", "seed") and not cfg.seed_override
    scn = synth.scenario_from_parser(cfg.parser, seed=None if own_seed else cfg.seed)
    generated = synth.generate_waveforms(scn)
    write_waveform(out / "baseline.csv", generated.baseline)
    meta = {
        "format": "leakhmm-waveforms/1",
        "scenario": scn.name,
        "labels": ",".join(scn.states),
        "seed": scn.seed,
        "generator": synth.GENERATOR_ID,
        "sample_rate_hz": _FMT % scn.sample_rate,
        "groups": scn.groups,
    }
    datastore.save_waveform_dir(out / "waveforms", generated.recordings, meta)
    log.info("wrote %d recordings of %d samples to %s", len(generated.recordings), scn.n_samples, out)
    return out


# -- features ----------------------------------------------------------------------


def extract_features(cfg: RunConfig, waveform_dir, baseline_file, out) -> dict:
    """Window every recording, compute damage indexes, split into train/test.

    Writes datasets ``out/all``, ``out/train`` and ``out/test``.
    """
    cfg.require_features()
    out = _out_dir(out)
    baseline = read_waveform(baseline_file)
    recordings = datastore.load_waveform_dir(waveform_dir)
    if not recordings:
        raise InvalidInputError(f"no waveforms in {waveform_dir}")
    meta, _ = datastore.read_manifest(Path(waveform_dir) / datastore.MANIFEST)
    if meta.get("labels"):
        label_names = meta["labels"].split(",")
    else:
        label_names = sorted({lab for _, _, lab in recordings})

    n_windows = window_count(len(baseline), cfg.window_length, cfg.stride)
    log.info(
        "window length %d, stride %d: %d observations per %d-sample waveform",
        cfg.window_length, cfg.stride, n_windows, len(baseline),
    )
    seqs = []
    for name, w, label in recordings:
        if label not in label_names:
            raise InvalidInputError(f"{name}: label {label!r} not in {label_names}")
        try:
            seq = extract_windowed(baseline, w, cfg.window, cfg.window_length, cfg.stride)
        except InvalidInputError as exc:
            raise InvalidInputError(f"{name}: {exc}") from exc
        seqs.append(ObservationSequence(seq.observations, np.full(len(seq), label_names.index(label)), name))
    ds = LabeledDataset(
        seqs,
        label_names,
        {
            "seed": str(cfg.split.seed),
            "generator": meta.get("generator", synth.GENERATOR_ID),
            "window_length": str(cfg.window_length),
            "stride": str(cfg.stride),
            "f_start_hz": _FMT % cfg.window.f_start,
            "f_stop_hz": _FMT % cfg.window.f_stop,
            "observations_per_waveform": str(n_windows),
        },
    )
    train, test = datastore.split(ds, cfg.split)
    datastore.save_dataset(out / "all", ds)
    datastore.save_dataset(out / "train", train)
    datastore.save_dataset(out / "test", test)
    return {"observations_per_waveform": n_windows, "train": len(train), "test": len(test)}


# -- train -------------------------------------------------------------------------


def train(cfg: RunConfig, features_dir, out) -> hmm.TrainReport:
    """Fit per-state mixtures on labelled data, then refine everything with Baum-Welch.

    Writes ``model.ini``, ``train_report.ini``, ``train_trace.csv`` and
    ``gmm_fit.csv``.
    """
    out = _out_dir(out)
    ds = datastore.load_dataset(features_dir)
    skeleton = hmm.make_preset(cfg.require_preset())
    if skeleton.n_states != len(ds.label_names):
        raise ConfigError(
            f"preset {cfg.preset} has {skeleton.n_states} states but the data have "
            f"{len(ds.label_names)} labels {ds.label_names}"
        )
    skeleton.state_names = list(ds.label_names)
    try:
        mixtures, gmm_reports = hmm.fit_state_emissions(
            ds.sequences, skeleton.n_states, cfg.n_components, cfg.gmm
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    model, report = hmm.baum_welch(skeleton.with_emissions(mixtures), ds.sequences, cfg.train)

    hmm.save_model(out / "model.ini", model)
    trace = report.log_likelihood_trace
    _write_ini(
        out / "train_report.ini",
        {
            "train": {
                "preset": cfg.preset,
                "sequences": len(ds),
                "observations": sum(len(s) for s in ds.sequences),
                "iterations": report.iterations,
                "converged": str(report.converged).lower(),
                "initial_log_likelihood": _FMT % trace[0],
                "final_log_likelihood": _FMT % trace[-1],
                "covariance_floor_hits": report.floored,
                "starved": " ".join(f"{it}:{j}" for it, j in report.starved),
            }
        },
    )
    _write_csv(
        out / "train_trace.csv",
        ["iteration", "log_likelihood", "negative_log_likelihood"],
        [(i, float(v), float(-v)) for i, v in enumerate(trace)],
    )
    _write_csv(
        out / "gmm_fit.csv",
        ["state", "iterations", "converged", "log_likelihood"],
        [
            (name, r.iterations, str(r.converged).lower(), float(r.log_likelihood_trace[-1]))
            for name, r in zip(ds.label_names, gmm_reports)
        ],
    )
    return report


# -- decode ------------------------------------------------------------------------


def decode(model_file, features_dir, out) -> Path:
    """Viterbi and posterior paths for every sequence, one CSV each, plus ``summary.csv``."""
    out = _out_dir(out)
    model = hmm.load_model(model_file)
    ds = datastore.load_dataset(features_dir)
    names = model.state_names
    summary = []
    for seq in ds.sequences:
        path, best = hmm.viterbi(model, seq)
        gamma, _, ll = hmm.forward_backward(model, seq)
        post = np.argmax(gamma, axis=1)
        step_nll = -hmm.step_log_likelihoods(model, seq)
        with np.errstate(divide="ignore"):
            log_post = np.log(gamma)
        rows = [
            (t, names[path[t]], names[post[t]], float(step_nll[t]), *map(float, log_post[t]))
            for t in range(len(seq))
        ]
        _write_csv(
            out / f"{seq.name}.csv",
            ["t", "viterbi", "posterior", "step_nll", *(f"logpost_{n}" for n in names)],
            rows,
        )
        summary.append((seq.name, len(seq), float(ll), float(best)))
    _write_csv(out / "summary.csv", ["sequence", "n_obs", "log_likelihood", "viterbi_log_prob"], summary)
    return out


def read_decoded(path, state_names) -> dict:
    index = {n: i for i, n in enumerate(state_names)}
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    cols = {h: i for i, h in enumerate(header)}
    rows = [ln.split(",") for ln in lines[1:] if ln]
    try:
        return {
            "viterbi": np.array([index[r[cols["viterbi"]]] for r in rows]),
            "posterior": np.array([index[r[cols["posterior"]]] for r in rows]),
            "step_nll": np.array([float(r[cols["step_nll"]]) for r in rows]),
        }
    except KeyError as exc:
        raise InvalidInputError(f"{path}: unknown state or column {exc}") from None


# -- eval --------------------------------------------------------------------------


@dataclass
class EvalReport:
    label_names: list
    per_observation_accuracy: float
    per_sequence_accuracy: float
    confusion: np.ndarray
    nll: dict = field(default_factory=dict)


def evaluate(predictions, labels, label_names, nll=None) -> EvalReport:
    """Score predicted state paths against true labels.

    Per-observation accuracy is correct steps over all steps.  Per-sequence
    accuracy counts a sequence correct when its most frequent predicted
    state equals its most frequent true state.  ``confusion[i, j]`` counts
    steps with true state ``i`` predicted as ``j``.
    """
    n = len(label_names)
    if len(predictions) != len(labels) or not labels:
        raise InvalidInputError(f"{len(predictions)} predicted paths for {len(labels)} label sequences")
    confusion = np.zeros((n, n), dtype=np.int64)
    seq_ok = 0
    for k, (p, y) in enumerate(zip(predictions, labels)):
        p, y = np.asarray(p), np.asarray(y)
        if p.shape != y.shape:
            raise InvalidInputError(f"sequence {k}: {p.size} predictions for {y.size} labels")
        np.add.at(confusion, (y, p), 1)
        seq_ok += np.argmax(np.bincount(p, minlength=n)) == np.argmax(np.bincount(y, minlength=n))
    return EvalReport(
        list(label_names),
        float(np.trace(confusion) / confusion.sum()),
        seq_ok / len(labels),
        confusion,
        dict(nll or {}),
    )


def run_eval(decoded_dir, features_dir, out) -> dict:
    """Score both decoders; write reports and plot-ready CSVs."""
    out = _out_dir(out)
    ds = datastore.load_dataset(features_dir)
    decoded = {s.name: read_decoded(Path(decoded_dir) / f"{s.name}.csv", ds.label_names) for s in ds.sequences}
    labels = [s.labels for s in ds.sequences]
    nll = {s.name: float(decoded[s.name]["step_nll"].sum()) for s in ds.sequences}
    reports = {
        dec: evaluate([decoded[s.name][dec] for s in ds.sequences], labels, ds.label_names, nll)
        for dec in ("posterior", "viterbi")
    }
    sections = {}
    for dec, rep in reports.items():
        sections[dec] = {
            "per_observation_accuracy": _FMT % rep.per_observation_accuracy,
            "per_sequence_accuracy": _FMT % rep.per_sequence_accuracy,
            "confusion": " ".join(map(str, rep.confusion.ravel())),
        }
        _write_csv(
            out / f"confusion_{dec}.csv",
            ["actual", *ds.label_names],
            [(name, *row) for name, row in zip(ds.label_names, rep.confusion)],
        )
    sections = {
        "eval": {
            "labels": ",".join(ds.label_names),
            "sequences": len(ds),
            "observations": sum(len(s) for s in ds.sequences),
            "primary_decoder": "posterior",
            "per_observation_accuracy": sections["posterior"]["per_observation_accuracy"],
            "total_negative_log_likelihood": _FMT % sum(nll.values()),
        },
        **sections,
    }
    _write_ini(out / "eval_report.ini", sections)
    _write_csv(out / "sequence_nll.csv", ["sequence", "n_obs", "negative_log_likelihood"],
               [(s.name, len(s), nll[s.name]) for s in ds.sequences])

    state_rows, nll_rows = [], []
    step = 0
    for s in ds.sequences:
        d = decoded[s.name]
        cum = np.cumsum(d["step_nll"])
        for t in range(len(s)):
            state_rows.append((step, s.name, t, int(s.labels[t]), int(d["posterior"][t]), int(d["viterbi"][t])))
            nll_rows.append((s.name, t, float(d["step_nll"][t]), float(cum[t])))
            step += 1
    _write_csv(out / "state_plot.csv", ["step", "sequence", "t", "actual", "posterior", "viterbi"], state_rows)
    _write_csv(out / "nll_plot.csv", ["sequence", "t", "step_nll", "cumulative_nll"], nll_rows)
    return reports
