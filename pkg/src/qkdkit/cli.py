"""Command-line front end: sweeps, estimation from yield files, simulation.

Commands
--------
``sweep``         key-rate vs distance curves, one CSV row per (delta, distance)
``estimate``      solve a single-party yield CSV and report the phase error rate
``simulate``      Monte Carlo run of the fiber model plus an estimate report
``mdi-estimate``  solve a two-party pair-yield CSV

Configuration is a flat ``key = value`` text file with ``#`` comments; any
command-line flag overrides the file.  All outputs are deterministic
functions of the configuration (plus seed) and are written atomically with
17 significant digits so reruns are byte-identical.

Exit codes: 0 success, 1 validation or I/O error, 2 ill-posed sources,
3 undefined rate.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from . import estimator, keyrate, montecarlo
from .channel import ChannelParams, single_photon_stats
from .errors import (
    InconsistentYieldsError,
    UndefinedRateError,
    ValidationError,
    WellPosednessError,
)
from .qstate import (
    BlochVector,
    QubitState,
    SourceSet,
    basis_state,
    bloch_to_density,
    three_state_sources,
    virtual_states_from_purification,
    virtual_states_planar,
)
from .estimator import YieldTable

SWEEP_HEADER = ("delta", "distance_km", "alpha_opt", "Q_z", "e_z", "Q_z1", "e_x1", "R")
COUNTS_HEADER = ("label", "basis", "outcome", "count")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ILL_POSED = 2
EXIT_UNDEFINED = 3


@dataclass(frozen=True)
class RunConfig:
    """Flattened run configuration; defaults reproduce the reference curves."""

    protocol: str = "three-state"
    dark_count: float = 0.5e-7
    det_eff: float = 0.15
    atten_db_per_km: float = 0.21
    delta: tuple[float, ...] = (0.0, 0.063, 0.126)
    distance_start: float = 0.0
    distance_stop: float = 150.0
    distance_step: float = 5.0
    f_ec: float = 1.22
    alpha: float | None = None
    alpha_min: float = 1e-4
    alpha_max: float = 1.0
    alpha_tol: float = 1e-4
    seed: int = 1
    pulses: int = 1_000_000
    gamma: float = 0.5
    out: str | None = None

    def __post_init__(self) -> None:
        if self.protocol not in ("three-state", "four-state", "mdi"):
            raise ValidationError(f"invalid field protocol: {self.protocol!r}")
        if self.distance_step <= 0.0:
            raise ValidationError("invalid field distance_step: must be > 0")
        if self.pulses < 0:
            raise ValidationError("invalid field pulses: must be >= 0")

    def distances(self) -> list[float]:
        out = []
        i = 0
        while True:
            d = self.distance_start + i * self.distance_step
            if d > self.distance_stop + 1e-9:
                return out
            out.append(d)
            i += 1

    def channel_params(self, distance_km: float, delta: float) -> ChannelParams:
        return ChannelParams(
            dark_count=self.dark_count,
            det_eff=self.det_eff,
            atten_db_per_km=self.atten_db_per_km,
            distance_km=distance_km,
            delta=delta,
            alpha=self.alpha if self.alpha is not None else 0.5,
        )


_FLOAT_FIELDS = {
    "dark_count", "det_eff", "atten_db_per_km", "f_ec",
    "alpha", "alpha_min", "alpha_max", "alpha_tol", "gamma",
}
_INT_FIELDS = {"seed", "pulses"}


def _parse_distance_range(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"invalid field distance: expected START:STOP:STEP, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValidationError(f"invalid field distance: non-numeric part in {text!r}") from None
    return start, stop, step


def _config_from_mapping(values: dict[str, str]) -> dict[str, object]:
    """Convert raw string config values to RunConfig keyword arguments."""
    known = {f.name for f in fields(RunConfig)}
    out: dict[str, object] = {}
    for key, raw in values.items():
        if key == "distance":
            start, stop, step = _parse_distance_range(raw)
            out["distance_start"], out["distance_stop"], out["distance_step"] = start, stop, step
            continue
        if key not in known:
            raise ValidationError(f"unknown config field {key!r}")
        try:
            if key == "delta":
                out[key] = tuple(float(p) for p in raw.replace(",", " ").split())
            elif key in _FLOAT_FIELDS:
                out[key] = float(raw)
            elif key in _INT_FIELDS:
                out[key] = int(raw)
            elif key in ("distance_start", "distance_stop", "distance_step"):
                out[key] = float(raw)
            else:
                out[key] = raw
        except ValueError:
            raise ValidationError(f"invalid field {key}: cannot parse {raw!r}") from None
    return out


def load_config_file(path: str) -> dict[str, object]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return _config_from_mapping(values)


def _format(value: float) -> str:
    return format(float(value), ".17g")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    handle = tempfile.NamedTemporaryFile(
        "w", dir=directory, delete=False, encoding="utf-8", newline=""
    )
    try:
        handle.write(text)
        handle.flush()
        os.fsync(handle.fileno())
        handle.close()
        os.replace(handle.name, path)
    except BaseException:
        handle.close()
        if os.path.exists(handle.name):
            os.unlink(handle.name)
        raise


def cmd_sweep(config: RunConfig) -> int:
    if config.out is None:
        raise ValidationError("invalid field out: sweep requires an output path")
    params = config.channel_params(0.0, 0.0)
    lines = [",".join(SWEEP_HEADER)]
    for delta in config.delta:
        points = keyrate.sweep(
            config.distances(),
            delta,
            params,
            f_ec=config.f_ec,
            bounds=(config.alpha_min, config.alpha_max),
            tol=config.alpha_tol,
            alpha=config.alpha,
        )
        for point in points:
            lines.append(",".join([
                _format(delta),
                _format(point.distance_km),
                _format(point.alpha_opt),
                _format(point.q_z),
                _format(point.e_z),
                _format(point.q_z1),
                _format(point.e_x1),
                _format(point.rate),
            ]))
    _atomic_write(config.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _read_counts_csv(path: str) -> montecarlo.TrialRecord:
    """Parse a counts CSV (the ``simulate`` output schema) into a trial."""
    counts: dict[tuple[str, str, object], int] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not set(COUNTS_HEADER).issubset(reader.fieldnames):
            raise ValidationError(
                f"{path}: counts CSV must have columns {list(COUNTS_HEADER)}"
            )
        for row in reader:
            outcome: object = row["outcome"].strip()
            if outcome in ("0", "1"):
                outcome = int(outcome)
            key = (row["label"].strip(), row["basis"].strip(), outcome)
            if key in counts:
                raise ValidationError(f"{path}: duplicate counts row {key}")
            counts[key] = int(row["count"])
    if not counts:
        raise ValidationError(f"{path}: no count rows found")
    return montecarlo.TrialRecord(
        counts=counts, n_pulses=sum(counts.values()), rng_seed=0
    )


def _read_yield_csv(path: str) -> tuple[YieldTable, SourceSet]:
    """Parse a single-party yield CSV into a table plus source states.

    Required columns: label, basis, outcome, probability, prior.  The prior
    column is the full per-(state, basis) prefactor (1/6 in the uniform
    three-state protocol).  Optional px, py, pz columns override the
    canonical state for a label; otherwise labels must be canonical
    (0z, 1z, 0x, 1x, 0y, 1y).
    """
    yields: dict[tuple[str, int, str], float] = {}
    priors: dict[str, float] = {}
    states: dict[str, QubitState] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"label", "basis", "outcome", "probability", "prior"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(
                f"{path}: yield CSV must have columns {sorted(required)}"
            )
        for row in reader:
            label = row["label"].strip()
            basis = row["basis"].strip()
            outcome = int(row["outcome"])
            probability = float(row["probability"])
            prior = float(row["prior"])
            key = (basis, outcome, label)
            if key in yields:
                raise ValidationError(f"{path}: duplicate cell {key}")
            yields[key] = probability
            if label in priors and abs(priors[label] - prior) > 1e-12:
                raise ValidationError(f"{path}: inconsistent priors for label {label!r}")
            priors[label] = prior
            if label not in states:
                if row.get("px") not in (None, ""):
                    bloch = BlochVector(
                        v0=1.0,
                        px=float(row["px"]),
                        py=float(row.get("py") or 0.0),
                        pz=float(row.get("pz") or 0.0),
                    )
                    states[label] = bloch_to_density(bloch)
                else:
                    states[label] = basis_state(label)
    if not yields:
        raise ValidationError(f"{path}: no yield rows found")
    # The prior column is the joint prefactor P(label) * P(basis); factorize it
    # so the table's weight(basis, label) reproduces it exactly.
    total = sum(priors.values())
    if not (0.0 < total <= 1.0 + 1e-9):
        raise ValidationError(f"{path}: prior column sums to {total!r} per basis")
    sources = SourceSet(
        entries=tuple(
            (label, states[label], priors[label] / total) for label in priors
        )
    )
    # input tables are typically empirical, so allow sampling-noise slack in
    # the prior-consistency checks (the solvers stay strict)
    table = YieldTable(
        yields,
        {label: prior / total for label, prior in priors.items()},
        {basis: total for basis in {k[0] for k in yields}},
        consistency_tol=1e-2,
    )
    return table, sources


def _is_counts_file(path: str) -> bool:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        header = handle.readline()
    return "count" in [col.strip() for col in header.split(",")]


def cmd_estimate(config: RunConfig, yields_path: str) -> int:
    if _is_counts_file(yields_path):
        # counts from a `simulate` run: statistical estimate with error bar
        trial = _read_counts_csv(yields_path)
        sources = three_state_sources()
        estimate = montecarlo.estimate_from_trial(trial, sources)
        print(f"pulses: {trial.n_pulses}")
        print(f"e_x_estimate: {_format(estimate.e_x)}")
        print(f"std_err: {_format(estimate.std_err)}")
        return EXIT_OK
    table, sources = _read_yield_csv(yields_path)
    missing = [
        ("x", s, label)
        for s in (0, 1)
        for label in sources.labels
        if ("x", s, label) not in table.yields
    ]
    if missing:
        raise ValidationError(f"{yields_path}: missing yield entries {missing}")
    report = estimator.check_well_posed(sources.blochs())
    print(f"condition_number: {_format(report.condition_number)}")
    if not report.well_posed:
        raise WellPosednessError(f"sources are ill-posed ({report.reason})")
    planar = len(sources) == 3
    functionals = {
        s: estimator.solve_functional(table, sources, outcome=s, basis="x")
        for s in (0, 1)
    }
    for s, functional in functionals.items():
        coeffs = " ".join(f"{k}={_format(v)}" for k, v in functional.q.items())
        print(f"q[outcome={s}]: {coeffs}")
    if "0z" in sources.labels and "1z" in sources.labels:
        ensemble = virtual_states_from_purification(
            sources.state("0z"), sources.state("1z"), flip=False, basis="x"
        )
    else:
        ensemble = virtual_states_planar(0.0)
    # joint prefactor of virtual state j: P(Z pair) * P(X basis) * w_j
    z_pair_weight = (sources.prior("0z") + sources.prior("1z")) * 0.5 \
        if "0z" in sources.labels and "1z" in sources.labels else 1.0 / len(sources)
    for j, (w_j, state) in enumerate(ensemble.entries):
        for s, functional in functionals.items():
            value = estimator.predict_yield(functional, state, prior=w_j * z_pair_weight)
            print(f"virtual_yield[outcome={s},{j}x]: {_format(value)}")
    if planar and set(sources.labels) == {"0z", "1z", "0x"} and all(
        np.allclose(sources.state(lab).density, basis_state(lab).density, atol=1e-12)
        for lab in sources.labels
    ):
        e_x = estimator.phase_error_three_state(table)
    else:
        e_x = estimator.phase_error_virtual(functionals[0], functionals[1], ensemble)
    print(f"e_x: {_format(e_x)}")
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    if config.protocol != "three-state":
        raise ValidationError(
            "invalid field protocol: event-level simulation supports three-state only"
        )
    if config.pulses < 1:
        raise ValidationError("invalid field pulses: simulate needs pulses >= 1")
    delta = config.delta[0] if config.delta else 0.0
    params = config.channel_params(config.distance_start, delta)
    experiment = montecarlo.fiber_experiment(params)
    trial = montecarlo.run_protocol(
        config.pulses,
        experiment.sources,
        experiment.channel,
        experiment.povm,
        seed=config.seed,
        mixer=experiment.mixer,
    )
    if config.out is not None:
        lines = [",".join(COUNTS_HEADER)]
        for (label, basis, outcome), count in sorted(
            trial.counts.items(), key=lambda item: (item[0][0], item[0][1], str(item[0][2]))
        ):
            lines.append(f"{label},{basis},{outcome},{count}")
        _atomic_write(config.out, "\n".join(lines) + "\n")
    estimate = montecarlo.estimate_from_trial(trial, experiment.sources)
    _, analytic = single_photon_stats(params)
    if estimate.std_err > 0.0:
        z_score = (estimate.e_x - analytic) / estimate.std_err
    else:
        z_score = 0.0 if estimate.e_x == analytic else math.inf

    print(f"pulses: {config.pulses}")
    print(f"seed: {config.seed}")
    print(f"e_x_estimate: {_format(estimate.e_x)}")
    print(f"std_err: {_format(estimate.std_err)}")
    print(f"e_x_analytic: {_format(analytic)}")
    print(f"z_score: {_format(z_score)}")
    return EXIT_OK


def _read_pair_yield_csv(path: str) -> tuple[dict[tuple[str, str], float], float]:
    """Parse a two-party pair-yield CSV; returns pair yields and gamma.

    Columns: label_a, label_b, probability, prior.  The prior column holds
    the per-pair prefactor (gamma/9 for Z-Z pairs, 1/9 otherwise) and must
    be internally consistent.
    """
    pairs: dict[tuple[str, str], float] = {}
    gamma: float | None = None
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"label_a", "label_b", "probability", "prior"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(
                f"{path}: pair-yield CSV must have columns {sorted(required)}"
            )
        for row in reader:
            key = (row["label_a"].strip(), row["label_b"].strip())
            if key in pairs:
                raise ValidationError(f"{path}: duplicate pair {key}")
            pairs[key] = float(row["probability"])
            prior = float(row["prior"])
            if key[0].endswith("z") and key[1].endswith("z"):
                implied = prior * 9.0
                if gamma is not None and abs(gamma - implied) > 1e-12:
                    raise ValidationError(f"{path}: inconsistent Z-Z priors")
                gamma = implied
            elif abs(prior - 1.0 / 9.0) > 1e-12:
                raise ValidationError(
                    f"{path}: pairs involving X states must carry prior 1/9"
                )
    if gamma is None:
        raise ValidationError(f"{path}: no Z-Z pair rows found")
    return pairs, gamma


def cmd_mdi_estimate(config: RunConfig, yields_path: str) -> int:
    pairs, gamma = _read_pair_yield_csv(yields_path)
    labels_a = sorted({a for a, _ in pairs})
    labels_b = sorted({b for _, b in pairs})
    if len(labels_a) != 3 or len(labels_b) != 3:
        raise ValidationError("each party must contribute exactly 3 labels")

    def canonical(labels: list[str]) -> SourceSet:
        return SourceSet(
            entries=tuple((lab, basis_state(lab), 1.0 / 3.0) for lab in labels)
        )

    sources_a, sources_b = canonical(labels_a), canonical(labels_b)
    functional = estimator.mdi_solve(pairs, sources_a, sources_b, gamma)
    axes = ("id", "x", "z")
    for i, s in enumerate(axes):
        for j, t in enumerate(axes):
            print(f"q[{s},{t}]: {_format(functional.q[i, j])}")
    ensemble = virtual_states_planar(0.0)
    for j, (wa, sa) in enumerate(ensemble.entries):
        for k, (wb, sb) in enumerate(ensemble.entries):
            value = wa * wb * functional.evaluate(sa.bloch(), sb.bloch()) / 9.0
            print(f"virtual_pair_yield[{j}x,{k}x]: {_format(value)}")
    e_x = estimator.mdi_phase_error(functional, ensemble, ensemble)
    print(f"e_x: {_format(e_x)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdkit",
        description="Loss-tolerant phase-error estimation and key-rate simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_input in (
        ("sweep", False),
        ("estimate", True),
        ("simulate", False),
        ("mdi-estimate", True),
    ):
        cmd = sub.add_parser(name)
        if needs_input:
            cmd.add_argument("yields", help="input yield CSV")
        cmd.add_argument("--config", metavar="PATH")
        cmd.add_argument("--out", metavar="PATH")
        cmd.add_argument("--delta", type=float, action="append", metavar="F")
        cmd.add_argument("--distance", metavar="START:STOP:STEP")
        cmd.add_argument("--alpha", type=float, metavar="F")
        cmd.add_argument("--optimize", action="store_true")
        cmd.add_argument("--seed", type=int, metavar="U64")
        cmd.add_argument("--pulses", type=int, metavar="U64")
        cmd.add_argument("--f-ec", type=float, dest="f_ec", metavar="F")
        cmd.add_argument("--protocol", metavar="NAME")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    kwargs: dict[str, object] = {}
    if args.config is not None:
        kwargs.update(load_config_file(args.config))
    if args.out is not None:
        kwargs["out"] = args.out
    if args.delta:
        kwargs["delta"] = tuple(args.delta)
    if args.distance is not None:
        start, stop, step = _parse_distance_range(args.distance)
        kwargs["distance_start"], kwargs["distance_stop"], kwargs["distance_step"] = (
            start, stop, step,
        )
    if args.alpha is not None:
        kwargs["alpha"] = args.alpha
    if args.optimize:
        kwargs["alpha"] = None
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.pulses is not None:
        kwargs["pulses"] = args.pulses
    if args.f_ec is not None:
        kwargs["f_ec"] = args.f_ec
    if args.protocol is not None:
        kwargs["protocol"] = args.protocol
    return RunConfig(**kwargs)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "sweep":
            return cmd_sweep(config)
        if args.command == "estimate":
            return cmd_estimate(config, args.yields)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "mdi-estimate":
            return cmd_mdi_estimate(config, args.yields)
        raise ValidationError(f"unknown command {args.command!r}")
    except WellPosednessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ILL_POSED
    except UndefinedRateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (ValidationError, InconsistentYieldsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
