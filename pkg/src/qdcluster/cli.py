"""Command-line entry point.

Scenario files are JSON with unit suffixes in the key names; see
``configs/baseline.json``.  Every output is a CSV with a fixed header plus a
``metadata.json`` sidecar.  Nothing time-dependent is written, so the same
config and seed always give byte-identical files.

Exit codes: 0 success, 2 invalid config or input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__, analysis, protocol, trion
from .errors import ConfigError, ParameterError, QdClusterError
from .trion import DeviceParams, JONES

log = logging.getLogger("qdcluster")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

TRUTH_TABLE_MODES = ("t23_equals_t12", "t23_equals_2t12")

# config key -> (DeviceParams field, scale to internal units, required)
_DEVICE_NUMBERS = {
    "g_ground": ("g_ground", 1.0, True),
    "g_excited": ("g_excited", 1.0, True),
    "t2_ground_ns": ("t2_ground", 1.0, True),
    "t2_excited_ns": ("t2_excited", 1.0, True),
    "t_rad_ns": ("t_rad", 1.0, True),
    "window_ns": ("window", 1.0, True),
    "b_field_mT": ("b_field", 1e-3, False),
    "p0": ("p0", 1.0, False),
}
_DEVICE_OTHER = ("pulse_polarization", "ground_dephasing", "instantaneous_emission")
_INFINITE_OK = {"t2_ground_ns", "t2_excited_ns"}
_POSITIVE = {"t2_ground_ns", "t2_excited_ns", "t_rad_ns", "window_ns"}
_TOP_KEYS = {"label", "device", "schedule", "k_max", "sweep", "overhauser_nodes",
             "emission_quadrature_steps", "seed"}


def _number(path: str, value, *, integer: bool = False, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {json.dumps(value)}")
    if integer and not float(value).is_integer():
        raise ConfigError(path, f"expected an integer, got {value}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(path, f"must be <= {maximum}, got {value}")
    return int(value) if integer else float(value)


def _mapping(path: str, value, allowed: Iterable[str]) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    return value


def _polarization(value) -> tuple[complex, complex]:
    path = "device.pulse_polarization"
    if isinstance(value, str):
        if value not in JONES:
            raise ConfigError(path, f"expected one of {sorted(JONES)}, got {value!r}")
        return JONES[value]
    if isinstance(value, dict):
        _mapping(path, value, {"linear_angle_deg"})
        if "linear_angle_deg" not in value:
            raise ConfigError(f"{path}.linear_angle_deg", "required")
        angle = _number(f"{path}.linear_angle_deg", value["linear_angle_deg"])
        return trion.linear_polarization(math.radians(angle))
    raise ConfigError(path, "expected a basis label or {\"linear_angle_deg\": ...}")


@dataclass(frozen=True)
class ScenarioConfig:
    label: str
    device: DeviceParams
    raw_device: dict
    t12: float = protocol.DEFAULT_T12
    k_max: int = 3
    epsilons: tuple[float, ...] = ()
    overhauser_nodes: int = trion.DEFAULT_OVERHAUSER_NODES
    emission_steps: int = trion.DEFAULT_EMISSION_STEPS
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Any) -> ScenarioConfig:
        data = _mapping("", data, _TOP_KEYS)
        label = data.get("label")
        if not isinstance(label, str) or not label:
            raise ConfigError("label", "required non-empty string")

        if "device" not in data:
            raise ConfigError("device", "required")
        dev = _mapping("device", data["device"], [*_DEVICE_NUMBERS, *_DEVICE_OTHER])
        schedule = _mapping("schedule", data.get("schedule", {}), {"t12_ns"})
        t12 = _number("schedule.t12_ns", schedule.get("t12_ns", protocol.DEFAULT_T12), minimum=1e-6)

        kwargs: dict[str, Any] = {}
        for key, (name, scale, required) in _DEVICE_NUMBERS.items():
            path = f"device.{key}"
            if key not in dev:
                if required:
                    raise ConfigError(path, "required")
                continue
            value = dev[key]
            if value is None:
                if key in _INFINITE_OK:
                    kwargs[name] = math.inf
                elif key == "b_field_mT":
                    continue
                else:
                    raise ConfigError(path, "may not be null")
            else:
                number = _number(path, value)
                if key in _POSITIVE and number <= 0:
                    raise ConfigError(path, f"must be positive, got {number}")
                if key == "b_field_mT" and number < 0:
                    raise ConfigError(path, f"must be non-negative, got {number}")
                if key == "p0" and not 0 < number <= 1:
                    raise ConfigError(path, f"must lie in (0, 1], got {number}")
                kwargs[name] = number * scale
        if dev.get("b_field_mT") is None:
            kwargs["b_field"] = trion.quarter_period_field(kwargs["g_ground"], t12)
        if "pulse_polarization" in dev:
            kwargs["pulse_polarization"] = _polarization(dev["pulse_polarization"])
        if "ground_dephasing" in dev:
            model = dev["ground_dephasing"]
            if model not in trion.DEPHASING_MODELS:
                raise ConfigError("device.ground_dephasing", f"expected one of {list(trion.DEPHASING_MODELS)}")
            kwargs["ground_dephasing"] = model
        if "instantaneous_emission" in dev:
            if not isinstance(dev["instantaneous_emission"], bool):
                raise ConfigError("device.instantaneous_emission", "expected true or false")
            kwargs["instantaneous_emission"] = dev["instantaneous_emission"]
        try:
            device = DeviceParams(**kwargs)
        except ParameterError as exc:
            raise ConfigError("device", str(exc)) from exc

        k_max = _number("k_max", data.get("k_max", 3), integer=True, minimum=1, maximum=protocol.MAX_PHOTONS)
        epsilons: tuple[float, ...] = ()
        if "sweep" in data:
            sweep = _mapping("sweep", data["sweep"], {"epsilons"})
            raw = sweep.get("epsilons")
            if not isinstance(raw, list) or not raw:
                raise ConfigError("sweep.epsilons", "expected a non-empty list")
            epsilons = tuple(_number(f"sweep.epsilons[{i}]", e, minimum=0.0, maximum=0.99)
                             for i, e in enumerate(raw))
            if len(set(epsilons)) != len(epsilons):
                raise ConfigError("sweep.epsilons", "duplicate values")
        nodes = _number("overhauser_nodes", data.get("overhauser_nodes", trion.DEFAULT_OVERHAUSER_NODES),
                        integer=True, minimum=1, maximum=256)
        steps = _number("emission_quadrature_steps",
                        data.get("emission_quadrature_steps", trion.DEFAULT_EMISSION_STEPS),
                        integer=True, minimum=2, maximum=4096)
        if steps % 2:
            raise ConfigError("emission_quadrature_steps", "must be even")
        seed = _number("seed", data.get("seed", 0), integer=True, minimum=0, maximum=2 ** 64 - 1)
        if t12 < device.window and not device.instantaneous_emission:
            raise ConfigError("schedule.t12_ns", f"shorter than the {device.window} ns window")
        return cls(label, device, dict(dev), t12, k_max, epsilons, nodes, steps, seed)

    @classmethod
    def load(cls, path: str | Path) -> ScenarioConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "label": self.label,
            "device": dict(self.raw_device),
            "schedule": {"t12_ns": self.t12},
            "k_max": self.k_max,
            "overhauser_nodes": self.overhauser_nodes,
            "emission_quadrature_steps": self.emission_steps,
            "seed": self.seed,
        }
        if self.epsilons:
            d["sweep"] = {"epsilons": list(self.epsilons)}
        return d

    def with_seed(self, seed: int | None) -> ScenarioConfig:
        if seed is None:
            return self
        return ScenarioConfig.from_dict({**self.to_dict(), "seed": seed})

    def content_hash(self) -> str:
        """Git-style blob hash of the canonical config."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()


def shipped_config(name: str) -> Path:
    return Path(str(resources.files("qdcluster") / "configs" / f"{name}.json"))


def resolve_config(arg: str) -> Path:
    path = Path(arg)
    if path.exists() or path.suffix:
        return path
    return shipped_config(arg)


# -- work items -----------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    kind: str          # "table" or "point"
    key: tuple
    device: DeviceParams
    reference: DeviceParams | None = None
    t12: float = protocol.DEFAULT_T12
    nodes: int = trion.DEFAULT_OVERHAUSER_NODES
    steps: int = trion.DEFAULT_EMISSION_STEPS


def _run_task(task: _Task):
    if task.kind == "table":
        return task.key, protocol.truth_table(task.device, task.key[0], task.t12, task.nodes, task.steps)
    k = task.key[-1]
    return task.key, protocol.fidelity_point(task.device, k, task.t12, task.nodes, task.steps, task.reference)


def _run_all(tasks: Sequence[_Task], jobs: int) -> dict:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    return dict(results)


# -- output ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x) + 0.0)
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_fmt) + "\n")


def _echo(cfg: ScenarioConfig) -> dict:
    p = cfg.device
    f_h = trion.larmor_frequency(p.g_ground, p.b_field)
    f_e = trion.larmor_frequency(p.g_excited, p.b_field)
    derived = {
        "b_field_mT": p.b_field * 1e3,
        "b_field_derived": cfg.raw_device.get("b_field_mT") is None,
        "hole_larmor_period_ns": 1 / f_h if f_h else math.inf,
        "electron_larmor_period_ns": 1 / f_e if f_e else math.inf,
        "capture_probability": p.capture_probability,
    }
    log.info("scenario %s: b=%.4f mT, T_h=%.4f ns, T_e=%.4f ns, t12=%g ns",
             cfg.label, derived["b_field_mT"], derived["hole_larmor_period_ns"],
             derived["electron_larmor_period_ns"], cfg.t12)
    return derived


def _metadata(cfg: ScenarioConfig, command: str, **extra) -> dict:
    return {
        "command": command,
        "label": cfg.label,
        "config_hash": cfg.content_hash(),
        "config": cfg.to_dict(),
        "tool_version": __version__,
        "epsilon_mapping": protocol.EPSILON_MAPPING,
        "ground_dephasing": cfg.device.ground_dephasing,
        **extra,
    }


# -- commands -------------------------------------------------------------------

def run_scenario(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    derived = _echo(cfg)
    p = cfg.device
    tasks = [_Task("table", (m,), p, None, cfg.t12, cfg.overhauser_nodes, cfg.emission_steps)
             for m in TRUTH_TABLE_MODES]
    tasks += [_Task("point", (k,), p, None, cfg.t12, cfg.overhauser_nodes, cfg.emission_steps)
              for k in range(1, cfg.k_max + 1)]
    res = _run_all(tasks, jobs)

    rows = []
    for mode in TRUTH_TABLE_MODES:
        for a, b, prob, _ in res[(mode,)].records():
            rows.append((mode, res[(mode,)].basis2, res[(mode,)].basis3, a, b, prob))
    write_csv(out / "truth_tables.csv", ("mode", "basis2", "basis3", "outcome2", "outcome3", "probability"), rows)

    tag = protocol.params_hash(p)
    points = [(k + 1, *res[(k,)]) for k in range(1, cfg.k_max + 1)]
    write_csv(out / "fidelity_curve.csv", ("label", "total_qubits", "fidelity", "params_hash"),
              [(cfg.label, n, f, tag) for n, f, _ in points])
    write_csv(out / "capture.csv", ("n_photons", "capture_per_pulse", "sequence_probability"),
              [(n - 1, p.capture_probability, prob) for n, _, prob in points])

    curve = protocol.FidelityCurve(cfg.label, tuple((n, f, tag) for n, f, _ in points))
    fids = curve.fidelities
    meta = _metadata(cfg, "simulate", derived=derived,
                     crossing_total_qubits=curve.crossing(0.5),
                     non_increasing_in_k=all(b <= a + 1e-12 for a, b in zip(fids, fids[1:])))
    write_json(out / "metadata.json", meta)
    return meta


def run_sweep(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> dict:
    if not cfg.epsilons:
        raise ConfigError("sweep.epsilons", "required for the sweep command")
    out.mkdir(parents=True, exist_ok=True)
    derived = _echo(cfg)
    base = cfg.device
    tasks = [_Task("point", (eps, k), protocol.apply_systematic_error(base, eps), base,
                   cfg.t12, cfg.overhauser_nodes, cfg.emission_steps)
             for eps in cfg.epsilons for k in range(1, cfg.k_max + 1)]
    res = _run_all(tasks, jobs)

    curves = []
    for eps in sorted(cfg.epsilons):
        tag = protocol.params_hash(protocol.apply_systematic_error(base, eps))
        entries = tuple((k + 1, res[(eps, k)][0], tag) for k in range(1, cfg.k_max + 1))
        curves.append(protocol.FidelityCurve(f"eps={eps:g}", entries, {"epsilon": eps}))
    band = [(c.metadata["epsilon"], n, f) for c in curves for n, f in zip(c.total_qubits, c.fidelities)]
    write_csv(out / "band.csv", ("epsilon", "total_qubits", "fidelity"), band)
    for c in curves:
        write_csv(out / f"curve_eps_{c.metadata['epsilon']:g}.csv",
                  ("label", "total_qubits", "fidelity", "params_hash"),
                  [(c.label, n, f, h) for n, f, h in c.entries])

    ordered = protocol.is_pointwise_ordered(curves)
    if not ordered:
        log.warning("fidelity band is not pointwise ordered in epsilon")
    meta = _metadata(cfg, "sweep", derived=derived, pointwise_ordered=ordered,
                     crossings={f"{c.metadata['epsilon']:g}": c.crossing(0.5) for c in curves})
    write_json(out / "metadata.json", meta)
    return meta


def run_fit_dcp(data: Path, out: Path, fix_frequency: float | None = None) -> analysis.DcpFit:
    series = analysis.read_time_series(data)
    guess = None
    if fix_frequency is not None:
        g = analysis.initial_dcp_guess(series)
        guess = analysis.DcpFit(g.p0, g.t2_star, fix_frequency)
    fit = analysis.fit_dcp(series, guess, fix_frequency=fix_frequency is not None)
    out.mkdir(parents=True, exist_ok=True)
    err = fit.stderr
    write_csv(out / "dcp_fit.csv", ("parameter", "value", "stderr"),
              [("p0", fit.p0, err[0]), ("t2_star_ns", fit.t2_star, err[1]),
               ("f_L_GHz", fit.f_L, err[2]), ("residual_rms", fit.residual_rms, 0.0)])
    return fit


def run_gfactor(data: Path, out: Path) -> analysis.Estimate:
    g = analysis.fit_gfactor(analysis.read_gfactor_points(data))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "gfactor.csv", ("g", "stderr"), [(g.value, g.err)])
    return g


def run_fidelity(data: Path, out: Path, seed: int = 0, monte_carlo: bool = False) -> analysis.FidelityReport:
    counts = analysis.read_counts(data)
    for key in (("RL", "RL"), ("HV", "RL")):
        if key not in counts:
            raise ParameterError(f"counts for basis pair {key[0]}/{key[1]} missing")
    circ = analysis.conditional_probs(counts[("RL", "RL")])
    lin = analysis.conditional_probs(counts[("HV", "RL")])
    rng = np.random.default_rng(seed) if monte_carlo else None
    report = analysis.fidelity_bounds(circ, lin, monte_carlo=monte_carlo, rng=rng)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(t.basis2, t.basis3, a, b, prob, e) for t in (circ, lin) for a, b, prob, e in t.records()]
    write_csv(out / "conditional_probs.csv",
              ("basis2", "basis3", "outcome2", "outcome3", "probability", "stderr"), rows)
    write_csv(out / "fidelity.csv", ("quantity", "value", "stderr"),
              [(k, v.value, v.err) for k, v in report.as_dict().items()])
    write_json(out / "metadata.json", {"command": "fidelity", "tool_version": __version__,
                                       "seed": seed, **report.metadata})
    return report


# -- argument handling ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdcluster", description="Simulate quantum-dot cluster-state generation and analyse measurements.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config: bool):
        if config:
            p.add_argument("--config", required=True,
                           help="scenario JSON, or the name of a shipped config (baseline, ideal, improved)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    common(sub.add_parser("simulate", help="truth tables, fidelity curve and capture for one scenario"), True)
    common(sub.add_parser("sweep", help="fidelity band over systematic-error strengths"), True)
    p = sub.add_parser("fit-dcp", help="fit a damped cosine to a DCP trace (time_ns,dcp[,err])")
    p.add_argument("data")
    p.add_argument("--fix-frequency", type=float, default=None, metavar="GHZ",
                   help="hold f_L at this value and fit amplitude and T2* only")
    common(p, False)
    p = sub.add_parser("gfactor", help="g factor from Larmor frequencies (b_T,f_GHz[,err_GHz])")
    p.add_argument("data")
    common(p, False)
    p = sub.add_parser("fidelity", help="fidelity ladder from coincidence counts")
    p.add_argument("data", help="CSV: basis2,basis3,outcome2,outcome3,count")
    p.add_argument("--monte-carlo", action="store_true", help="binomial resampling errors instead of the delta method")
    common(p, False)
    return parser


def _dispatch(args) -> None:
    out = Path(args.out)
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be at least 1")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError("--seed", "must be an unsigned 64-bit integer")
    if args.command in ("simulate", "sweep"):
        cfg = ScenarioConfig.load(resolve_config(args.config)).with_seed(args.seed)
        run: Callable = run_scenario if args.command == "simulate" else run_sweep
        meta = run(cfg, out, args.jobs)
        print(json.dumps({k: meta[k] for k in meta if k != "config"}, sort_keys=True, default=_fmt))
        return
    data = Path(args.data)
    if not data.exists():
        raise ConfigError("data", f"{data} does not exist")
    try:
        if args.command == "fit-dcp":
            fit = run_fit_dcp(data, out, args.fix_frequency)
            print(f"p0={fit.p0:.6g} t2_star_ns={fit.t2_star:.6g} f_L_GHz={fit.f_L:.6g}")
        elif args.command == "gfactor":
            g = run_gfactor(data, out)
            print(f"g={g.value:.6g} +- {g.err:.2g}")
        else:
            rep = run_fidelity(data, out, args.seed or 0, args.monte_carlo)
            for k, v in rep.as_dict().items():
                print(f"{k}={v.value:.4f} +- {v.err:.4f}")
    except ConfigError:
        raise
    except (ParameterError, ValueError, KeyError) as exc:
        raise ConfigError("data", str(exc)) from exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"{exc.field}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except (QdClusterError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
