"""Command-line front end: ``fsistab <subcommand> --config <path> [--out DIR] [--seed N]``.

Configuration files are flat ``key = value`` lines with ``#`` comments.
Every CSV written starts with a comment line holding the fully resolved
configuration, followed by a header row.  Floats are written with 17
significant digits so identical runs give byte-identical files.

Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fsistab.analyze import datko_check, decay_fit, multiplier_report, spectrum
from fsistab.elliptic import BeamSolver, LerayProjector, NeumannSolver
from fsistab.errors import (CapacityError, ConfigurationError, DimensionError, FsiError)
from fsistab.evolve import default_dt, evolve, resolved_dt
from fsistab.generator import (PRESETS, assemble_generator, build_ambient, check_cc, null_residual,
                               null_state, project_offnull)
from fsistab.grid import State, build_calculus, build_geometry

SUBCOMMANDS = ("simulate", "spectrum", "nullspace", "decay", "diagnose", "selftest")
FLOAT_FMT = "%.17g"
BALANCE_RTOL = 1e-10
NULL_RTOL = 1e-10

_INITIAL = re.compile(r"^(n0|random|random-offnull)(?:\((\d+)\))?$|^file\((.+)\)$")


@dataclass(frozen=True)
class RunConfig:
    L1: float = 1.0
    L2: float = 1.0
    nx: int = 16
    ny: int = 16
    nu: float = 1.0
    lam: float = 1.0
    eta: float = 1.0
    kappa: int = 0
    preset: str = "zero"
    amplitude: float = 1.0
    dt: str = "default"
    T: float = 20.0
    stride: int = 1
    initial: str = "random-offnull(0)"
    cap: int = 6000
    out: str = "."

    def time_step(self, calc) -> float:
        if self.dt == "default":
            return default_dt(calc)
        if self.dt == "resolved":
            return resolved_dt(calc)
        return float(self.dt)

    def initial_spec(self) -> tuple[str, int | None, str | None]:
        m = _INITIAL.match(self.initial)
        if m.group(3) is not None:
            return "file", None, m.group(3)
        return m.group(1), int(m.group(2)) if m.group(2) is not None else 0, None

    def with_seed(self, seed: int) -> "RunConfig":
        kind, _, path = self.initial_spec()
        if kind in ("random", "random-offnull"):
            return dataclasses.replace(self, initial=f"{kind}({seed})")
        return self

    def describe(self) -> str:
        """Resolved configuration; the output directory is left out so files compare across runs."""
        return "; ".join(f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)
                         if f.name != "out")


class ConfigError(ConfigurationError):
    """Configuration problem tied to a key and, when known, a line."""

    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")


def _parse_float(key, raw, line):
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}", line) from None
    if not np.isfinite(v):
        raise ConfigError(key, f"must be finite, got {raw!r}", line)
    return v


def _parse_int(key, raw, line):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {raw!r}", line) from None


_ALIASES = {"lambda": "lam", "preset": "preset", "ambient": "preset"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _validate(values: dict, lines: dict) -> None:
    def bad(key, msg):
        raise ConfigError(key, msg, lines.get(key))

    for key in ("L1", "L2", "nu", "eta", "T"):
        if not values[key] > 0:
            bad(key, f"must be positive, got {values[key]}")
    if values["lam"] < 0:
        bad("lam", f"must be nonnegative, got {values['lam']}")
    for key in ("nx", "ny"):
        if values[key] < 8:
            bad(key, f"must be at least 8, got {values[key]}")
    if values["kappa"] not in (0, 1):
        bad("kappa", f"must be 0 or 1, got {values['kappa']}")
    if values["preset"] not in PRESETS:
        bad("preset", f"unknown ambient preset {values['preset']!r}; choose from {PRESETS}")
    if values["amplitude"] < 0:
        bad("amplitude", f"must be nonnegative, got {values['amplitude']}")
    if values["stride"] < 1:
        bad("stride", f"must be a positive integer, got {values['stride']}")
    if values["cap"] < 1:
        bad("cap", f"must be positive, got {values['cap']}")
    dt = values["dt"]
    if dt not in ("default", "resolved"):
        v = _parse_float("dt", dt, lines.get("dt"))
        if not v > 0:
            bad("dt", f"must be positive, 'default' or 'resolved', got {dt}")
        if values["T"] < v:
            bad("T", f"must be at least dt ({v}), got {values['T']}")
    if not _INITIAL.match(values["initial"]):
        bad("initial", "expected n0, random(seed), random-offnull(seed) or file(path), "
                       f"got {values['initial']!r}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat ``key = value`` configuration."""
    values = {f.name: f.default for f in dataclasses.fields(RunConfig)}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(body.split()[0], "expected 'key = value'", lineno)
        key, val = (part.strip() for part in body.split("=", 1))
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(key, "unknown key", lineno)
        if not val:
            raise ConfigError(key, "missing value", lineno)
        kind = _FIELDS[name].type
        if kind == "float":
            values[name] = _parse_float(key, val, lineno)
        elif kind == "int":
            values[name] = _parse_int(key, val, lineno)
        else:
            values[name] = val
        lines[name] = lineno
    _validate(values, lines)
    return RunConfig(**values)


# ----------------------------------------------------------------------------
# files


def write_csv(path: Path, config: RunConfig, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config: {config.describe()}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else FLOAT_FMT % v for v in row) + "\n")


def write_table(path: Path, config: RunConfig, items: dict) -> None:
    write_csv(path, config, ["quantity", "value"],
              [(k, float(v)) for k, v in items.items()])


def save_state(path, geom, s: State) -> None:
    """Plain text: geometry header, then one value per line in block order p, u1, u2, w, v."""
    with open(path, "w", newline="\n") as fh:
        fh.write("# fsistab state\n")
        fh.write(f"# L1 = {FLOAT_FMT % geom.L1}\n# L2 = {FLOAT_FMT % geom.L2}\n")
        fh.write(f"# nx = {geom.nx}\n# ny = {geom.ny}\n")
        for x in s.flat():
            fh.write(FLOAT_FMT % x + "\n")


def load_state(path, geom) -> State:
    header = {}
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                if "=" in line:
                    k, v = (t.strip() for t in line[1:].split("=", 1))
                    header[k] = v
            elif line:
                values.append(float(line))
    want = {"L1": geom.L1, "L2": geom.L2, "nx": geom.nx, "ny": geom.ny}
    for k, v in want.items():
        if k not in header or float(header[k]) != float(v):
            raise DimensionError(
                f"state file {path} has {k} = {header.get(k)}, configuration has {v}")
    return State.from_flat(geom, np.array(values))


# ----------------------------------------------------------------------------
# orchestration


class Run:
    """Objects shared by the subcommands for one configuration."""

    def __init__(self, config: RunConfig):
        self.config = config
        c = config
        self.geom = build_geometry(c.L1, c.L2, c.nx, c.ny)
        self.calc = build_calculus(self.geom, c.nu, c.lam, c.eta)
        self.ambient = build_ambient(self.calc, c.preset, c.amplitude)
        self.gen = assemble_generator(self.calc, self.ambient, c.kappa)
        self.dt = c.time_step(self.calc)
        self.out = Path(c.out)
        self._evolved = None

    def initial_state(self) -> State:
        kind, seed, path = self.config.initial_spec()
        calc, gen = self.calc, self.gen
        if kind == "n0":
            return null_state(calc)
        if kind == "file":
            return gen.admissible(load_state(path, self.geom))
        rng = np.random.default_rng(seed)
        s = gen.admissible(State.from_flat(self.geom, rng.uniform(-1.0, 1.0, gen.dofs.n_full)))
        if kind == "random-offnull":
            s = project_offnull(calc, s, null_state(calc))
        return s

    def evolve(self):
        """Evolve once per run; later subcommands on the same run reuse the result."""
        if self._evolved is None:
            self._evolved = evolve(self.gen, self.initial_state(), self.dt, self.config.T,
                                   self.config.stride)
        return self._evolved

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


class NumericalFailure(FsiError):
    """A computed result failed its acceptance check."""


def _trace_csv(run: Run, trace) -> Path:
    cols = trace.columns()
    path = run.path("trace.csv")
    write_csv(path, run.config, list(cols), zip(*cols.values()))
    return path


def cmd_simulate(run: Run) -> str:
    _, trace = run.evolve()
    path = _trace_csv(run, trace)
    worst = float(np.abs(trace.balance_residual).max())
    tol = BALANCE_RTOL * max(trace.E[0], 1.0)
    msg = f"wrote {path}; steps {len(trace.times) - 1}; max balance residual {worst:.3e}"
    if worst > tol:
        raise NumericalFailure(f"{msg} exceeds {tol:.3e}")
    return msg


def cmd_spectrum(run: Run) -> str:
    rep = spectrum(run.gen, cap=run.config.cap)
    path = run.path("eigenvalues.csv")
    lam = rep.eigenvalues
    order = np.lexsort((lam.imag, lam.real))
    write_csv(path, run.config, ["re", "im"], ((float(z.real), float(z.imag)) for z in lam[order]))
    items = {"order": rep.order, "zero_eigenvalue_re": rep.zero_eigenvalue.real,
             "zero_eigenvalue_im": rep.zero_eigenvalue.imag, "near_zero_count": rep.count_near_zero(),
             "gap": rep.gap, "alignment": rep.alignment}
    write_table(run.path("spectrum_report.csv"), run.config, items)
    return "\n".join(f"{k} = {v:.12g}" for k, v in items.items()) + f"\nwrote {path}"


def cmd_nullspace(run: Run) -> str:
    calc = run.calc
    beam = BeamSolver(calc)
    n0 = null_state(calc, beam)
    cc = check_cc(calc, run.ambient, beam)
    items = {"residual_kappa0": null_residual(assemble_generator(calc, run.ambient, 0), n0),
             "residual_kappa1": null_residual(assemble_generator(calc, run.ambient, 1), n0),
             "cc_defect": cc.max_defect, "cc_threshold": cc.threshold, "cc_passed": float(cc.passed)}
    write_table(run.path("nullspace.csv"), run.config, items)
    text = "\n".join(f"{k} = {v:.6e}" for k, v in items.items())
    # kappa = 1 keeps n0 in its kernel only under cc
    checked = ["residual_kappa0"] + (["residual_kappa1"] if cc.passed else [])
    bad = [k for k in checked if items[k] > NULL_RTOL]
    if bad:
        raise NumericalFailure(f"{text}\nnull residual above {NULL_RTOL:g}: {', '.join(bad)}")
    return text


def cmd_decay(run: Run) -> str:
    _, trace = run.evolve()
    _trace_csv(run, trace)
    fit = decay_fit(trace)
    datko = datko_check(trace)
    items = {"M": fit.M, "omega": fit.omega, "energy_rate": fit.energy_rate, "rsq": fit.rsq,
             "window_lo": fit.window[0], "window_hi": fit.window[1], "E_ratio": trace.E[-1] / trace.E[0],
             "Cstar": datko.Cstar, "Cstar_half": datko.Cstar_half, "datko_passed": float(datko.passed)}
    write_table(run.path("decay.csv"), run.config, items)
    return "\n".join(f"{k} = {v:.12g}" for k, v in items.items())


def cmd_diagnose(run: Run) -> str:
    traj, _ = run.evolve()
    ledger = multiplier_report(run.gen, traj, NeumannSolver(run.calc), LerayProjector(run.calc))
    items = ledger.as_dict()
    write_table(run.path("ledger.csv"), run.config, items)
    return "\n".join(f"{k} = {v:.12g}" for k, v in items.items())


def cmd_selftest(run: Run) -> str:
    from fsistab.selftest import run_selftest

    report = run_selftest(run.config.nx, run.config.ny)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in report]
    text = "\n".join(lines)
    if not all(ok for _, ok, _ in report):
        raise NumericalFailure(text)
    return text


COMMANDS = {"simulate": cmd_simulate, "spectrum": cmd_spectrum, "nullspace": cmd_nullspace,
            "decay": cmd_decay, "diagnose": cmd_diagnose, "selftest": cmd_selftest}


def run_subcommand(name: str, config: RunConfig, out=sys.stdout, err=sys.stderr) -> int:
    if name not in COMMANDS:
        print(f"unknown subcommand {name!r}; choose from {SUBCOMMANDS}", file=err)
        return 1
    try:
        text = COMMANDS[name](Run(config))
    except (ConfigurationError, DimensionError, CapacityError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return 1
    except NumericalFailure as exc:
        print(str(exc), file=err)
        return 2
    except (FsiError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return 2
    print(text, file=out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fsistab", description=__doc__.split("\n\n")[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to a key = value configuration file")
    parser.add_argument("--out", help="output directory (overrides the config's out key)")
    parser.add_argument("--seed", type=int, help="seed for random initial data")
    args = parser.parse_args(argv)
    try:
        config = parse_config(Path(args.config).read_text())
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out is not None:
        config = dataclasses.replace(config, out=args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 1
        config = config.with_seed(args.seed)
    return run_subcommand(args.subcommand, config)


if __name__ == "__main__":
    sys.exit(main())
