"""Operator-facing command line: config parsing, subcommands, artifacts.

Configs are INI-style (see README for the grammar); every section has
documented defaults so a minimal file, or none at all, runs the bundled
q = 3 model.  Artifact names are deterministic functions of the subcommand
and a hash of the effective canonical config, and identical config + seed
produces byte-identical CSV/JSON.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import lattice as lat
from . import model, sampler, verify, wick
from .model import FieldParams
from .ultrametric import SAME, Region, parse_region, refine

ENV_PREFIX = "PADICQFT_"

_SCHEMA = {
    "field": ("p", "n", "alpha", "m_sq", "gamma_const", "omega"),
    "region": ("ambient_level", "k", "balls"),
    "lattice": ("l",),
    "polynomial": ("coefficients", "lambda"),
    "source": ("g", "h"),
    "run": ("seed", "n_samples", "method", "tol", "quadrature_order", "out"),
}

_DEFAULTS = {
    ("field", "p"): "3",
    ("field", "n"): "1",
    ("field", "alpha"): "1",
    ("field", "m_sq"): "1.0",
    ("field", "gamma_const"): "1.0",
    ("field", "omega"): "auto",
    ("region", "ambient_level"): "1",
    ("region", "k"): "0",
    ("region", "balls"): "0,1,2",
    ("lattice", "l"): "0",
    ("polynomial", "coefficients"): "0,0,0,0,1",
    ("polynomial", "lambda"): "0",
    ("source", "g"): "0.1",
    ("source", "h"): "e0;e1",
    ("run", "seed"): "20240801",
    ("run", "n_samples"): "20000",
    ("run", "method"): "quadrature",
    ("run", "tol"): "1e-12",
    ("run", "quadrature_order"): "40",
    ("run", "out"): "out",
}


class ConfigError(ValueError):
    """Carries the complete list of validation problems, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    p: int
    n: int
    alpha: Fraction
    m_sq: float
    gamma_const: float
    omega: float | None  # None = auto-resolve
    ambient_level: int
    k: int
    balls: str
    l: int
    coefficients: tuple[float, ...]
    lam: float
    g_spec: str
    h_spec: str
    seed: int
    n_samples: int
    method: str
    tol: float
    quadrature_order: int
    out: str

    def params(self) -> FieldParams:
        return FieldParams(
            p=self.p,
            n=self.n,
            alpha=self.alpha,
            m_sq=self.m_sq,
            gamma_const=self.gamma_const,
            omega_const=self.omega,
        )

    def region(self) -> Region:
        text = f"amb={self.ambient_level};k={self.k};balls={self.balls}"
        return parse_region(text, self.params().q)

    def lattice(self):
        return refine(self.region(), self.l)

    def polynomial(self) -> wick.WickPolynomial:
        coeffs = list(self.coefficients)
        if self.lam:
            coeffs[1] = -self.lam
        return wick.WickPolynomial(tuple(coeffs))

    def resolve_g(self, eta: int) -> np.ndarray:
        return _parse_cell_values(self.g_spec, eta, "g")

    def resolve_h(self, eta: int) -> tuple[np.ndarray, ...]:
        entries = [e.strip() for e in self.h_spec.split(";") if e.strip()]
        return tuple(_parse_cell_values(e, eta, "h") for e in entries)

    def source(self, eta: int) -> sampler.SourceSpec:
        return sampler.SourceSpec(g=self.resolve_g(eta), h_list=self.resolve_h(eta))


def _parse_cell_values(spec: str, eta: int, name: str) -> np.ndarray:
    spec = spec.strip()
    if spec.startswith("e") and spec[1:].isdigit():
        idx = int(spec[1:])
        if idx >= eta:
            raise ConfigError([f"{name} entry {spec!r} indexes past the {eta} lattice cells"])
        out = np.zeros(eta)
        out[idx] = 1.0
        return out
    values = [float(v) for v in spec.split(",")]
    if len(values) == 1:
        return np.full(eta, values[0])
    if len(values) != eta:
        raise ConfigError([f"{name} has {len(values)} values but the lattice has {eta} cells"])
    return np.asarray(values)


def parse_config(text: str, strict: bool = True) -> RunConfig:
    """Parse and fully validate; raises ConfigError listing every problem."""
    parser = configparser.ConfigParser(interpolation=None)
    errors: list[str] = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from exc

    values = {key: default for key, default in _DEFAULTS.items()}
    for section in parser.sections():
        if section not in _SCHEMA:
            msg = f"unknown section [{section}]"
            if strict:
                errors.append(msg)
            else:
                print(f"warning: {msg} ignored", file=sys.stderr)
            continue
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                msg = f"unknown key {key!r} in section [{section}]"
                if strict:
                    errors.append(msg)
                else:
                    print(f"warning: {msg} ignored", file=sys.stderr)
                continue
            values[(section, key)] = raw.strip()

    def grab(section, key, conv, check=None, message=None):
        raw = values[(section, key)]
        try:
            value = conv(raw)
        except (ValueError, ZeroDivisionError):
            errors.append(f"[{section}] {key}: cannot parse {raw!r}")
            return None
        if check is not None and not check(value):
            errors.append(f"[{section}] {key}: {message}")
            return None
        return value

    p = grab("field", "p", int, lambda v: v >= 3 and v % 2 == 1 and _is_prime(v),
             "p must be an odd prime")
    n = grab("field", "n", int, lambda v: v in (1, 2, 3, 4), "n must be in 1..4")
    alpha = grab("field", "alpha", Fraction)
    m_sq = grab("field", "m_sq", float, lambda v: v > 0, "m_sq must be positive")
    gamma = grab("field", "gamma_const", float, lambda v: v > 0, "gamma_const must be positive")
    omega_raw = values[("field", "omega")]
    if omega_raw == "auto":
        omega = None
    else:
        omega = grab("field", "omega", float, lambda v: v <= 0, "omega must be nonpositive")
    if alpha is not None and n is not None and 2 * alpha < n:
        errors.append(f"[field] alpha: alpha must be >= n/2 (got {alpha} with n={n})")

    amb = grab("region", "ambient_level", int)
    k = grab("region", "k", int)
    balls = values[("region", "balls")]
    l = grab("lattice", "l", int)
    if k is not None and amb is not None and k > amb:
        errors.append("[region] k: ball level k must not exceed ambient_level")
    if l is not None and k is not None and l > k:
        errors.append("[lattice] l: refinement level must satisfy l <= k")

    coeffs = None
    try:
        coeffs = tuple(float(c) for c in values[("polynomial", "coefficients")].split(","))
    except ValueError:
        errors.append("[polynomial] coefficients: cannot parse float list")
    lam = grab("polynomial", "lambda", float, lambda v: v >= 0, "lambda must be nonnegative")
    if coeffs is not None:
        degree = len(coeffs) - 1
        if degree % 2 != 0:
            errors.append("[polynomial] coefficients: interaction degree must be even")
        elif coeffs[-1] <= 0:
            errors.append(
                "[polynomial] coefficients: leading coefficient must be positive "
                "(semibounded interaction)"
            )
        if lam is not None and lam != 0:
            if degree < 2:
                errors.append("[polynomial] lambda: a linear term needs degree >= 2")
            elif coeffs[1] != 0:
                errors.append("[polynomial] lambda: set either lambda or a nonzero a_1, not both")

    seed = grab("run", "seed", int, lambda v: v >= 0, "seed must be nonnegative")
    n_samples = grab("run", "n_samples", int, lambda v: v >= 1000, "n_samples must be >= 1000")
    method = grab("run", "method", str, lambda v: v in ("mc", "quadrature"),
                  "method must be 'mc' or 'quadrature'")
    tol = grab("run", "tol", float, lambda v: v > 0, "tol must be positive")
    order = grab("run", "quadrature_order", int, lambda v: v >= 4,
                 "quadrature_order must be >= 4")
    out = values[("run", "out")]

    if not errors and p is not None and amb is not None:
        # structural validation that needs several fields at once
        try:
            parse_region(f"amb={amb};k={k};balls={balls}", p**n)
        except ValueError as exc:
            errors.append(f"[region] balls: {exc}")

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        p=p, n=n, alpha=alpha, m_sq=m_sq, gamma_const=gamma, omega=omega,
        ambient_level=amb, k=k, balls=balls, l=l,
        coefficients=coeffs, lam=lam,
        g_spec=values[("source", "g")], h_spec=values[("source", "h")],
        seed=seed, n_samples=n_samples, method=method, tol=tol,
        quadrature_order=order, out=out,
    )


def _is_prime(v: int) -> bool:
    if v < 2:
        return False
    f = 2
    while f * f <= v:
        if v % f == 0:
            return False
        f += 1
    return True


def canonical_text(cfg: RunConfig) -> str:
    """Canonical INI serialization; parse_config(canonical_text(c)) == c."""
    omega = "auto" if cfg.omega is None else repr(cfg.omega)
    coeffs = ",".join(repr(c) for c in cfg.coefficients)
    lines = [
        "[field]",
        f"p = {cfg.p}",
        f"n = {cfg.n}",
        f"alpha = {cfg.alpha}",
        f"m_sq = {cfg.m_sq!r}",
        f"gamma_const = {cfg.gamma_const!r}",
        f"omega = {omega}",
        "",
        "[region]",
        f"ambient_level = {cfg.ambient_level}",
        f"k = {cfg.k}",
        f"balls = {cfg.balls}",
        "",
        "[lattice]",
        f"l = {cfg.l}",
        "",
        "[polynomial]",
        f"coefficients = {coeffs}",
        f"lambda = {cfg.lam!r}",
        "",
        "[source]",
        f"g = {cfg.g_spec}",
        f"h = {cfg.h_spec}",
        "",
        "[run]",
        f"seed = {cfg.seed}",
        f"n_samples = {cfg.n_samples}",
        f"method = {cfg.method}",
        f"tol = {cfg.tol!r}",
        f"quadrature_order = {cfg.quadrature_order}",
        f"out = {cfg.out}",
    ]
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Hash of the canonical config minus the output directory.

    Where results go must not change what they are called or contain.
    """
    text = canonical_text(replace(cfg, out="out"))
    return hashlib.sha256(text.encode()).hexdigest()[:10]


class _ArtifactWriter:
    """Tracks written files so partial outputs can be removed on failure."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.outdir.mkdir(parents=True, exist_ok=True)
        p = self.outdir / name
        self.written.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return self.write_text(name, buf.getvalue())

    def discard_all(self) -> None:
        for p in self.written:
            try:
                p.unlink()
            except OSError:
                pass


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def run_integrals(cfg: RunConfig, writer: _ArtifactWriter) -> int:
    params = cfg.params()
    h = config_hash(cfg)
    betas = (1.5, 2.0, 3.0)
    c1 = model.resolvent_ball_bound_constant(params)
    header = ["kappa", "c_kappa_sq", "ball_bound"]
    for b in betas:
        header += [f"tail_beta{b:g}", f"tail_bound_beta{b:g}"]
    rows = []
    for kappa in range(1, 31):
        row = [kappa, model.c_kappa_sq(params, kappa, cfg.tol), c1 * kappa]
        for b in betas:
            bb = float(params.beta_hat) * b
            row += [
                model.resolvent_tail_integral(params, kappa, b, cfg.tol),
                model.resolvent_tail_bound_constant(params, b) * float(params.q) ** (-kappa * (bb - 1)),
            ]
        rows.append(row)
    path = writer.write_csv(f"integrals_{h}.csv", header, rows)
    print(f"wrote {path}")
    return 0


def run_green(cfg: RunConfig, writer: _ArtifactWriter) -> int:
    params = cfg.params()
    h = config_hash(cfg)
    kappas = (0, 2, 5)
    header = ["d", "green"] + [f"green_reg_k{k}" for k in kappas]
    rows = []
    points = [SAME] + list(range(-10, 11))
    for d in points:
        label = "-inf" if d == SAME else int(d)
        row = [label, model.green_function(params, d, cfg.tol)]
        row += [model.green_regularized(params, k, d, cfg.tol) for k in kappas]
        rows.append(row)
    path = writer.write_csv(f"green_{h}.csv", header, rows)
    print(f"wrote {path}")
    return 0


def run_lattice(cfg: RunConfig, writer: _ArtifactWriter) -> int:
    params = cfg.params()
    lattice = cfg.lattice()
    h = config_hash(cfg)
    n = lat.precision_matrix(lattice, params)
    m = lat.covariance_matrix(n)
    n_path = writer.path(f"lattice_{h}_N.csv")
    m_path = writer.path(f"lattice_{h}_M.csv")
    lat.write_matrix_csv(n_path, n.entries, lattice, "precision")
    lat.write_matrix_csv(m_path, m.entries, lattice, "covariance")
    print(f"wrote {n_path}")
    print(f"wrote {m_path}")
    return 0


def run_wick(cfg: RunConfig, writer: _ArtifactWriter) -> int:
    params = cfg.params()
    lattice = cfg.lattice()
    h = config_hash(cfg)
    rows = []
    for k in range(0, 9):
        for j, w in enumerate(wick.wick_coefficients(k).coefficients):
            rows.append([k, j, w])
    path = writer.write_csv(f"wick_coeffs_{h}.csv", ["k", "j", "w"], rows)
    print(f"wrote {path}")
    g = cfg.resolve_g(lattice.eta)
    for k in (2, 3, 4):
        rows = []
        prev = None
        for kappa2 in range(1, 11):
            value = wick.wick_l2_distance(params, 20, kappa2, k, lattice, g, tol=cfg.tol)
            ratio = (
                math.log(prev / value) / math.log(params.q)
                if prev is not None and value > 0 and prev > 0
                else float("nan")
            )
            rows.append([kappa2, value, ratio])
            prev = value
        path = writer.write_csv(
            f"wick_decay_k{k}_{h}.csv", ["kappa2", "distance", "log_q_ratio"], rows
        )
        print(f"wrote {path}")
    return 0


def run_schwinger(cfg: RunConfig, writer: _ArtifactWriter, trace: bool = False) -> int:
    params = cfg.params()
    lattice = cfg.lattice()
    h = config_hash(cfg)
    poly = cfg.polynomial()
    src = cfg.source(lattice.eta)
    var = model.free_cell_variance(params, lattice.cell_level)
    m = lat.covariance_matrix(lat.precision_matrix(lattice, params))
    if cfg.method == "quadrature":
        est = sampler.schwinger_quadrature(m, poly, src, var, cfg.quadrature_order)
        z = sampler.partition_function_quadrature(m, poly, src, var, cfg.quadrature_order)
    else:
        est = sampler.schwinger_mc(m, poly, src, cfg.seed, cfg.n_samples, var)
        z = sampler.partition_function_mc(m, poly, src, cfg.seed + 1, cfg.n_samples, var)
    header = ["statistic", "value", "std_error", "ess", "n_samples", "method"]
    rows = [
        ["schwinger", est.value, est.std_error, est.ess if est.ess is not None else "", est.n_samples, est.method],
        ["partition", z.value, z.std_error, z.ess if z.ess is not None else "", z.n_samples, z.method],
    ]
    path = writer.write_csv(f"schwinger_{h}.csv", header, rows)
    print(f"wrote {path}")
    if est.low_ess or z.low_ess:
        print("warning: effective sample size below 10; estimates are low quality")
    if trace and cfg.method == "mc":
        rows = []
        for s in sampler.sample_field(m, cfg.seed, min(cfg.n_samples, 10_000)):
            rows.append([s.index] + list(s.values))
        header = ["index"] + [f"t{i}" for i in range(lattice.eta)]
        path = writer.write_csv(f"trace_{h}.csv", header, rows)
        print(f"wrote {path}")
    return 0


def run_verify_cmd(cfg: RunConfig, writer: _ArtifactWriter) -> int:
    reports = verify.run_verify(cfg.seed)
    all_pass = all(r.passed for r in reports)
    doc = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "checks": [r.to_json_dict() for r in reports],
        "all_pass": all_pass,
    }
    h = config_hash(cfg)
    path = writer.write_text(f"verify_{h}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check} (worst_margin={r.worst_margin:.6g})")
    print(f"wrote {path}")
    return 0 if all_pass else 1


_RUNNERS = {
    "integrals": run_integrals,
    "green": run_green,
    "lattice": run_lattice,
    "wick": run_wick,
    "schwinger": run_schwinger,
    "verify": run_verify_cmd,
}


def _env(name: str) -> str | None:
    return os.environ.get(ENV_PREFIX + name)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="padicqft",
        description="Ultrametric lattice field theory: integrals, Green functions, "
        "lattice matrices, Wick calculus, Schwinger estimates, verification",
    )
    parser.add_argument("subcommand", choices=sorted(_RUNNERS))
    parser.add_argument("--config", type=Path, default=None, help="INI config path")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", type=str, default=None, help="override output directory")
    parser.add_argument("--tol", type=float, default=None, help="override run.tol")
    parser.add_argument("--trace", action="store_true", help="emit per-sample traces (mc only)")
    strictness = parser.add_mutually_exclusive_group()
    strictness.add_argument("--strict", dest="strict", action="store_true", default=None,
                            help="reject unknown config keys (default)")
    strictness.add_argument("--lenient", dest="strict", action="store_false",
                            help="warn on unknown config keys instead of failing")
    args = parser.parse_args(argv)

    config_path = args.config
    if config_path is None and _env("CONFIG"):
        config_path = Path(_env("CONFIG"))
    strict = args.strict
    if strict is None:
        strict = _env("STRICT") not in ("0", "false", "no") if _env("STRICT") else True

    try:
        text = config_path.read_text(encoding="utf-8") if config_path else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, strict=strict)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    seed = args.seed if args.seed is not None else (
        int(_env("SEED")) if _env("SEED") else None)
    out = args.out if args.out is not None else _env("OUT")
    tol = args.tol if args.tol is not None else (
        float(_env("TOL")) if _env("TOL") else None)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, out=out)
    if tol is not None:
        cfg = replace(cfg, tol=tol)

    writer = _ArtifactWriter(Path(cfg.out))
    runner = _RUNNERS[args.subcommand]
    try:
        if args.subcommand == "schwinger":
            return runner(cfg, writer, trace=args.trace)
        return runner(cfg, writer)
    except Exception as exc:  # remove partial outputs, then report
        writer.discard_all()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
