"""Config-driven experiment runner.

Usage::

    fwrisk run experiment.cfg [--seed 3] [--out results/] [--quiet]

The config is flat ``key = value`` text with dotted prefixes
(``sem.b_x1y = 1.0``); ``#`` starts a comment. Exit status is 0 when the
scenario's internal checks pass, 2 when a check fails and 1 on any error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, FwriskError
from .estimation import EstimatorConfig, eigenbasis_estimator, gram_estimator, make_split, write_estimation_report
from .fda import TimeGrid, project_panel, sine_basis
from .minimizer import (
    BetaKernel,
    coefficient_distance,
    minimizer_from_moments,
    plugin_estimator,
    write_beta_csv,
    write_surface_csv,
)
from .risk import risk_report, verify_decomposition
from .sem import SemSpec, ShiftSpec, chain_preset, chain_shift, population_second_moment, simulate_panel
from .shiftset import default_test_family, finite_basis_psd_check, mercer_check, triangular_autocov, wss_fft_check

log = logging.getLogger("fwrisk")

SCENARIOS = (
    "illustration-population",
    "illustration-empirical",
    "decomposition-check",
    "consistency-sweep",
    "shiftset-check",
)

_REQUIRED = {
    "illustration-population": ("gamma_list",),
    "illustration-empirical": ("gamma_list", "n_samples"),
    "decomposition-check": ("gamma_list",),
    "consistency-sweep": ("gamma_list",),
    "shiftset-check": ("gamma_list",),
}

_SECTION = "experiment"


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    n_samples: int = 1000
    n_grid: int = 100
    n_basis: int = 10
    gamma_list: tuple[float, ...] = (0.5,)
    output_dir: Path = Path("fwrisk-out")
    options: dict = field(default_factory=dict)
    source: str = ""

    def get(self, key: str, default=None, kind=str):
        raw = self.options.get(key)
        if raw is None:
            return default
        return _convert(key, raw, kind, self.source)


def _line_of(key: str, text: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*[=:]", re.IGNORECASE)
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return None


def _field_error(key: str, msg: str, text: str) -> ConfigError:
    line = _line_of(key, text)
    where = f"line {line}, " if line else ""
    return ConfigError(f"{where}field '{key}': {msg}")


def _convert(key: str, raw: str, kind, text: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind in (list, tuple):
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if kind == "intlist":
            return tuple(int(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if kind == "strlist":
            return tuple(v.strip() for v in raw.replace(";", ",").split(",") if v.strip())
        return kind(raw.strip())
    except ValueError:
        raise _field_error(key, f"cannot read {raw!r} as {getattr(kind, '__name__', kind)}", text) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text into an :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.MissingSectionHeaderError as exc:  # pragma: no cover - header is always present
        raise ConfigError(str(exc)) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno - 1}, field '{exc.option}': duplicate key") from None
    except configparser.ParsingError as exc:
        lines = ", ".join(f"line {ln - 1}: {bad.strip()}" for ln, bad in exc.errors)
        raise ConfigError(f"malformed config ({lines}); expected 'key = value'") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno - 1}: sections are not allowed") from None
    if len(parser.sections()) > 1:
        extra = parser.sections()[1]
        raise _field_error(f"[{extra}]", "sections are not allowed; use dotted keys", text)
    opts = dict(parser[_SECTION])
    if "scenario" not in opts:
        raise ConfigError("field 'scenario': missing")
    scenario = opts.pop("scenario").strip()
    if scenario not in SCENARIOS:
        raise _field_error("scenario", f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}", text)
    for key in _REQUIRED[scenario]:
        if key not in opts:
            raise ConfigError(f"field '{key}': required by scenario {scenario}")
    cfg = ExperimentConfig(scenario=scenario, source=text)
    typed = {"seed": int, "n_samples": int, "n_grid": int, "n_basis": int}
    for key, kind in typed.items():
        if key in opts:
            setattr(cfg, key, _convert(key, opts.pop(key), kind, text))
    if "gamma_list" in opts:
        gl = _convert("gamma_list", opts.pop("gamma_list"), list, text)
        if not gl or any(g <= 0 for g in gl):
            raise _field_error("gamma_list", "must be a nonempty list of positive numbers", text)
        cfg.gamma_list = gl
    if "output_dir" in opts:
        cfg.output_dir = Path(opts.pop("output_dir").strip())
    for key, lo in (("n_samples", 1), ("n_grid", 2), ("n_basis", 1)):
        if getattr(cfg, key) < lo:
            raise _field_error(key, f"must be at least {lo}", text)
    cfg.options = opts
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _gamma_tag(g: float) -> str:
    return f"{g:g}"


def _system(cfg: ExperimentConfig) -> tuple[SemSpec, ShiftSpec]:
    N = cfg.n_basis
    spec = chain_preset(
        N,
        b_x1y=cfg.get("sem.b_x1y", 1.0, float),
        b_yx2=cfg.get("sem.b_yx2", 1.0, float),
        noise_sd=cfg.get("sem.noise_sd", 1.0, float),
    )
    blocks = cfg.get("shift.blocks", (1, 2), "intlist")
    if any(b < 0 or b > spec.p for b in blocks):
        raise _field_error("shift.blocks", f"block indices must lie in 0..{spec.p}", cfg.source)
    shift = chain_shift(N, mean=cfg.get("shift.mean", 0.1, float), sd=cfg.get("shift.sd", 0.1, float), blocks=blocks)
    return spec, shift


class _Writer:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def beta(self, beta: BetaKernel, gamma: float, resolution: int):
        write_beta_csv(beta, self.path(f"beta_gamma_{_gamma_tag(gamma)}.csv"))
        surfaces = {}
        for i in range(1, beta.p + 1):
            surfaces[i] = emit_surface(beta, i, resolution, self.path(f"surface_X{i}_{_gamma_tag(gamma)}.csv"))
        return surfaces


def emit_surface(beta: BetaKernel, covariate: int, resolution: int, path) -> np.ndarray:
    """Write the ``(t, tau, value)`` grid of one covariate's coefficient surface."""
    return write_surface_csv(beta, covariate, resolution, path)


def _write_summary(path: Path, header: list[str], rows: list[list], status: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        w.writerow([f"# {status}"])


def _per_dim(beta: BetaKernel) -> list[float]:
    coef = beta.phi_coefficients()
    return [float(np.mean(np.diagonal(coef[i]))) for i in range(coef.shape[0])]


def _run_population(cfg, writer: _Writer):
    spec, shift = _system(cfg)
    basis = sine_basis(cfg.n_basis)
    MA, MO = population_second_moment(spec, shift), population_second_moment(spec)
    route = cfg.get("minimizer.route", "diagonal")
    res = cfg.get("surface.resolution", 51, int)
    betas, rows = {}, []
    for g in cfg.gamma_list:
        beta = minimizer_from_moments(MA, MO, g, spec.p, basis, route=route)
        betas[g] = beta
        surf = writer.beta(beta, g, res)
        rep = risk_report(beta, spec, shift, g)
        peaks = [float(np.abs(s).max()) for s in surf.values()]
        rows.append([g, *_per_dim(beta), *peaks, rep.r_obs, rep.r_shift, rep.worst])
    # each minimizer must beat every other candidate in the list at its own gamma
    ok = True
    for g, beta in betas.items():
        own = risk_report(beta, spec, shift, g).worst
        for other in betas.values():
            ok &= own <= risk_report(other, spec, shift, g).worst + 1e-9 * max(1.0, abs(own))
    names = [f"coef_X{i}" for i in range(1, spec.p + 1)] + [f"peak_X{i}" for i in range(1, spec.p + 1)]
    return ["gamma", *names, "risk_obs", "risk_shift", "worst_risk"], rows, ok


def _run_empirical(cfg, writer: _Writer):
    spec, shift = _system(cfg)
    basis = sine_basis(cfg.n_basis)
    grid = TimeGrid.uniform(cfg.n_grid)
    seed_a, seed_o = np.random.SeedSequence(cfg.seed).generate_state(2)
    pa = project_panel(simulate_panel(spec, shift, cfg.n_samples, int(seed_a), basis, grid), basis)
    po = project_panel(simulate_panel(spec, None, cfg.n_samples, int(seed_o), basis, grid), basis)
    MA, MO = population_second_moment(spec, shift), population_second_moment(spec)
    res = cfg.get("surface.resolution", 51, int)
    rows, ok = [], True

    def moments(sp):
        X, Y = sp.covariates, sp.target
        return X.T @ X / sp.n, X.T @ Y / sp.n

    Ga, Za = moments(pa)
    Go, Zo = moments(po)
    for g in cfg.gamma_list:
        beta = plugin_estimator(Ga, Go, Za, Zo, g, basis, spec.p)
        pop = minimizer_from_moments(MA, MO, g, spec.p, basis)
        writer.beta(beta, g, res)
        dist = coefficient_distance(beta, pop)
        norms = [beta.covariate_norm(i) for i in range(1, spec.p + 1)]
        ok &= bool(np.isfinite(dist))
        rows.append([g, *norms, dist, pop.l2_norm(), dist / pop.l2_norm()])
    names = [f"norm_X{i}" for i in range(1, spec.p + 1)]
    return ["gamma", *names, "distance_to_population", "population_norm", "relative_distance"], rows, ok


def _run_decomposition(cfg, writer: _Writer):
    spec, shift = _system(cfg)
    basis = sine_basis(cfg.n_basis)
    n_cand = cfg.get("decomposition.n_candidates", 200, int)
    kind = cfg.get("decomposition.beta", "random")
    n_mc = cfg.get("decomposition.n_mc", 0, int)
    rng = np.random.default_rng(cfg.seed)
    N, p = spec.n_basis, spec.p
    rows, ok = [], True
    for g in cfg.gamma_list:
        if kind == "random":
            beta = BetaKernel(rng.normal(scale=0.3, size=(p, N, N)), basis)
        elif kind == "zero":
            beta = BetaKernel(np.zeros((p, N, N)), basis)
        elif kind == "minimizer":
            MA, MO = population_second_moment(spec, shift), population_second_moment(spec)
            beta = minimizer_from_moments(MA, MO, g, p, basis)
        else:
            raise _field_error("decomposition.beta", f"unknown kernel kind {kind!r} (random, zero, minimizer)", cfg.source)
        rep = verify_decomposition(spec, shift, beta, g, n_candidates=n_cand, seed=cfg.seed, n_mc=n_mc)
        rep.write_csv(writer.path(f"decomposition_gamma_{_gamma_tag(g)}.csv"))
        ok &= rep.passed
        rows.append([g, rep.decomposition, rep.max_risk, rep.scaled_risk, int(rep.admissible.sum()), "PASS" if rep.passed else "FAIL"])
    return ["gamma", "decomposition", "max_admissible_risk", "scaled_risk", "n_admissible", "status"], rows, ok


def _run_consistency(cfg, writer: _Writer):
    spec, shift = _system(cfg)
    basis = sine_basis(cfg.n_basis)
    grid = TimeGrid.uniform(cfg.n_grid)
    g = cfg.gamma_list[0]
    n_list = cfg.get("estimator.n_list", (50, 200, 1000), "intlist")
    n_seeds = cfg.get("estimator.n_seeds", 20, int)
    routes = cfg.get("estimator.routes", ("eigen", "gram"), "strlist")
    timing = cfg.get("report.timing", False, bool)
    trunc = cfg.get("estimator.truncation", None, int)
    ecfg = EstimatorConfig(
        gamma=g,
        M=cfg.get("estimator.M", 10.0, float),
        truncation=trunc,
        mesh=cfg.get("estimator.mesh", None, float),
        centralize=cfg.get("estimator.centralize", False, bool),
        reuse_splits=cfg.get("estimator.reuse_splits", False, bool),
    )
    pop = minimizer_from_moments(population_second_moment(spec, shift), population_second_moment(spec), g, spec.p, basis)
    estimators = {"eigen": eigenbasis_estimator, "gram": gram_estimator}
    for r in routes:
        if r not in estimators:
            raise _field_error("estimator.routes", f"unknown route {r!r} (eigen, gram)", cfg.source)
    report, errors = [], {r: {n: [] for n in n_list} for r in routes}
    for n in n_list:
        for s in range(n_seeds):
            seed = cfg.seed * 1_000_003 + s
            seed_a, seed_o, seed_split = np.random.SeedSequence([seed, n]).generate_state(3)
            pa = simulate_panel(spec, shift, n, int(seed_a), basis, grid)
            po = simulate_panel(spec, None, n, int(seed_o), basis, grid)
            split = make_split(n, seed=int(seed_split))
            for r in routes:
                t0 = time.perf_counter()
                beta = estimators[r](pa, po, split, ecfg, basis)
                ms = (time.perf_counter() - t0) * 1e3
                dist = coefficient_distance(beta, pop)
                errors[r][n].append(dist)
                report.append(
                    {
                        "n": n,
                        "seed": seed,
                        "gamma": g,
                        "route": r,
                        "coeff_error": dist,
                        "frobenius_error": dist / pop.l2_norm(),
                        # wall-clock columns would break byte-identical reruns
                        "runtime_ms": f"{ms:.3f}" if timing else "NA",
                    }
                )
    write_estimation_report(report, writer.path("estimation_report.csv"))
    rows, ok = [], True
    for r in routes:
        med = [float(np.median(errors[r][n])) for n in n_list]
        dec = all(b < a for a, b in zip(med, med[1:]))
        ok &= dec
        rows += [[r, n, m, "PASS" if dec else "FAIL"] for n, m in zip(n_list, med)]
    return ["route", "n", "median_coeff_error", "status"], rows, ok


def _run_shiftset(cfg, writer: _Writer):
    N = cfg.n_basis
    basis = sine_basis(N)
    family = default_test_family(basis)
    n_triples = cfg.get("shiftset.n_triples", 50, int)
    channels = cfg.get("shiftset.channels", 2, int)
    rng = np.random.default_rng(cfg.seed)
    rows, ok = [], True
    d = channels * N
    for t in range(n_triples):
        g = float(cfg.gamma_list[t % len(cfg.gamma_list)])
        A = rng.normal(size=(d, d))
        R = A @ A.T / d
        if t % 2 == 0:
            # inside: L Q L^T with gamma R = L L^T and 0 <= Q <= I
            L = np.linalg.cholesky(g * R + 1e-12 * np.eye(d))
            Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
            C = L @ (Q * rng.uniform(0, 1, d)) @ Q.T @ L.T
        else:
            C = (g * rng.uniform(0.5, 1.5)) * R + rng.uniform(0, 0.5) * np.eye(d)
        C = 0.5 * (C + C.T)
        m = mercer_check(C, R, g, family)
        f = finite_basis_psd_check(C, R, g)
        agree = m.member == f
        ok &= agree
        rows.append(["triple", t, g, int(m.member), int(f), m.min_form, "PASS" if agree else "FAIL"])
    lags = np.arange(-32, 33, dtype=float)
    k = triangular_autocov(lags, 8.0)
    for g in cfg.gamma_list:
        acc = wss_fft_check(g * k, k, lags, g)
        rej = wss_fft_check(2 * g * k, k, lags, g)
        good = acc.member and not rej.member and rej.witness is not None
        ok &= good
        rows.append(["wss", 0, g, int(acc.member), int(rej.member), rej.min_form, "PASS" if good else "FAIL"])
    return ["check", "index", "gamma", "member_a", "member_b", "min_form", "status"], rows, ok


_RUNNERS = {
    "illustration-population": _run_population,
    "illustration-empirical": _run_empirical,
    "decomposition-check": _run_decomposition,
    "consistency-sweep": _run_consistency,
    "shiftset-check": _run_shiftset,
}


def run(config_path, seed: int | None = None, out: str | Path | None = None) -> int:
    """Run one experiment; returns the exit status (0 pass, 2 check failure, 1 error)."""
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg.seed = seed
        if out is not None:
            cfg.output_dir = Path(out)
        try:
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"field 'output_dir': cannot create {cfg.output_dir}: {exc.strerror}") from None
        writer = _Writer(cfg.output_dir)
        header, rows, ok = _RUNNERS[cfg.scenario](cfg, writer)
        status = "PASS" if ok else "FAIL"
        _write_summary(writer.path("summary.csv"), header, rows, f"{cfg.scenario} {status}")
        digest = hashlib.sha256(cfg.source.encode("utf-8")).hexdigest()
        manifest = {
            "scenario": cfg.scenario,
            "config_sha256": digest,
            "seed": cfg.seed,
            "version": __version__,
            "wall_time_s": time.perf_counter() - t0,
            "status": status,
            "files": writer.files,
        }
        (cfg.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        log.info("%s %s (%d files in %s)", cfg.scenario, status, len(writer.files), cfg.output_dir)
        return 0 if ok else 2
    except (FwriskError, ValueError, OSError) as exc:
        log.error("error: %s", exc)
        return 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fwrisk", description="Worst-risk functional regression experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("run", help="run an experiment config")
    rp.add_argument("config")
    rp.add_argument("--seed", type=int, default=None, help="override the config seed")
    rp.add_argument("--out", default=None, help="override output_dir")
    rp.add_argument("--quiet", action="store_true", help="only report errors")
    args = ap.parse_args(argv)
    logging.basicConfig(format="%(message)s", stream=sys.stderr)
    log.setLevel(logging.ERROR if args.quiet else logging.INFO)
    return run(args.config, seed=args.seed, out=args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
