"""Experiment runner: seeded, config-driven verification and MC suites.

Configs are flat INI-style key-value files with one section per concern.
Every run is fully determined by (config, seed): reports are byte-identical
on reruns.  Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 config error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bm, chain_mc, lattice, sphere, trace
from .chain import SubsetSpec, read_chain_file
from .errors import ConfigError, InsufficientEvents, IoError, TraceFormsError
from .rng import RngStream, derive_streams

KINDS = ("chain-verify", "chain-mc", "sphere-verify", "sphere-mc", "prototype")


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment description."""

    kind: str
    seed: int
    out_dir: Path | None
    n_workers: int
    sections: dict

    def get(self, section: str, key: str, default=None, cast=str):
        sec = self.sections.get(section, {})
        if key not in sec:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        try:
            return cast(sec[key])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for [{section}] {key}: {sec[key]!r}") from e

    def get_floats(self, section: str, key: str, default=None):
        raw = self.get(section, key, default=default)
        if isinstance(raw, str):
            return [float(tok) for tok in raw.split()]
        return list(raw)

    def path(self, section: str, key: str) -> Path:
        p = Path(self.get(section, key))
        if not p.exists():
            raise ConfigError(f"[{section}] {key}: no such file {p}")
        return p


def load_config(path, kind=None, seed=None, out=None) -> ExperimentConfig:
    """Read a config file, applying command-line overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    exp = sections.get("experiment", {})
    cfg_kind = exp.get("kind", kind)
    if cfg_kind is None:
        raise ConfigError("experiment kind missing (config [experiment] kind or CLI argument)")
    if kind is not None and cfg_kind != kind:
        raise ConfigError(f"config kind {cfg_kind!r} does not match requested {kind!r}")
    if cfg_kind not in KINDS:
        raise ConfigError(f"unknown kind {cfg_kind!r}; expected one of {KINDS}")
    if seed is None:
        if "seed" not in exp:
            raise ConfigError("seed is mandatory: set [experiment] seed or pass --seed")
        seed = int(exp["seed"])
    out_dir = Path(out) if out else (Path(exp["out"]) if "out" in exp else None)
    n_workers = int(exp.get("n_workers", "1"))
    if n_workers < 1:
        raise ConfigError("n_workers must be >= 1")
    return ExperimentConfig(kind=cfg_kind, seed=int(seed), out_dir=out_dir,
                            n_workers=n_workers, sections=sections)


@dataclass
class ReportBundle:
    """Everything a run produces: machine report, summary text, CSV blocks.

    ``status`` is pass only when every residual met its tolerance and every
    z-score stayed inside its bound; inconclusive is reserved for
    under-sampled estimators.
    """

    kind: str
    seed: int
    status: str
    report: dict
    summary_lines: list
    csv_blocks: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return {"pass": 0, "fail": 1, "inconclusive": 2}[self.status]


def _status(checks) -> str:
    """pass / fail / inconclusive from (ok, conclusive) pairs."""
    status = "pass"
    for ok, conclusive in checks:
        if not conclusive:
            status = "inconclusive" if status != "fail" else "fail"
        elif not ok:
            status = "fail"
    return status


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


# -- suites ---------------------------------------------------------------------


def _load_chain(config: ExperimentConfig):
    path = config.path("chain", "file")
    try:
        chain, sub = read_chain_file(path)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if "f" in config.sections.get("chain", {}):
        idx = [int(tok) for tok in config.sections["chain"]["f"].split()]
        sub = SubsetSpec.of(chain, idx)
    if sub is None:
        raise ConfigError(f"{path} carries no trace set; add an F line or [chain] F")
    return chain, sub


def _run_chain_verify(config: ExperimentConfig) -> ReportBundle:
    chain, sub = _load_chain(config)
    tol_identity = config.get("tolerances", "identity_rel", 1e-10, float)
    tol_route = config.get("tolerances", "route_rel", 1e-12, float)
    n_vectors = config.get("suite", "n_vectors", 5, int)
    n_densities = config.get("suite", "n_densities", 3, int)

    g = RngStream(config.seed, 0).generator()
    residuals = {}
    for k in range(n_vectors):
        u = g.standard_normal(len(sub.F))
        rep = trace.verify_identities(chain, sub, u)
        residuals[f"identities_u{k}"] = rep.max_residual()
    dec = trace.trace_form(chain, sub)
    residuals["trace_routes"] = dec.route_residual
    cert = trace.trace_jump_kill(chain, sub)
    residuals["jump_certificate"] = cert.jump_residual
    residuals["kill_certificate"] = cert.kill_residual
    _, _, feller = trace.feller_for(chain, sub)
    for k in range(n_densities):
        phi = g.uniform(0.2, 5.0, len(sub.E0))
        _, _, feller_z = trace.time_change_chain(chain, sub, phi)
        scale = max(np.max(np.abs(feller.U)), 1.0)
        residuals[f"time_change_{k}"] = float(
            max(np.max(np.abs(feller_z.U - feller.U)),
                np.max(np.abs(feller_z.V - feller.V))) / scale)

    checks = []
    for name, val in residuals.items():
        tol = tol_route if name == "trace_routes" else tol_identity
        checks.append((val <= tol, True))
    status = _status(checks)
    lines = [f"chain-verify on {config.get('chain', 'file')} (seed {config.seed})"]
    for name, val in residuals.items():
        tol = tol_route if name == "trace_routes" else tol_identity
        mark = "ok" if val <= tol else "FAIL"
        lines.append(f"  {name:20s} residual {_fmt(val)}  tol {_fmt(tol)}  {mark}")
    lines.append(f"status: {status}")
    report = {
        "experiment": "chain-verify", "seed": config.seed,
        "residuals": residuals,
        "tolerances": {"identity_rel": tol_identity, "route_rel": tol_route},
        "status": status,
    }
    return ReportBundle(kind=config.kind, seed=config.seed, status=status,
                        report=report, summary_lines=lines)


def _run_chain_mc(config: ExperimentConfig) -> ReportBundle:
    chain, sub = _load_chain(config)
    n_paths = config.get("mc", "n_paths", 64, int)
    horizon = config.get("mc", "horizon", 200.0, float)
    z_bound = config.get("mc", "z_bound", 4.0, float)
    levy_paths = config.get("mc", "levy_paths", 20000, int)
    levy_t = config.get("mc", "levy_t", 0.1, float)
    want_hist = config.get("mc", "histogram", "false").lower() == "true"
    streams = derive_streams(config.seed, config.n_workers)

    _, _, feller = trace.feller_for(chain, sub)
    k = len(sub.F)
    reports = {}
    checks = []
    hist_rows = []

    psi = 1.0 - np.eye(k)
    exact_pairs = float(np.sum(feller.u_offdiag()))
    try:
        if chain.conservative:
            rep = chain_mc.estimate_feller_mc(chain, sub, psi, horizon, n_paths, streams)
        else:
            rep = chain_mc.estimate_feller_mc(chain, sub, psi, horizon, n_paths, streams,
                                              t_pair=(horizon, horizon / 2))
        z = (rep.estimate - exact_pairs) / rep.std_error if rep.std_error else 0.0
        reports["feller_pairs"] = {**rep.to_dict(), "exact": exact_pairs, "z_score": z}
        checks.append((abs(z) < z_bound, True))
    except InsufficientEvents as e:
        reports["feller_pairs"] = {"error": str(e), "n_events": e.n_events}
        checks.append((False, False))

    if not chain.conservative:
        t_grid = config.get_floats("mc", "t_grid", default="0.4 0.2")
        sup_paths = config.get("mc", "supplementary_paths", 200000, int)
        try:
            rep = chain_mc.estimate_supplementary_mc(
                chain, sub, np.ones(k), t_grid, sup_paths, streams)
            exact_v = float(feller.V.sum())
            z = (rep.estimate - exact_v) / rep.std_error if rep.std_error else 0.0
            reports["supplementary_total"] = {**rep.to_dict(), "exact": exact_v, "z_score": z}
            checks.append((abs(z) < z_bound, True))
        except InsufficientEvents as e:
            reports["supplementary_total"] = {"error": str(e), "n_events": e.n_events}
            checks.append((False, False))

    f = np.zeros((chain.n, chain.n + 1))
    f[:, :-1] = 1.0 - np.eye(chain.n)
    f[:, -1] = 1.0
    rep = chain_mc.levy_jump_check(chain, 0, f, levy_t, levy_paths, streams)
    reports["levy_system"] = rep.to_dict()
    checks.append((abs(rep.z_score) < z_bound, True))

    if want_hist:
        counts = {}
        for stream in streams:
            paths = chain_mc.simulate_batch(chain, chain.m, horizon, stream,
                                            max(n_paths // len(streams), 1))
            for path in paths:
                for exc in chain_mc.excursion_decompose(path, sub):
                    key = (exc.pre_state,
                           "dead" if exc.post_state is None else exc.post_state)
                    counts[key] = counts.get(key, 0) + 1
        hist_rows = [("pre_state", "post_state", "count")]
        for key in sorted(counts, key=str):
            hist_rows.append((key[0], key[1], counts[key]))

    status = _status(checks)
    lines = [f"chain-mc on {config.get('chain', 'file')} (seed {config.seed}, "
             f"{n_paths} paths, horizon {horizon})"]
    for name, rep in reports.items():
        if "error" in rep:
            lines.append(f"  {name:22s} inconclusive: {rep['error']}")
        else:
            lines.append(f"  {name:22s} est {_fmt(rep['estimate'])} +- {_fmt(rep['std_error'])}"
                         f"  exact {_fmt(rep['exact'])}  z {_fmt(rep['z_score'])}")
    lines.append(f"status: {status}")
    report = {"experiment": "chain-mc", "seed": config.seed, "n_paths": n_paths,
              "horizon": horizon, "estimators": reports, "z_bound": z_bound,
              "status": status}
    csv_blocks = {"excursion_histogram.csv": hist_rows} if hist_rows else {}
    return ReportBundle(kind=config.kind, seed=config.seed, status=status,
                        report=report, summary_lines=lines, csv_blocks=csv_blocks)


def _sphere_from(config: ExperimentConfig) -> sphere.SphereSpec:
    n = config.get("sphere", "n", 3, int)
    r = config.get("sphere", "r", 1.0, float)
    return sphere.SphereSpec(n, r)


def _harmonic_cases(spec: sphere.SphereSpec, max_degree: int):
    cases = [("constant", sphere.BoundaryFunction.from_coeffs(
        spec, {(0, 0): float(np.sqrt(4 * np.pi)) * spec.r}))]
    polys = {
        1: ("xi1", lambda p: p[:, 0] / spec.r),
        2: ("xi1*xi2", lambda p: p[:, 0] * p[:, 1] / spec.r**2),
        3: ("xi1*xi2*xi3", lambda p: p[:, 0] * p[:, 1] * p[:, 2] / spec.r**3),
    }
    for deg in range(1, max_degree + 1):
        name, fn = polys[deg]
        cases.append((name, sphere.BoundaryFunction.from_callable(spec, fn, degree=deg)))
    return cases


def _run_sphere_verify(config: ExperimentConfig) -> ReportBundle:
    spec = _sphere_from(config)
    max_degree = config.get("suite", "max_degree", 3, int)
    tol_exact = config.get("tolerances", "closed_form_rel", 1e-10, float)
    tol_quad = config.get("tolerances", "quadrature_rel", 1e-3, float)
    base_order = config.get("suite", "base_order", 47, int)
    quad = sphere.sphere_quadrature(spec, base_order)

    if "function" in config.sections.get("sphere", {}):
        path = config.path("sphere", "function")
        cases = [("file", sphere.read_boundary_function(path, spec))]
    else:
        cases = _harmonic_cases(spec, max_degree)

    results = {}
    checks = []
    for name, phi in cases:
        chk = sphere.verify_eq_2_39(spec, phi, quad=quad)
        tol = tol_exact if phi.degree == 0 else tol_quad
        results[name] = {"lhs": chk.lhs, "rhs": chk.rhs,
                         "residual": chk.residual, "order": chk.order,
                         "tolerance": tol}
        checks.append((chk.residual <= tol, True))
    status = _status(checks)
    lines = [f"sphere-verify n={spec.n} r={spec.r} (order {quad.order})"]
    for name, res in results.items():
        mark = "ok" if res["residual"] <= res["tolerance"] else "FAIL"
        lines.append(f"  {name:12s} lhs {_fmt(res['lhs'])} rhs {_fmt(res['rhs'])} "
                     f"residual {_fmt(res['residual'])}  {mark}")
    lines.append(f"status: {status}")
    report = {"experiment": "sphere-verify", "seed": config.seed,
              "n": spec.n, "r": spec.r, "cases": results, "status": status}
    return ReportBundle(kind=config.kind, seed=config.seed, status=status,
                        report=report, summary_lines=lines)


def _run_sphere_mc(config: ExperimentConfig) -> ReportBundle:
    spec = _sphere_from(config)
    x_radius = config.get("mc", "x_radius", 2.0, float)
    n_walks = config.get("mc", "n_walks", 100000, int)
    kill_radius = config.get("mc", "kill_radius", 100.0 * spec.r, float)
    z_bound = config.get("mc", "z_bound", 4.0, float)
    streams = derive_streams(config.seed, config.n_workers)
    cfg = bm.ShellConfig(kill_radius=kill_radius)

    x = np.zeros(spec.n)
    x[0] = x_radius
    est = bm.escape_probability_mc(spec, x, cfg, n_walks, streams)
    reports = {
        "escape_annulus": est.escaped.to_dict(),
        "escape_corrected": est.corrected.to_dict(),
        "stuck_walks": est.n_stuck,
    }
    checks = [(abs(est.escaped.z_score) < z_bound, True),
              (abs(est.corrected.z_score) < z_bound, True),
              (est.stuck_fraction < 1e-6, True)]
    lines = [f"sphere-mc n={spec.n} r={spec.r} |x|={x_radius} R={kill_radius} "
             f"({n_walks} walks, seed {config.seed})"]
    lines.append(f"  escape (annulus)   est {_fmt(est.escaped.estimate)} "
                 f"exact {_fmt(est.escaped.exact)} z {_fmt(est.escaped.z_score)}")
    lines.append(f"  escape (corrected) est {_fmt(est.corrected.estimate)} "
                 f"exact {_fmt(est.corrected.exact)} z {_fmt(est.corrected.z_score)}")
    csv_blocks = {}

    shell_cfg = config.sections.get("shell", {})
    if shell_cfg.get("enabled", "false").lower() == "true":
        eps_schedule = config.get_floats("shell", "eps_schedule", "0.1 0.05 0.025")
        n_per_eps = config.get("shell", "n_per_eps", 200000, int)
        bin_tol = config.get("shell", "bin_rel_tol", 0.10, float)
        raw_bins = config.get("shell", "bins", "30 90 150 180")
        edges = [float(tok) for tok in raw_bins.split()]
        bins = list(zip(edges[:-1], edges[1:]))
        rep = bm.estimate_feller_sphere_mc(spec, bins, eps_schedule, n_per_eps, streams,
                                           cfg=cfg)
        shell_out = {"v_hat": rep.v_hat.to_dict(), "bins": []}
        for b in rep.bins:
            shell_out["bins"].append({
                "lo_deg": b.lo_deg, "hi_deg": b.hi_deg, "density": b.density,
                "std_error": b.std_error, "reference": b.reference,
                "n_events": b.n_events, "estimated": b.estimated,
            })
            if b.estimated:
                ok = abs(b.density - b.reference) / b.reference <= bin_tol
                # stretch goal: misses downgrade to inconclusive, not fail
                checks.append((True, ok))
                lines.append(f"  shell bin [{b.lo_deg:.0f},{b.hi_deg:.0f}] "
                             f"dens {_fmt(b.density)} ref {_fmt(b.reference)} "
                             f"{'ok' if ok else 'inconclusive'}")
        v_ok = abs(rep.v_hat.estimate - rep.v_hat.exact) / rep.v_hat.exact <= bin_tol
        checks.append((True, v_ok))
        lines.append(f"  shell v_hat {_fmt(rep.v_hat.estimate)} ref {_fmt(rep.v_hat.exact)} "
                     f"{'ok' if v_ok else 'inconclusive'}")
        reports["shell"] = shell_out
        csv_blocks["shell_bins.csv"] = rep.csv_rows()

    status = _status(checks)
    lines.append(f"status: {status}")
    report = {"experiment": "sphere-mc", "seed": config.seed, "n_walks": n_walks,
              "kill_radius": kill_radius, "estimators": reports, "status": status}
    return ReportBundle(kind=config.kind, seed=config.seed, status=status,
                        report=report, summary_lines=lines, csv_blocks=csv_blocks)


def _run_prototype(config: ExperimentConfig) -> ReportBundle:
    dim = config.get("lattice", "dim", 3, int)
    n_side = config.get("lattice", "sites_per_axis", 9, int)
    h = config.get("lattice", "h", 0.75, float)
    origin = config.get("lattice", "origin", -1.5, float)
    alpha = config.get("lattice", "alpha", 1.0, float)
    cutoff = config.get("lattice", "cutoff", 1.0, float)
    kernel_kind = config.get("lattice", "kernel", "mixed")
    ball_r = config.get("lattice", "ball_radius", 1.0, float)
    shell_center = config.get_floats("lattice", "shell_center", "3.0 0.0 0.0")
    shell_radii = config.get_floats("lattice", "shell_radii", "0.25 1.75")
    tol = config.get("tolerances", "identity_rel", 1e-10, float)

    grid = lattice.BoxGrid(shape=(n_side,) * dim, h=h, origin=(origin,) * dim)
    kernel = (kernel_kind,) if kernel_kind == "laplacian" else (kernel_kind, alpha, cutoff)
    pred = lattice.ball_and_shell_predicate(ball_r, shell_center, shell_radii)
    chain, sub, pts = lattice.lattice_chain_from_kernel(grid, kernel, pred)

    g = RngStream(config.seed, 0).generator()
    residuals = {}
    for k in range(3):
        u = g.standard_normal(len(sub.F))
        residuals[f"identities_u{k}"] = trace.verify_identities(chain, sub, u).max_residual()
    dec = trace.trace_form(chain, sub)
    residuals["trace_routes"] = dec.route_residual

    from .chain import beurling_deny
    _, _, feller = trace.feller_for(chain, sub)
    J, kappa = beurling_deny(chain)
    iF = np.array(sub.F)
    ball_mask = np.array([float(np.linalg.norm(pts[i]) <= ball_r) for i in sub.F])
    assembled = sphere.prototype_trace_energy(
        ball_mask, feller.U, feller.V, jump=J[np.ix_(iF, iF)], kill=kappa[iF])
    target = dec.form(ball_mask)
    residuals["prototype_energy"] = abs(assembled - target) / max(abs(target), 1.0)

    checks = [(v <= tol, True) for v in residuals.values()]
    status = _status(checks)
    lines = [f"prototype lattice {n_side}^{dim}, h={h}, kernel={kernel_kind} "
             f"(alpha={alpha}), |F|={len(sub.F)} of {chain.n}"]
    for name, val in residuals.items():
        mark = "ok" if val <= tol else "FAIL"
        lines.append(f"  {name:18s} residual {_fmt(val)}  tol {_fmt(tol)}  {mark}")
    lines.append(f"status: {status}")
    report = {"experiment": "prototype", "seed": config.seed,
              "n_states": chain.n, "n_trace": len(sub.F),
              "residuals": residuals, "tolerance": tol, "status": status}
    return ReportBundle(kind=config.kind, seed=config.seed, status=status,
                        report=report, summary_lines=lines)


_RUNNERS = {
    "chain-verify": _run_chain_verify,
    "chain-mc": _run_chain_mc,
    "sphere-verify": _run_sphere_verify,
    "sphere-mc": _run_sphere_mc,
    "prototype": _run_prototype,
}


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Dispatch to the suite named by the config kind."""
    return _RUNNERS[config.kind](config)


def emit_reports(bundle: ReportBundle, out_dir) -> list:
    """Write report.json, summary.txt and CSV blocks; returns paths written.

    JSON keys are sorted and no timestamps are embedded, so rerunning an
    identical config yields identical bytes.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        report_path = out / "report.json"
        report_path.write_text(json.dumps(bundle.report, indent=2, sort_keys=True,
                                          allow_nan=True) + "\n")
        written.append(report_path)
        summary_path = out / "summary.txt"
        summary_path.write_text("\n".join(bundle.summary_lines) + "\n")
        written.append(summary_path)
        for name, rows in bundle.csv_blocks.items():
            p = out / name
            with open(p, "w", newline="") as fh:
                csv.writer(fh).writerows(rows)
            written.append(p)
        return written
    except OSError as e:
        raise IoError(f"cannot write reports under {out}: {e}") from e


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trace-forms",
        description="verification and Monte Carlo suites for chain traces and "
                    "the Brownian sphere example")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, kind=args.kind, seed=args.seed, out=args.out)
        bundle = run_experiment(config)
        if config.out_dir is not None:
            emit_reports(bundle, config.out_dir)
        for line in bundle.summary_lines:
            print(line)
        return bundle.exit_code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except IoError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except TraceFormsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
