"""Config-driven scenario runner.

Usage::

    svolterra SUBCOMMAND --config run.ini --out results/ [--seed 7] [--workers 4]
    svolterra rerun --manifest results/manifest.json --out again/

Each subcommand reads the INI section of the same name.  Outputs are CSV
files whose first line is a ``#`` comment carrying the schema version,
plus ``manifest.json`` with the config text, its SHA-256, the seed, the
library versions and a hash of every CSV written.  Nothing is written
when the configuration is invalid (exit 2) or a numerical routine fails
(exit 3).
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import os
import platform
import sys
from typing import Dict, List, Tuple

import numpy as np
import scipy

from . import kernels as kmod
from . import ldp
from . import noise as nmod
from . import resolvent as rmod
from . import scenarios
from . import spectral_spde as sp
from . import volterra_sde as vs
from .errors import ConfigurationError, SvolterraError
from .timegrid import make_grid

__all__ = ["main", "run", "CSV_VERSION"]

CSV_VERSION = "svolterra-csv/1"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SUBCOMMANDS = ("classify", "resolvent", "volterra", "sde", "ldp", "spde", "fbm")
STOCHASTIC = ("sde", "ldp", "spde", "fbm")

COLUMNS = {
    "classify": "label,params,verdict,gripenberg_limit,sup_integral,power_finite",
    "resolvent": "resolvent.csv: i,j,t_i,t_j,value; decay.csv: n,integrated_term",
    "volterra": "node,t,x,g,gronwall_bound",
    "sde": "moments.csv: node,t,mean,var,se_mean,alive; paths.csv (optional): "
           "path,node,component,value,tau_index",
    "ldp": "epsilon,p_hat,eps_log_p,ci_lo,ci_hi,minus_I",
    "spde": "modes.csv: mode,lambda,mean_T,var_T,var_exact; residual.csv: path,residual",
    "fbm": "t_a,t_b,cov,se,exact",
}

PHI = {
    "none": None,
    "linear": lambda c: (lambda u: c * u),
    "allen-cahn": lambda c: (lambda u: c * (u - u ** 3)),
    "sine": lambda c: (lambda u: c * np.sin(u)),
}


# ---------------------------------------------------------------------------
# config helpers

class _Section:
    def __init__(self, cp: configparser.ConfigParser, name: str):
        if not cp.has_section(name):
            raise ConfigurationError(f"config has no [{name}] section")
        self.s = cp[name]
        self.name = name

    def get(self, key, default=None):
        if key in self.s:
            return self.s[key].strip()
        if default is None:
            raise ConfigurationError(f"[{self.name}] is missing required key {key!r}")
        return default

    def float(self, key, default=None):
        v = self.get(key, None if default is None else repr(default))
        try:
            return float(v)
        except ValueError:
            raise ConfigurationError(f"[{self.name}] {key} = {v!r} is not a number") from None

    def int(self, key, default=None):
        v = self.float(key, default)
        if int(v) != v:
            raise ConfigurationError(f"[{self.name}] {key} must be an integer")
        return int(v)

    def bool(self, key, default=False):
        v = self.get(key, "true" if default else "false").lower()
        if v not in ("true", "false", "yes", "no", "1", "0"):
            raise ConfigurationError(f"[{self.name}] {key} must be a boolean")
        return v in ("true", "yes", "1")

    def floats(self, key, default=None):
        v = self.get(key, default)
        try:
            return [float(x) for x in v.replace(",", " ").split()] if v else []
        except ValueError:
            raise ConfigurationError(f"[{self.name}] {key} must be a list of numbers") from None

    def kwargs(self, key):
        """``key = a=1, b=2`` into a dict of floats."""
        v = self.get(key, "")
        out = {}
        for part in filter(None, (p.strip() for p in v.split(","))):
            if "=" not in part:
                raise ConfigurationError(f"[{self.name}] {key}: expected name=value, got {part!r}")
            k, val = (x.strip() for x in part.split("=", 1))
            try:
                out[k] = float(val)
            except ValueError:
                raise ConfigurationError(f"[{self.name}] {key}: {val!r} is not a number") from None
        return out

    def grid(self):
        return make_grid(self.float("T", 1.0), self.int("N", 256), self.get("grid", "uniform"),
                         self.float("p", 1.0))

    def kernel(self):
        return kmod.kernel_from_label(self.get("kernel"), self.floats("params", ""))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(header: str, columns: List[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {CSV_VERSION} {header}\n")
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands; each returns {filename: csv text}

def _classify(sec: _Section, seed, workers) -> Dict[str, str]:
    k = sec.kernel()
    rep = kmod.classify(k, T=sec.float("T", 1.0))
    row = rep.row()
    cols = ["label", "params", "verdict", "gripenberg_limit", "sup_integral", "power_finite"]
    return {"classify.csv": _csv("classify", cols, [[
        k.label, " ".join(_fmt(p) for p in k.params), row["verdict"], row["gripenberg_limit"],
        row["sup_integral"], row["power_finite"]]])}


def _resolvent(sec: _Section, seed, workers):
    k = sec.kernel()
    grid = sec.grid()
    R = rmod.resolvent_sum(k, grid, tol=sec.float("tol", 1e-10), n_cap=sec.int("n_cap", 400),
                           force=sec.bool("force", False))
    tab = R.values
    t = grid.nodes
    rows = ([i, j, t[i], t[j], tab[i, j]] for i in range(grid.N + 1) for j in range(i + 1))
    hdr = f"resolvent kernel={k!r} grid={grid.describe()} terms={R.terms_used}"
    return {"resolvent.csv": _csv(hdr, ["i", "j", "t_i", "t_j", "value"], rows),
            "decay.csv": _csv(hdr, ["n", "integrated_term"],
                              [[n + 1, v] for n, v in enumerate(R.decay)])}


_SEEDS = {"zero": lambda t: 0 * t, "one": lambda t: 1 + 0 * t, "linear": lambda t: t,
          "sqrt": np.sqrt}


def _volterra(sec: _Section, seed, workers):
    k = sec.kernel()
    grid = sec.grid()
    g = sec.float("g", 0.0)
    seed_name = sec.get("seed_function", "none")
    if seed_name != "none" and seed_name not in _SEEDS:
        raise ConfigurationError(f"seed_function must be one of none, {', '.join(_SEEDS)}")
    gv = np.full(grid.N + 1, g)
    if seed_name == "none":
        x = rmod.linear_volterra_solve(gv, k, grid)
        hdr = "volterra forward substitution"
    else:
        res = rmod.linear_volterra_solve(gv, k, grid, seed=_SEEDS[seed_name](grid.nodes),
                                         damping=sec.float("damping", 0.5),
                                         tol=sec.float("tol", 1e-8),
                                         max_sweeps=sec.int("max_sweeps", 5000))
        x = res.values
        hdr = f"volterra sweeps converged={_fmt(res.converged)} sweeps={res.sweeps}"
    bound = np.full(grid.N + 1, math.nan)
    if sec.bool("gronwall", False) and g >= 0:
        R = rmod.resolvent_sum(k, grid, force=sec.bool("force", False))
        bound = rmod.gronwall_bound(gv, k, R).values
    t = grid.nodes
    rows = ([i, t[i], x[i], gv[i], bound[i]] for i in range(grid.N + 1))
    return {"volterra.csv": _csv(hdr, ["node", "t", "x", "g", "gronwall_bound"], rows)}


def _noise(sec: _Section, grid, m, seed, workers):
    return nmod.sample_wiener(grid, m, sec.int("paths", 1000), seed, workers=workers)


def _sde(sec: _Section, seed, workers):
    c = scenarios.make_scenario(sec.get("scenario"), **sec.kwargs("params"))
    grid = sec.grid()
    cfg = vs.SolveConfig(scheme=sec.get("scheme", "euler"),
                         stop_radius=sec.float("stop_radius", math.inf),
                         picard_tol=sec.float("picard_tol", 1e-8),
                         picard_iters=sec.int("picard_iters", 200), workers=workers)
    e = _noise(sec, grid, c.m, seed, workers)
    if cfg.scheme == "picard":
        res, _ = vs.picard_solve(c, e, cfg)
    else:
        res = vs.euler_solve(c, e, cfg)
    X = res.X[:, :, 0]
    alive = np.arange(grid.N + 1)[None, :] < res.tau_index[:, None]
    t = grid.nodes
    rows = []
    for i in range(grid.N + 1):
        v = X[:, i]
        rows.append([i, t[i], v.mean(), v.var(ddof=1) if v.size > 1 else 0.0,
                     v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0,
                     int(alive[:, i].sum())])
    hdr = f"sde scenario={c.label} scheme={cfg.scheme} grid={grid.describe()} paths={e.P}"
    out = {"moments.csv": _csv(hdr, ["node", "t", "mean", "var", "se_mean", "alive"], rows)}
    if sec.bool("write_paths", False):
        P, n, d = res.X.shape
        prow = ([p, i, k, res.X[p, i, k], res.tau_index[p]]
                for p in range(P) for i in range(n) for k in range(d))
        out["paths.csv"] = _csv(hdr, ["path", "node", "component", "value", "tau_index"], prow)
    return out


def _ldp(sec: _Section, seed, workers):
    c = scenarios.make_scenario(sec.get("scenario", "schilder"), **sec.kwargs("params"))
    grid = sec.grid()
    target = ldp.TerminalSet(sec.get("target", "halfspace"), tuple(sec.floats("y", "1.0")),
                             tol=sec.float("tol", 0.01), level=sec.float("level", 1.0))
    minus_I = math.nan
    if sec.bool("rate", True):
        est = ldp.rate_minimize(c, target, grid, M=sec.int("M", 8))
        minus_I = -est.I
    eps = sec.floats("eps", "0.5 0.25 0.125")
    rows = ldp.small_noise_estimate(c, eps, target, sec.int("paths", 20000), seed, grid,
                                    minus_I=minus_I, cfg=vs.SolveConfig(workers=workers))
    cols = ["epsilon", "p_hat", "eps_log_p", "ci_lo", "ci_hi", "minus_I"]
    return {"ldp.csv": _csv(f"ldp scenario={c.label} target={target.kind}", cols,
                            ([r.eps, r.p_hat, r.eps_log_p, r.ci_lo, r.ci_hi, r.minus_I]
                             for r in rows))}


def _spde(sec: _Section, seed, workers):
    model = sp.SpectralModel(sec.int("K", 16), sec.float("mu", 1.0))
    grid = sec.grid()
    phi_name = sec.get("phi", "none")
    if phi_name not in PHI:
        raise ConfigurationError(f"phi must be one of {', '.join(PHI)}")
    Phi = PHI[phi_name](sec.float("phi_c", 1.0)) if PHI[phi_name] else None
    k = np.arange(1, model.K + 1)
    sig = sec.float("sigma", 1.0) * k ** (-sec.float("sigma_decay", 2.0))
    Psi = sp.NoiseOperator.diagonal(sig)
    x0 = np.zeros(model.K)
    x0[0] = sec.float("x0", 0.0)
    cfg = vs.SolveConfig(stop_radius=sec.float("stop_radius", math.inf), workers=workers)
    e = _noise(sec, grid, model.K, seed, workers)
    res = sp.mild_solve(model, x0, Phi, Psi, e, cfg)
    XT = res.X[:, -1, :]
    exact = np.where(Phi is None, sig ** 2 * -np.expm1(-2 * model.lam * grid.T) / (2 * model.lam),
                     math.nan)
    rows = ([int(k[q]), model.lam[q], XT[:, q].mean(), XT[:, q].var(ddof=1), exact[q]]
            for q in range(model.K))
    resid = sp.strong_residual(model, res, x0, Phi, Psi, e)
    hdr = f"spde K={model.K} phi={phi_name} grid={grid.describe()} paths={e.P}"
    return {"modes.csv": _csv(hdr, ["mode", "lambda", "mean_T", "var_T", "var_exact"], rows),
            "residual.csv": _csv(hdr, ["path", "residual"], enumerate(resid))}


def _fbm(sec: _Section, seed, workers):
    H = sec.float("H", 0.7)
    grid = sec.grid()
    e = nmod.fbm_from_wiener(_noise(sec, grid, 1, seed, workers), H)
    nodes = [int(round(f * grid.N)) for f in sec.floats("fractions", "0.25 0.5 0.75 1.0")]
    if any(not 0 < n <= grid.N for n in nodes):
        raise ConfigurationError("fractions must lie in (0, 1]")
    cov = nmod.empirical_covariance(e, nodes)
    t = cov.times
    rows = []
    for a in range(len(nodes)):
        for b in range(a, len(nodes)):
            ex = 0.5 * (t[a] ** (2 * H) + t[b] ** (2 * H) - abs(t[a] - t[b]) ** (2 * H))
            rows.append([t[a], t[b], cov.cov[a, b], cov.se[a, b], ex])
    return {"fbm.csv": _csv(f"fbm H={H!r} grid={grid.describe()} paths={e.P}",
                            ["t_a", "t_b", "cov", "se", "exact"], rows)}


HANDLERS = {"classify": _classify, "resolvent": _resolvent, "volterra": _volterra, "sde": _sde,
            "ldp": _ldp, "spde": _spde, "fbm": _fbm}


# ---------------------------------------------------------------------------

def _versions() -> dict:
    try:
        from importlib.metadata import version
        pkg = version("artifact")
    except Exception:  # not installed as a distribution
        pkg = "unknown"
    return {"svolterra": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(command: str, config_text: str, out_dir: str, seed=None, workers: int = 1) -> Tuple[int, str]:
    """Execute one subcommand; returns ``(exit_code, message)``."""
    try:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        cp.read_string(config_text)
        sec = _Section(cp, command)
        if seed is None and "seed" in sec.s:
            seed = sec.int("seed")
        if command in STOCHASTIC and seed is None:
            raise ConfigurationError(f"[{command}] needs a seed (config key or --seed)")
        if workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        files = HANDLERS[command](sec, seed, workers)
    except (ConfigurationError, configparser.Error) as exc:
        return EXIT_CONFIG, f"configuration error: {exc}"
    except SvolterraError as exc:
        return EXIT_NUMERIC, f"numerical failure: {exc}"
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return EXIT_NUMERIC, f"numerical failure: {exc}"

    os.makedirs(out_dir, exist_ok=True)
    hashes = {}
    for name, text in files.items():
        data = text.encode()
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "command": command,
        "config": config_text,
        "inputs_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": seed,
        "workers": workers,
        "versions": _versions(),
        "outputs": hashes,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK, f"wrote {', '.join(sorted(files))} to {out_dir}"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svolterra",
                                description="Stochastic Volterra equations: scenario runner.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with one section per subcommand")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the [{name}] section",
                       epilog=f"CSV columns: {COLUMNS[name]}")
    rr = sub.add_parser("rerun", help="re-run a manifest and check the output hashes")
    rr.add_argument("--manifest", required=True)
    rr.add_argument("--out", required=True)
    rr.add_argument("--workers", type=int, default=None,
                    help="worker threads (default: as recorded)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "rerun":
        try:
            with open(args.manifest) as fh:
                man = json.load(fh)
            command, text = man["command"], man["config"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"configuration error: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        workers = args.workers if args.workers is not None else man.get("workers", 1)
        code, msg = run(command, text, args.out, man.get("seed"), workers)
        if code == EXIT_OK:
            bad = []
            for name, h in man.get("outputs", {}).items():
                with open(os.path.join(args.out, name), "rb") as fh:
                    if hashlib.sha256(fh.read()).hexdigest() != h:
                        bad.append(name)
            msg += "; outputs identical" if not bad else f"; outputs differ: {', '.join(bad)}"
            if bad:
                print(msg, file=sys.stderr)
                return EXIT_NUMERIC
        print(msg, file=sys.stderr if code else sys.stdout)
        return code
    if not args.config:
        print("configuration error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, msg = run(args.command, text, args.out, args.seed, args.workers)
    print(msg, file=sys.stderr if code else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
