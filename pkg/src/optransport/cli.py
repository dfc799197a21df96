"""Config parsing, run orchestration and artifact emission."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models, perturb as pt, regimes, transport as tr, verification
from .spectral import Grid

log = logging.getLogger("optransport")

MODEL_TAGS = ("atomic_pair", "spin_chain", "crossing")
GAUGES = ("analytic", "pivot-real", "parallel-transport")
MIN_GRID = 1001
REGIME_GRID_CAP = 4001


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CrossingModelParams:
    epsilon: float = 5e-2
    aleph: float = 4.0
    s_star: float = 0.5
    mu_gap: float = 1.0
    seed: int = 3


@dataclass(frozen=True)
class ThermalConfig:
    beta_inv: float = 0.0  # k_B T in energy units; 0 selects the ground E level
    weight_floor: float = 1e-12


@dataclass(frozen=True)
class CrossingConfig:
    beta: str = "1"
    p: float | None = None  # None: Landau-Zener estimate
    varphi: float = 0.0
    s_star: float | None = None
    offset_steps: int = 5


@dataclass(frozen=True)
class RunConfig:
    model: str = "atomic_pair"
    params: object = field(default_factory=models.AtomicPairParams.weak)
    T: float = 200.0
    grid_points: int = 20001
    output_stride: int = 10
    methods: tuple = ("exact", "alone", "strong", "weak1")
    a: int = 0
    alpha: str = "0"
    alpha_l: str = "(000)"
    alpha_r: str = "(000)"
    gauge: str = "analytic"
    density_mode: str = "first-order"
    exact_mode: str = "midpoint"
    eta2_phi_index: str = "greek"
    regime_low: float = regimes.LOW
    regime_high: float = regimes.HIGH
    output_dir: str = "out"
    name: str = "run"
    thermal: ThermalConfig | None = None
    crossing: CrossingConfig | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods nonempty: at least one method is required")
        bad = [m for m in self.methods if m not in tr.METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; choose from {tr.METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.grid_points < MIN_GRID:
            raise ConfigError(f"grid_points must be >= {MIN_GRID}, got {self.grid_points}")
        if (self.grid_points - 1) % self.output_stride:
            raise ConfigError("output_stride must divide grid_points - 1")
        if self.model not in MODEL_TAGS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.gauge not in GAUGES:
            raise ConfigError(f"unknown gauge {self.gauge!r}")
        if "thermal" in self.methods and self.thermal is None:
            raise ConfigError("method thermal needs a [thermal] section")
        if "crossing" in self.methods and self.crossing is None:
            raise ConfigError("method crossing needs a [crossing] section")

    @classmethod
    def preset(cls, model="atomic_pair", regime="weak", **kw):
        """Worked-model presets; ``regime`` selects the weak or strong parameter set."""
        if regime not in ("weak", "strong"):
            raise ConfigError(f"unknown preset {regime!r}")
        if model == "atomic_pair":
            base = dict(params=getattr(models.AtomicPairParams, regime)(), T=200.0 if regime == "weak" else 20000.0,
                        grid_points=20001 if regime == "weak" else 2000001, output_stride=10 if regime == "weak" else 1000)
        elif model == "spin_chain":
            base = dict(params=getattr(models.SpinChainParams, regime)(), T=50.0 if regime == "weak" else 5000.0,
                        grid_points=20001 if regime == "weak" else 200001, output_stride=10 if regime == "weak" else 100)
        elif model == "crossing":
            base = dict(params=CrossingModelParams(), T=100.0, alpha="0", crossing=CrossingConfig())
        else:
            raise ConfigError(f"unknown model {model!r}")
        base.update(model=model)
        base.update(kw)
        return cls(**base)


# ------------------------------------------------------------------ parser

_RUN_KEYS = {
    "model": str, "preset": str, "T": float, "grid_points": int, "output_stride": int, "methods": list,
    "a": int, "alpha": str, "alpha_l": str, "alpha_r": str, "gauge": str, "density_mode": str,
    "exact_mode": str, "eta2_phi_index": str, "regime_low": float, "regime_high": float,
    "output_dir": str, "name": str,
}


def _dataclass_keys(cls):
    hints = {"float": float, "int": int, "str": str, "bool": bool}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, float) for f in dataclasses.fields(cls)}


SECTIONS = {
    "run": _RUN_KEYS,
    "model.atomic_pair": {**_dataclass_keys(models.AtomicPairParams), "preset": str},
    "model.spin_chain": {**_dataclass_keys(models.SpinChainParams), "preset": str},
    "model.crossing": _dataclass_keys(CrossingModelParams),
    "thermal": {"beta_inv": float, "weight_floor": float},
    "crossing": {"beta": str, "p": "p", "varphi": float, "s_star": float, "offset_steps": int},
}


def _convert(kind, raw, key, lineno):
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind is float:
            return float(raw)
        if kind is list:
            body = raw.strip()
            if body.startswith("[") and body.endswith("]"):
                body = body[1:-1]
            return tuple(x.strip().strip("\"'") for x in body.split(",") if x.strip())
        if kind == "p":
            return None if raw.lower() == "auto" else float(raw)
        return raw.strip("\"'")
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for key {key!r}") from None


def parse_text(text, source="<config>"):
    """Parse sectioned key=value text into {section: {key: (value, lineno)}}."""
    data, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            if section in data:
                raise ConfigError(f"{source}:{lineno}: duplicate section [{section}]")
            data[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any section")
        key, raw = (x.strip() for x in line.split("=", 1))
        schema = SECTIONS[section]
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{section}]")
        if key in data[section]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        data[section][key] = (_convert(schema[key], raw, key, lineno), lineno)
    return data


def _model_params(model, sections, source, default_preset="weak"):
    sec = f"model.{model}"
    vals = {k: v for k, (v, _) in sections.get(sec, {}).items()}
    others = [s for s in sections if s.startswith("model.") and s != sec]
    if others:
        raise ConfigError(f"{source}: section [{others[0]}] does not match model {model!r}")
    try:
        if model == "crossing":
            return CrossingModelParams(**vals)
        cls = models.AtomicPairParams if model == "atomic_pair" else models.SpinChainParams
        preset = vals.pop("preset", default_preset)
        if preset not in ("weak", "strong"):
            raise ConfigError(f"{source}:{sections[sec]['preset'][1]}: unknown preset {preset!r}")
        return getattr(cls, preset)(**vals)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: [{sec}] {exc}") from None


def config_from_text(text, source="<config>"):
    sections = parse_text(text, source)
    run = {k: v for k, (v, _) in sections.get("run", {}).items()}
    lines = {k: ln for k, (_, ln) in sections.get("run", {}).items()}
    model = run.pop("model", "atomic_pair")
    if model not in MODEL_TAGS:
        raise ConfigError(f"{source}:{lines.get('model')}: unknown model {model!r}")
    regime = run.pop("preset", None)
    params = _model_params(model, sections, source, regime or "weak")
    if "thermal" in sections:
        run["thermal"] = ThermalConfig(**{k: v for k, (v, _) in sections["thermal"].items()})
    if "crossing" in sections:
        run["crossing"] = CrossingConfig(**{k: v for k, (v, _) in sections["crossing"].items()})
    try:
        if regime is not None:
            return RunConfig.preset(model, regime, params=params, **run)
        return RunConfig(model=model, params=params, **run)
    except ConfigError as exc:
        key = next((k for k in lines if k in str(exc)), None)
        where = f"{source}:{lines[key]}" if key else source
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_text(path.read_text(), str(path))


# ------------------------------------------------------------ orchestration


def build_model(config: RunConfig):
    p = config.params
    if config.model == "atomic_pair":
        return models.build_atomic_pair(p)
    if config.model == "spin_chain":
        return models.build_spin_chain(p)
    return models.crossing_family(epsilon=p.epsilon, aleph=p.aleph, s_star=p.s_star, mu_gap=p.mu_gap, seed=p.seed)


def resolve_label(family, config: RunConfig, label=None):
    if config.model == "spin_chain" and label is None:
        return models.chain_label_index(family, config.alpha_l, config.alpha_r)
    raw = config.alpha if label is None else label
    if config.model == "spin_chain" and "|" in raw:
        left, right = raw.split("|")
        return models.chain_label_index(family, left.strip(), right.strip())
    idx = int(raw)
    if not 0 <= idx < family.dim_e:
        raise ConfigError(f"E label {raw} out of range")
    return idx


def _exact_run(family, ctx, grid, a, alpha, config):
    ref = np.kron(ctx.zeta[0][:, a], ctx.xi[0][:, alpha])
    psi0 = pt.full_eigenvector(family, np.array([0.0]), ref[None])[0]
    res = tr.solve_schrodinger_exact(family, psi0, config.T, grid, config.output_stride, config.exact_mode)
    return res.reduced(family.dim_s, family.dim_e), res.norm_drift


def _thermal_exact(family, ctx, grid, config):
    weights = tr.boltzmann_weights(ctx.nu[0], config.thermal.beta_inv)
    out = 0.0
    for beta, w in enumerate(weights):
        if w > config.thermal.weight_floor:
            rho, _ = _exact_run(family, ctx, grid, config.a, beta, config)
            out = out + w * rho
    return out


def _crossing_inputs(family, config, a):
    cc = config.crossing
    s_star = cc.s_star if cc.s_star is not None else family.info.get("s_star")
    if s_star is None:
        raise ConfigError("crossing s_star is not set and the model does not provide one")
    p = cc.p
    if p is None:
        if "aleph" not in family.info or "v_cross" not in family.info:
            raise ConfigError("p = auto needs a model that reports aleph and v_cross")
        p = tr.landau_zener_p(config.T, family.epsilon, family.info["v_cross"][a], family.info["aleph"], family.hbar)
    return s_star, p


def run_simulation(config: RunConfig, output_dir=None, write=True):
    """Run every configured method; optionally write the artifacts. Returns the TrajectorySet."""
    family = build_model(config)
    grid = Grid.uniform(config.grid_points)
    ctx = verification.model_context(family, grid, config.gauge)
    a, alpha = config.a, resolve_label(family, config)
    idx = tr.output_indices(grid.count, config.output_stride)
    traj = tr.TrajectorySet(grid.points[idx], np.asarray(ctx.frame_s.vectors)[0])
    refs = {}
    for method in config.methods:
        log.info("method %s", method)
        if method == "exact":
            rho, drift = _exact_run(family, ctx, grid, a, alpha, config)
            traj.add("exact", rho, norm_drift=drift)
        elif method == "alone":
            traj.add(method, tr.transport_alone(ctx.frame_s, a, idx))
        elif method == "strong":
            traj.add(method, tr.transport_strong(ctx, a, alpha, config.density_mode, family, idx))
        elif method.startswith("weak"):
            order = int(method[-1])
            kw = {"eta2_phi_index": config.eta2_phi_index} if order == 2 else {}
            rho, diag = tr.transport_weak(ctx, a, alpha, config.T, order, config.output_stride,
                                          config.density_mode, family, **kw)
            traj.add(method, rho, **diag)
        elif method == "thermal":
            rho, diag = tr.transport_thermal(ctx, a, config.T, config.thermal.beta_inv, config.output_stride,
                                             config.density_mode, family, config.thermal.weight_floor)
            traj.add(method, rho, weights=diag["weights"].tolist())
            if "exact" in config.methods:
                refs[method] = _thermal_exact(family, ctx, grid, config)
        elif method == "crossing":
            s_star, p = _crossing_inputs(family, config, a)
            beta = resolve_label(family, config, config.crossing.beta)
            rho, diag = tr.transport_crossing(ctx, a, alpha, beta, p, config.crossing.varphi, config.T, s_star,
                                              config.output_stride, config.crossing.offset_steps,
                                              config.density_mode, family)
            traj.add(method, rho, p=p, **diag)
    traj.diagnostics["_references"] = refs
    if write:
        out = Path(output_dir if output_dir is not None else config.output_dir)
        write_artifacts(traj, config, family, out)
    return traj


def errors_for(traj, method):
    refs = traj.diagnostics.get("_references", {})
    if method in refs:
        ref = tr.TrajectorySet(traj.s, traj.observable_basis)
        ref.add("exact", refs[method])
        ref.add(method, traj.rho[method])
        return tr.error_series(ref, method)
    return tr.error_series(traj, method)


def _fmt(x):
    return f"{x:.17g}"


def trajectory_table(traj, methods):
    has_exact = "exact" in traj.rho
    header = ["s"]
    cols = [traj.s]
    errs = {}
    for m in methods:
        header += [f"{m}_pop00", f"{m}_coh01"]
        cols += [traj.population(m), traj.coherence(m)]
        if has_exact and m != "exact":
            e = errors_for(traj, m)
            errs[m] = e
            header += [f"{m}_err_pop", f"{m}_err_coh"]
            cols += [e["pop"], e["coh"]]
    return header, np.column_stack(cols), errs


def _csv(header, table, footer):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in table]
    lines += footer
    return "\n".join(lines) + "\n"


def regime_json(config, family=None):
    family = family or build_model(config)
    grid = Grid.uniform(min(config.grid_points, REGIME_GRID_CAP))
    ctx = verification.model_context(family, grid, config.gauge)
    th = regimes.Thresholds(config.regime_low, config.regime_high)
    rep = regimes.regime_report(ctx, config.T, config.a, resolve_label(family, config), th)
    return rep, rep.to_json()


PLOT_TEMPLATE = '''"""Plot populations, coherences and log-scale errors from {csv}."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
with open(path) as fh:
    rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
header, data = rows[0], [[float(x) for x in r] for r in rows[1:]]
col = {{name: [r[i] for r in data] for i, name in enumerate(header)}}
methods = {methods!r}
fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
for m in methods:
    axes[0, 0].plot(col["s"], col[m + "_pop00"], label=m)
    axes[0, 1].plot(col["s"], col[m + "_coh01"], label=m)
    if m + "_err_pop" in col:
        axes[1, 0].semilogy(col["s"], [max(v, 1e-16) for v in col[m + "_err_pop"]], label=m)
        axes[1, 1].semilogy(col["s"], [max(v, 1e-16) for v in col[m + "_err_coh"]], label=m)
axes[0, 0].set_ylabel("population 00")
axes[0, 1].set_ylabel("|coherence 01|")
axes[1, 0].set_ylabel("population error")
axes[1, 1].set_ylabel("coherence error")
for ax in axes[1]:
    ax.set_xlabel("s")
axes[0, 0].legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
'''


def write_artifacts(traj, config, family, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    header, table, errs = trajectory_table(traj, config.methods)
    footer = []
    for m, e in errs.items():
        footer.append(f"# max {m}_err_pop = {_fmt(e['max_pop'])}")
        footer.append(f"# max {m}_err_coh = {_fmt(e['max_coh'])}")
    if "exact" in traj.diagnostics:
        footer.append(f"# exact norm_drift = {_fmt(traj.diagnostics['exact']['norm_drift'])}")
    traj_path = out / f"{config.name}_trajectory.csv"
    traj_path.write_text(_csv(header, table, footer))
    if errs:
        eh = ["s"] + [f"{m}_{k}" for m in errs for k in ("err_pop", "err_coh")]
        et = np.column_stack([traj.s] + [e[k] for e in errs.values() for k in ("pop", "coh")])
        (out / f"{config.name}_errors.csv").write_text(_csv(eh, et, footer[: 2 * len(errs)]))
    _, text = regime_json(config, family)
    (out / f"{config.name}_regimes.json").write_text(text + "\n")
    (out / f"{config.name}_plot.py").write_text(PLOT_TEMPLATE.format(csv=traj_path.name, methods=tuple(config.methods)))
    return traj_path


# ------------------------------------------------------------------ commands


def _sweep_one(args):
    path, out = args
    cfg = parse_config(path)
    run_simulation(cfg, output_dir=out)
    return str(path)


def sweep(config_dir, jobs=1, output_root=None):
    config_dir = Path(config_dir)
    paths = sorted(config_dir.glob("*.cfg"))
    if not paths:
        raise ConfigError(f"no *.cfg files in {config_dir}")
    for p in paths:
        parse_config(p)  # fail fast before spawning workers
    root = Path(output_root) if output_root else config_dir / "runs"
    tasks = [(p, root / p.stem) for p in paths]
    if jobs <= 1:
        return [_sweep_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_one, tasks))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def build_parser():
    parser = argparse.ArgumentParser(prog="optransport", description="Adiabatic transport of reduced density matrices.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run the configured methods and write CSV/JSON artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p = sub.add_parser("regimes", help="write the regime report")
    p.add_argument("--config", required=True)
    p.add_argument("--json", required=True)
    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", required=True, choices=verification.SUITES)
    p.add_argument("--json")
    p = sub.add_parser("sweep", help="run every *.cfg in a directory")
    p.add_argument("--config-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output-root")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            cfg = parse_config(args.config)
            traj = run_simulation(cfg, args.output_dir)
            for m in cfg.methods:
                if m != "exact" and "exact" in traj.rho:
                    e = errors_for(traj, m)
                    print(f"{m}: max pop err {e['max_pop']:.3e}, max coh err {e['max_coh']:.3e}")
        elif args.command == "regimes":
            rep, text = regime_json(parse_config(args.config))
            Path(args.json).write_text(text + "\n")
            print(rep.classification)
        elif args.command == "verify":
            report = _jsonable(verification.run_suite(args.suite))
            text = json.dumps(report, indent=2, sort_keys=True)
            if args.json:
                Path(args.json).write_text(text + "\n")
            print(text)
            return 0 if report["pass"] else 1
        elif args.command == "sweep":
            for done in sweep(args.config_dir, args.jobs, args.output_root):
                print(done)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
