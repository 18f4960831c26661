"""Command-line entry point: config parsing, study dispatch, file emission.

The config file is the complete record of an experiment.  Every run writes a
summary.json with the fully-resolved config (defaults filled in), the code
version, and the result summary, so a run can be reproduced from its output
directory alone.  All numeric output uses 17 significant digits and reruns
produce byte-identical files.
"""
from __future__ import annotations

import configparser
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, harness
from . import analysis as an
from . import fem
from .geometry import DomainSpec, Disk, GeometryError, build_domain
from .mesh import MeshError, Region, validate, write_mesh

USAGE = """\
usage: eddy2d <command> --config FILE [--out DIR]

commands:
  mesh              build and validate the mesh, write it to mesh.txt
  solve-eps         solve the finite-inductor problem, write field_eps.txt
  solve-limit       solve the point-source limit problem, write field_limit.txt
  sweep             epsilon sweep against the limit solution, with rate fit
  mesh-convergence  uniform-refinement study of the limit solver
  truncation        domain-truncation study over growing radii
  adjoint-check     adjoint error-estimate check over the epsilon list
  verify            run the invariant suite

options:
  --config FILE     configuration file (required)
  --out DIR         output directory (overrides [output] dir)
"""

COMMANDS = ("mesh", "solve-eps", "solve-limit", "sweep", "mesh-convergence",
            "truncation", "adjoint-check", "verify")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------- schema


def _float(s):
    return float(s)


def _int(s):
    v = int(s)
    return v


def _bool(s):
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _tristate(s):
    t = s.strip().lower()
    if t == "auto":
        return "auto"
    return _bool(s)


def _point(s):
    parts = s.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"expected two coordinates, got {s!r}")
    return (float(parts[0]), float(parts[1]))


def _floats(s):
    parts = s.replace(",", " ").split()
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _word(s):
    return s.strip().lower()


_REQUIRED = object()

# section -> key -> (parser, default); _REQUIRED means the key must be given
_SCHEMA = {
    "domain": {
        "z1": (_point, _REQUIRED),
        "z2": (_point, _REQUIRED),
        "inductor_radius": (_float, 1.0),
        "epsilon": (_float, 0.4),
        "omega0_center": (_point, (0.0, 0.0)),
        "omega0_radius": (_float, 0.0),
        "radius": (_float, 10.0),
        "segments": (_int, 32),
        "symmetric": (_tristate, "auto"),
    },
    "material": {
        "sigma": (_float, 1.0),
        "mu": (_float, 1.0),
        "omega": (_float, 1.0),
        "current": (_float, 1.0),
    },
    "solver": {
        "tol": (_float, 1e-10),
        "gauge": (_word, "auto"),
        "h": (_float, 0.45),
    },
    "output": {
        "dir": (str, "out"),
    },
    "sweep": {
        "eps_list": (_floats, harness.DEFAULT_EPS_LIST),
        "h": (_float, 0.45),
        "p": (_float, harness.DEFAULT_P),
        "monitor_radius": (_float, harness.DEFAULT_MONITOR_RADIUS),
        "seed": (_int, 1234),
    },
    "mesh_convergence": {
        "levels": (_int, 4),
        "h": (_float, 0.42),
        "exclusion_radius": (_float, 0.5),
        "node_budget": (_int, 3_000_000),
    },
    "truncation": {
        "r_list": (_floats, (10.0, 20.0, 40.0)),
        "h": (_float, 0.45),
    },
    "adjoint": {
        "eps_list": (_floats, harness.DEFAULT_EPS_LIST),
        "h": (_float, 0.45),
        "psi": (_word, "uniform"),
        "seed": (_int, 1234),
    },
    "verify": {
        "h": (_float, 0.45),
        "seed": (_int, 1234),
        "n_random_fields": (_int, 100),
    },
}

_GAUGE_WORDS = {"auto": None,
                "omega0_mean": fem.GaugeMode.OMEGA0_MEAN,
                "far_ring_mean": fem.GaugeMode.FAR_RING_MEAN,
                "none": fem.GaugeMode.NONE}


@dataclass
class RunConfig:
    domain: DomainSpec
    params: fem.MaterialParams
    tol: float
    gauge: str
    out_dir: str
    raw: dict  # fully resolved section -> key -> value, schema order


def _symmetric_eligible(z1, z2, r1, r2, omega0):
    mirror = (z1[1] == 0.0 and z2[1] == 0.0 and z2[0] == -z1[0] and r1 == r2)
    om_ok = omega0 is None or (omega0.center[0] == 0.0 and omega0.center[1] == 0.0)
    return mirror and om_ok


def parse_config(path):
    """Read and validate a config file; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as f:
            cp.read_file(f, source=path)
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e.strerror}") from e
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e

    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]")

    raw = {}
    for section, keys in _SCHEMA.items():
        raw[section] = {}
        for key, (parse, default) in keys.items():
            if cp.has_option(section, key):
                text = cp.get(section, key)
                try:
                    raw[section][key] = parse(text)
                except ValueError as e:
                    raise ConfigError(
                        f"{path}: [{section}] {key}: {e}") from e
            elif default is _REQUIRED:
                raise ConfigError(f"{path}: [{section}] {key} is required")
            else:
                raw[section][key] = default

    d = raw["domain"]
    if d["omega0_radius"] < 0:
        raise ConfigError(f"{path}: [domain] omega0_radius must be >= 0")
    omega0 = None
    if d["omega0_radius"] > 0:
        omega0 = Disk(d["omega0_center"], d["omega0_radius"])
    sym = d["symmetric"]
    if sym == "auto":
        sym = _symmetric_eligible(d["z1"], d["z2"], d["inductor_radius"],
                                  d["inductor_radius"], omega0)
        d["symmetric"] = sym
    try:
        domain = DomainSpec(
            inductors=(Disk(d["z1"], d["inductor_radius"]),
                       Disk(d["z2"], d["inductor_radius"])),
            epsilon=d["epsilon"], omega0=omega0, radius=d["radius"],
            segments=d["segments"], symmetric=sym)
        m = raw["material"]
        params = fem.MaterialParams(sigma=m["sigma"], mu=m["mu"],
                                    omega=m["omega"], current=m["current"])
    except (ValueError, GeometryError) as e:
        raise ConfigError(f"{path}: {e}") from e

    gauge = raw["solver"]["gauge"]
    if gauge not in _GAUGE_WORDS:
        raise ConfigError(f"{path}: [solver] gauge must be one of "
                          f"{sorted(_GAUGE_WORDS)}, got {gauge!r}")
    if gauge == "omega0_mean" and omega0 is None:
        raise ConfigError(f"{path}: [solver] gauge omega0_mean requires an "
                          f"omega0 region ([domain] omega0_radius > 0)")
    return RunConfig(domain=domain, params=params, tol=raw["solver"]["tol"],
                     gauge=gauge, out_dir=raw["output"]["dir"], raw=raw)


def _cfg_cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, int):
        return str(v)
    if isinstance(v, tuple):
        return " ".join(_cfg_cell(x) for x in v)
    return str(v)


def write_config(config, path):
    """Emit the resolved config; parse_config(write_config(c)) == c."""
    lines = []
    for section, keys in config.raw.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            lines.append(f"{key} = {_cfg_cell(value)}")
        lines.append("")
    with open(path, "wb") as f:
        f.write("\n".join(lines).encode())


# ------------------------------------------------------- serialization


def _json_value(v):
    if v is None or isinstance(v, bool):
        return "null" if v is None else ("true" if v else "false")
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if v != v:  # NaN has no JSON literal
            return "null"
        return "%.17g" % v
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, dict):
        items = (f"{_json_value(str(k))}: {_json_value(x)}" for k, x in v.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    if isinstance(v, complex):
        return _json_value([v.real, v.imag])
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _csv_cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (np.floating, float)):
        return "%.17g" % float(v)
    return str(int(v))


def write_report(report, out_dir):
    """CSV (header plus one row per entry) and JSON summary, byte-stable."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, report.name + ".csv")
    lines = [",".join(report.columns)]
    for row in report.rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    with open(csv_path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode())
    json_path = os.path.join(out_dir, report.name + ".json")
    doc = {"name": report.name, "columns": list(report.columns),
           "summary": report.summary}
    with open(json_path, "wb") as f:
        f.write((_json_value(doc) + "\n").encode())
    return csv_path, json_path


def _write_summary(out_dir, command, config, results):
    os.makedirs(out_dir, exist_ok=True)
    doc = {"command": command, "version": __version__,
           "config": config.raw, "results": results}
    path = os.path.join(out_dir, "summary.json")
    with open(path, "wb") as f:
        f.write((_json_value(doc) + "\n").encode())
    return path


# ------------------------------------------------------------ commands


def _gauges_for(config, kind, mesh):
    has_omega0 = bool((mesh.region == int(Region.OMEGA0)).any())
    mode = _GAUGE_WORDS[config.gauge]
    if mode is None:
        return fem.default_gauges(kind, config.params, has_omega0)
    return (mode,)


def _solve_command(config, kind):
    mesh = build_domain(config.domain, config.raw["solver"]["h"])
    if kind.family == "epsilon":
        load = fem.assemble_thin_source(mesh, config.params)
    else:
        z1 = config.domain.inductors[0].center
        z2 = config.domain.inductors[1].center
        load = fem.assemble_dirac_load(mesh, z1, z2, config.params.mu_I)
    system = fem.assemble(mesh, config.params, kind)
    for mode in _gauges_for(config, kind, mesh):
        system = fem.apply_gauge(system, mode)
    f, rep = fem.solve(system, load, tol=config.tol)
    return mesh, f, rep


def _cmd_mesh(config, out_dir):
    mesh = build_domain(config.domain, config.raw["solver"]["h"])
    diag = validate(mesh)
    write_mesh(mesh, os.path.join(out_dir, "mesh.txt"))
    results = {"n_nodes": diag.n_nodes, "n_triangles": diag.n_triangles,
               "min_angle_deg": diag.min_angle_deg,
               "max_aspect_ratio": diag.max_aspect_ratio,
               "h_max": mesh.h_max,
               "region_areas": dict(sorted(diag.region_areas.items())),
               "paired_nodes": mesh.node_pair is not None}
    return results, 0


def _cmd_solve_eps(config, out_dir):
    mesh, f, rep = _solve_command(config, fem.EPSILON_PROBLEM)
    fem.write_field(f, os.path.join(out_dir, "field_eps.txt"))
    i1, i2, i0 = harness._currents(mesh, f, config.params)
    results = {"residual": rep.relative_residual, "n_unknowns": rep.n_unknowns,
               "factorization": rep.factorization,
               "far_field_constant": rep.far_field_constant_estimate,
               "current_omega1": i1, "current_omega2": i2,
               "current_omega0": i0,
               "energy": an.norm(mesh, f, an.NormSpec(
                   an.NormKind.LP_GRADIENT, p=2.0)) ** 2}
    return results, 0


def _cmd_solve_limit(config, out_dir):
    mesh, f, rep = _solve_command(config, fem.LIMIT_PROBLEM)
    fem.write_field(f, os.path.join(out_dir, "field_limit.txt"))
    results = {"residual": rep.relative_residual, "n_unknowns": rep.n_unknowns,
               "factorization": rep.factorization,
               "far_field_constant": rep.far_field_constant_estimate}
    return results, 0


def _cmd_sweep(config, out_dir):
    s = config.raw["sweep"]
    sc = harness.SweepConfig(domain=config.domain, params=config.params,
                             eps_list=s["eps_list"], h=s["h"], tol=config.tol,
                             p_monitor=s["p"], monitor_radius=s["monitor_radius"],
                             seed=s["seed"], output_dir=out_dir)
    report = harness.run_epsilon_sweep(sc)
    write_report(report, out_dir)
    return {report.name: report.summary}, 0


def _cmd_mesh_convergence(config, out_dir):
    s = config.raw["mesh_convergence"]
    mc = harness.MeshConvergenceConfig(
        domain=config.domain, params=config.params, levels=s["levels"],
        h=s["h"], tol=config.tol, exclusion_radius=s["exclusion_radius"],
        node_budget=s["node_budget"], output_dir=out_dir)
    report = harness.run_mesh_convergence(mc)
    write_report(report, out_dir)
    return {report.name: report.summary}, 0


def _cmd_truncation(config, out_dir):
    s = config.raw["truncation"]
    tc = harness.TruncationConfig(domain=config.domain, params=config.params,
                                  r_list=s["r_list"], h=s["h"], tol=config.tol,
                                  output_dir=out_dir)
    report = harness.run_truncation_study(tc)
    write_report(report, out_dir)
    return {report.name: report.summary}, 0


def _cmd_adjoint(config, out_dir):
    s = config.raw["adjoint"]
    ac = harness.AdjointConfig(domain=config.domain, params=config.params,
                               eps_list=s["eps_list"], h=s["h"], tol=config.tol,
                               psi=s["psi"], seed=s["seed"], output_dir=out_dir)
    report = harness.run_adjoint_check(ac)
    write_report(report, out_dir)
    return {report.name: report.summary}, 0


def _cmd_verify(config, out_dir):
    s = config.raw["verify"]
    ic = harness.InvariantConfig(domain=config.domain, params=config.params,
                                 h=s["h"], tol=config.tol, seed=s["seed"],
                                 n_random_fields=s["n_random_fields"],
                                 output_dir=out_dir)
    report = harness.run_invariant_suite(ic)
    write_report(report, out_dir)
    code = 0 if report.summary["all_passed"] else 2
    return {report.name: report.summary}, code


_DISPATCH = {
    "mesh": _cmd_mesh,
    "solve-eps": _cmd_solve_eps,
    "solve-limit": _cmd_solve_limit,
    "sweep": _cmd_sweep,
    "mesh-convergence": _cmd_mesh_convergence,
    "truncation": _cmd_truncation,
    "adjoint-check": _cmd_adjoint,
    "verify": _cmd_verify,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(USAGE, end="")
        return 0 if argv else 1
    command = argv.pop(0)
    if command not in COMMANDS:
        print(f"error: unknown command {command!r}\n{USAGE}",
              end="", file=sys.stderr)
        return 1

    config_path = None
    out_override = None
    while argv:
        flag = argv.pop(0)
        if flag == "--config" and argv:
            config_path = argv.pop(0)
        elif flag == "--out" and argv:
            out_override = argv.pop(0)
        else:
            print(f"error: unexpected argument {flag!r}\n{USAGE}",
                  end="", file=sys.stderr)
            return 1
    if config_path is None:
        print(f"error: --config is required\n{USAGE}", end="", file=sys.stderr)
        return 1

    try:
        config = parse_config(config_path)
        # --out redirects files without entering the echoed config: the
        # summary must be identical for identical config files
        out_dir = out_override or config.out_dir
        os.makedirs(out_dir, exist_ok=True)
        results, code = _DISPATCH[command](config, out_dir)
        _write_summary(out_dir, command, config, results)
        return code
    except fem.SolverError as e:
        print(f"error: solver failure: {e}", file=sys.stderr)
        return 2
    except (ConfigError, GeometryError, MeshError, fem.GaugeError,
            ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
