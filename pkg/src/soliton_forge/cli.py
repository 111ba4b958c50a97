"""Command-line front end: JSON in, meshes and reports out."""
from __future__ import annotations

import os

_threads = os.environ.get("SOLITON_FORGE_THREADS")
if _threads:
    # BLAS pools read these at import time
    for _k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_k, _threads)

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__

TOOL = "soliton-forge"


class ValidationFailure(Exception):
    """Input or result failed validation; exit code 1."""

    def __init__(self, kind, message, details=None):
        super().__init__(message)
        self.kind = kind
        self.details = details or {}


# ---------------------------------------------------------------- canonical JSON

def _enc(x):
    if isinstance(x, dict):
        items = sorted((str(k), v) for k, v in x.items())
        return "{" + ",".join(json.dumps(k) + ":" + _enc(v) for k, v in items) + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ",".join(_enc(v) for v in x) + "]"
    if isinstance(x, np.ndarray):
        return _enc(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def canonical_json(obj) -> str:
    """Sorted keys, floats at 17 significant digits, trailing newline."""
    return _enc(obj) + "\n"


def _metadata(ctx: click.Context, seed=None):
    flags = {k: (list(v) if isinstance(v, tuple) else v) for k, v in ctx.params.items()}
    return {"tool": TOOL, "version": __version__, "command": ctx.info_name, "flags": flags,
            "seed": seed}


def _write_text(path, text):
    if path == "-":
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text)


def _read_json(path):
    p = Path(path)
    if not p.is_file():
        raise ValidationFailure("missing_file", f"no such file: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationFailure("malformed_json", f"{path}: {exc}") from exc


def _load_config(path):
    from .planar import PeriodicConfiguration
    d = _read_json(path)
    try:
        return PeriodicConfiguration.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise ValidationFailure("invalid_config", str(exc)) from exc


def _strip_keys(d, keys=("metadata", "flex")):
    return {k: v for k, v in d.items() if k not in keys}


def _load_mesh(path, sidecar=None):
    from .mesh import SurfaceMesh
    p = Path(path)
    if not p.is_file():
        raise ValidationFailure("missing_file", f"no such file: {path}")
    sc_path = Path(sidecar) if sidecar else Path(str(p) + ".json")
    sc = _read_json(sc_path) if sc_path.is_file() else None
    if sidecar and sc is None:
        raise ValidationFailure("missing_file", f"no such file: {sidecar}")
    return SurfaceMesh.from_obj_text(p.read_text(), sc)


def _write_mesh(mesh, out, meta):
    if out == "-":
        raise click.UsageError("mesh outputs need a file path (the sidecar is written next to it)")
    sc = mesh.sidecar()
    sc["metadata"] = meta
    if str(out).endswith(".ply"):
        Path(out).write_text(mesh.ply_text())
    else:
        Path(out).write_text(mesh.obj_text())
    Path(str(out) + ".json").write_text(canonical_json(sc))


def _parse_floats(text, name):
    if text is None or text == "":
        return None
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"{name}: expected comma-separated numbers") from exc


def _flex_for(cfg, theta):
    from .flexibility import build_flexible_configuration
    if theta is None and cfg.node_meta:
        theta = [list(nm.theta) for nm in cfg.node_meta]
    return build_flexible_configuration(cfg, theta)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ValidationFailure as exc:
            click.echo(canonical_json({"error": exc.kind, "message": str(exc), **exc.details}),
                       err=True, nl=False)
            ctx.exit(1)
        except (click.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except (ValueError, ArithmeticError) as exc:
            click.echo(canonical_json({"error": type(exc).__name__, "message": str(exc)}),
                       err=True, nl=False)
            ctx.exit(1)


@click.group(cls=_Group)
@click.version_option(__version__, prog_name=TOOL)
def cli():
    """Periodic grim reaper configurations and desingularized translating surfaces."""


OUT = click.option("-o", "--output", "output", default="-", show_default=True,
                   help="output path, '-' for stdout")


@cli.command()
@click.option("--ax", type=float, required=True)
@click.option("--ay", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--q-max", type=int, default=None)
@click.option("--tol-pi-q", type=float, default=1e-6, show_default=True)
@OUT
@click.pass_context
def build(ctx, ax, ay, seed, q_max, tol_pi_q, output):
    """Configuration in general position for the translation vector (ax, ay)."""
    from .builder import BuilderError, BuilderOptions, build_from_translation
    try:
        cfg = build_from_translation((ax, ay), BuilderOptions(seed, q_max, tol_pi_q))
    except BuilderError as exc:
        raise ValidationFailure("builder", str(exc), {"a": [ax, ay]}) from exc
    d = cfg.to_dict()
    d["metadata"] = _metadata(ctx, seed)
    _write_text(output, canonical_json(d))


@cli.command()
@click.option("--config", "config", required=True)
@OUT
@click.pass_context
def check(ctx, config, output):
    """General-position report and separation constants."""
    from .planar import check_general_position, separation_constants
    cfg = _load_config(config)
    rep = check_general_position(cfg)
    d = {"general_position": rep.to_dict(), "metadata": _metadata(ctx)}
    if rep.passed:
        sc = separation_constants(cfg)
        d["separation"] = {"delta": sc.delta, "delta_gamma": sc.delta_gamma, "plane_gap": sc.plane_gap}
    _write_text(output, canonical_json(d))
    if not rep.passed:
        raise ValidationFailure("general_position", "configuration is not in general position",
                                {"report": rep.to_dict()})


@cli.command()
@click.option("--config", "config", required=True)
@click.option("--theta", default=None, help="theta_k1,theta_k2 per node, comma-separated")
@click.option("--radius/--no-radius", default=False, help="also estimate the embeddedness radius")
@OUT
@click.pass_context
def flex(ctx, config, theta, radius, output):
    """Flexible configuration for prescribed unbalancing angles."""
    from .flexibility import check_embedded, estimate_delta_theta
    raw = _read_json(config)
    cfg = _load_config(config)
    th = _parse_floats(theta, "theta")
    fc = _flex_for(cfg, th)
    ok, wit = check_embedded(fc)
    block = fc.to_dict()
    block["embedded"] = bool(ok)
    if radius and len(fc.nodes):
        direction = np.ones((len(fc.nodes), 2))
        block["delta_theta"] = estimate_delta_theta(cfg, direction)
    d = _strip_keys(raw)
    d["flex"] = block
    d["metadata"] = _metadata(ctx)
    _write_text(output, canonical_json(d))
    if not ok:
        raise ValidationFailure("not_embedded", "realized configuration is not embedded",
                                {"witnesses": wit[:10]})


@cli.command()
@click.option("--config", "config", default=None)
@click.option("--tau", type=float, default=0.1, show_default=True)
@click.option("--m", "m", default="1", show_default=True, help="period count, or one per node")
@click.option("--res", type=int, default=16, show_default=True)
@click.option("--theta", default=None)
@click.option("--ray-length", type=float, default=None)
@click.option("--model", is_flag=True, help="write the model Scherk tower instead")
@click.option("--half-width", type=float, default=5.0, show_default=True)
@click.option("-o", "--output", "output", required=True)
@click.pass_context
def mesh(ctx, config, tau, m, res, theta, ray_length, model, half_width, output):
    """Glued initial surface (OBJ or PLY plus a JSON sidecar)."""
    from .surface import build_initial_surface, scherk_model_mesh
    ms = [int(v) for v in _parse_floats(m, "m")]
    if model:
        out = scherk_model_mesh(ms[0], res, half_width)
    else:
        if config is None:
            raise click.UsageError("--config is required unless --model is given")
        cfg = _load_config(config)
        fc = _flex_for(cfg, _parse_floats(theta, "theta"))
        out = build_initial_surface(fc, tau, ms[0] if len(ms) == 1 else ms, res, ray_length)
    _write_mesh(out, output, _metadata(ctx))


@cli.command()
@click.option("--mesh", "mesh_path", default=None)
@click.option("--sidecar", default=None)
@click.option("--config", "config", default=None, help="convergence study instead of a residual")
@click.option("--taus", default="0.2,0.1,0.05", show_default=True)
@click.option("--m", "m", type=int, default=1, show_default=True)
@click.option("--res", type=int, default=16, show_default=True)
@click.option("--d-far", type=float, default=0.25, show_default=True)
@click.option("--fields/--no-fields", default=False, help="include per-vertex residual and masks")
@click.option("--ply", default=None, help="also write a PLY with the residual baked in")
@click.option("--csv", "csv_path", default=None, help="per-vertex residual CSV")
@OUT
@click.pass_context
def verify(ctx, mesh_path, sidecar, config, taus, m, res, d_far, fields, ply, csv_path, output):
    """Soliton residual of a mesh, or a convergence study of a configuration."""
    from .verify import convergence_report, soliton_residual
    if (mesh_path is None) == (config is None):
        raise click.UsageError("give exactly one of --mesh or --config")
    if config is not None:
        cfg = _load_config(config)
        fc = _flex_for(cfg, None)
        rep = convergence_report(fc, _parse_floats(taus, "taus"), m, res, d_far)
        rep["metadata"] = _metadata(ctx)
        _write_text(output, canonical_json(rep))
        return
    msh = _load_mesh(mesh_path, sidecar)
    rep = soliton_residual(msh)
    d = rep.to_dict(fields=fields)
    d["metadata"] = _metadata(ctx)
    _write_text(output, canonical_json(d))
    if ply:
        Path(ply).write_text(msh.ply_text({"residual": rep.residual, "H": rep.H}))
    if csv_path:
        rows = ["vertex,residual,H,interior"]
        rows += [f"{i},{r:.17g},{h:.17g},{int(b)}" for i, (r, h, b)
                 in enumerate(zip(rep.residual, rep.H, rep.interior))]
        Path(csv_path).write_text("\n".join(rows) + "\n")


@cli.command()
@click.option("--config", "config", default=None)
@click.option("--reaper", default=None, help="b,c of a single grim reaper cylinder")
@click.option("--plane", is_flag=True)
@click.option("--radii", default=None, help="comma-separated radii (default 10 log-spaced in [10, 100])")
@click.option("--center", default="0,0,0", show_default=True)
@OUT
@click.pass_context
def growth(ctx, config, reaper, plane, radii, center, output):
    """Area growth A(R) inside extrinsic balls and its log-log slope."""
    from .planar import GrimReaperCurve
    from .verify import area_growth
    if sum(x is not None and x is not False for x in (config, reaper, plane or None)) != 1:
        raise click.UsageError("give exactly one of --config, --reaper, --plane")
    if plane:
        src = "plane"
    elif reaper is not None:
        b, c = (_parse_floats(reaper, "reaper") + [0.0])[:2]
        src = GrimReaperCurve(b, c)
    else:
        src = _load_config(config)
    cen = _parse_floats(center, "center")
    if len(cen) != 3:
        raise click.BadParameter("center needs three numbers")
    rep = area_growth(src, _parse_floats(radii, "radii"), tuple(cen))
    d = rep.to_dict()
    d["metadata"] = _metadata(ctx)
    _write_text(output, canonical_json(d))


@cli.command()
@click.option("--mesh", "mesh_path", required=True)
@click.option("--sidecar", default=None)
@click.option("--max-iter", type=int, default=50, show_default=True)
@click.option("--step-rule", type=click.Choice(["backtracking", "fixed"]), default="backtracking",
              show_default=True)
@click.option("--step", type=float, default=0.0, show_default=True)
@click.option("--tol", type=float, default=1e-14, show_default=True)
@click.option("--symmetric/--no-symmetric", default=True, show_default=True)
@click.option("--history", "history", default=None, help="CSV path for the objective history")
@click.option("-o", "--output", "output", required=True)
@click.pass_context
def refine(ctx, mesh_path, sidecar, max_iter, step_rule, step, tol, symmetric, history, output):
    """Normal-offset descent on the discrete soliton residual."""
    from .refine import RefineOptions, refine_mesh
    msh = _load_mesh(mesh_path, sidecar)
    res = refine_mesh(msh, RefineOptions(max_iter, step_rule, step, tol, symmetric))
    meta = _metadata(ctx)
    _write_mesh(res.mesh, output, meta)
    if history:
        Path(history).write_text(res.history_csv())
    if res.flag == "quality_limited":
        raise ValidationFailure("quality", "refinement stopped at the mesh quality limit",
                                {"iterations": len(res.history) - 1})


def main(argv=None):
    """Entry point returning the exit code."""
    try:
        cli.main(args=argv, prog_name=TOOL, standalone_mode=True)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
