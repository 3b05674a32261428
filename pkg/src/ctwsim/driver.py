"""Simulation orchestration: stage schedule, outputs, checkpoints and restart."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import Assembler, Constraints, merge_constraints
from .config import ConfigError, SimulationConfig
from .constitutive import MaterialPointState, ModelOptions
from .element import geometry
from .material import THETA_REF, load_table
from .melt_pool import PoolError, PoolGeometry, check_inside, pool_constraints
from .mesh import DOFS_PER_NODE, build_mesh, decompose
from .postproc import (
    FluctuationTracker,
    QoiRecord,
    QOI_COLUMNS,
    RoiError,
    RoiSpec,
    cross_section,
    gauss_strain,
    nodal_average,
    qoi,
    surface_strain,
    voigt_to_tensor,
    write_cross_section_csv,
    write_qoi_csv,
    write_vtk,
)
from .schwarz import SolverSettings
from .stepper import LOG_COLUMNS, NewtonSettings, NewtonSolver, StepReport
from .traces import (
    BoundaryTraceSet,
    TraceParams,
    clamped_constraints,
    generate_traces,
    load_traces,
    trace_constraints,
    write_traces,
)

log = logging.getLogger("ctwsim")


class CheckpointError(RuntimeError):
    pass


@dataclass
class Simulation:
    cfg: SimulationConfig
    mesh: object
    table: object
    pool: PoolGeometry
    traces: BoundaryTraceSet | None
    newton: NewtonSolver
    roi: RoiSpec
    geo: object = field(repr=False, default=None)

    @property
    def theta0(self) -> float:
        return self.pool.theta0

    def constraints(self, t: float) -> Constraints:
        parts = [pool_constraints(self.pool, self.mesh, t)]
        if self.traces is not None:
            parts.append(trace_constraints(self.traces, self.mesh, t))
        else:
            parts.append(clamped_constraints(self.mesh))
        return merge_constraints(*parts)


def trace_params(cfg: SimulationConfig) -> TraceParams:
    return TraceParams(
        Lx=cfg.float("mesh", "Lx"),
        Ly=cfg.float("mesh", "Ly"),
        Lz=cfg.float("mesh", "Lz"),
        n_x=cfg.int("traces", "n_x"),
        n_z=cfg.int("traces", "n_z"),
        t_end=cfg.float("time", "t_end"),
        dt_src=cfg.float("traces", "dt_src"),
        t_load=cfg.float("time", "t_load"),
        strain_rate=cfg.float("traces", "strain_rate"),
        max_strain=cfg.float("traces", "max_strain"),
        gauge=cfg.opt_float("traces", "gauge"),
        theta0=THETA_REF,
        thermal_amplitude=cfg.float("traces", "thermal_amplitude"),
        thermal_length=cfg.float("traces", "thermal_length"),
        pool_x0=cfg.float("pool", "x0"),
        pool_v=cfg.float("pool", "v_weld"),
        t_heat=cfg.float("time", "t_heat"),
    )


def roi_spec(cfg: SimulationConfig) -> RoiSpec:
    preset = cfg.get("output", "roi_preset")
    kw = {"offset": cfg.float("output", "roi_offset")}
    w, h = cfg.opt_float("output", "roi_width"), cfg.opt_float("output", "roi_height")
    try:
        spec = RoiSpec.preset(preset, tuple(cfg.floats("output", "gw")), **kw)
        if w is not None or h is not None:
            spec = RoiSpec(spec.gw, w or spec.width, h or spec.height, spec.offset)
    except RoiError as exc:
        raise ConfigError(f"[output] {exc}") from exc
    return spec


def build_simulation(cfg: SimulationConfig) -> Simulation:
    cfg.validate()
    mesh = build_mesh(
        cfg.int("mesh", "nx"),
        cfg.int("mesh", "ny"),
        cfg.int("mesh", "nz"),
        cfg.float("mesh", "Lx"),
        cfg.float("mesh", "Ly"),
        cfg.float("mesh", "Lz"),
    )
    table = load_table(cfg.table_path())
    y0 = cfg.opt_float("pool", "y0")
    th_liq = cfg.opt_float("pool", "theta_liq")
    try:
        pool = PoolGeometry(
            a=cfg.float("pool", "a"),
            b=cfg.float("pool", "b"),
            x0=cfg.float("pool", "x0"),
            y0=mesh.lengths[1] / 2 if y0 is None else y0,
            v_weld=cfg.float("pool", "v_weld"),
            t_heat=cfg.float("time", "t_heat"),
            theta_liq=table.theta_liq if th_liq is None else th_liq,
            theta0=THETA_REF,
        )
        check_inside(pool, mesh, cfg.float("time", "t_end"))
    except PoolError as exc:
        raise ConfigError(f"[pool] {exc}") from exc

    src = cfg.get("traces", "source").strip()
    if src == "synthetic":
        traces = generate_traces(trace_params(cfg))
    elif src == "file":
        traces = load_traces(cfg.resolve(cfg.get("traces", "path")))
    else:
        traces = None

    options = ModelOptions(
        plasticity=cfg.bool("material", "plasticity"),
        thermoelastic_heating=cfg.bool("material", "thermoelastic_heating"),
        plastic_dissipation=cfg.bool("material", "plastic_dissipation"),
        theta0=THETA_REF,
    )
    threads = cfg.int("run", "threads")
    asm = Assembler(mesh, table, options, threads=threads)
    solver = SolverSettings(
        restart=cfg.int("solver", "restart"),
        rtol=cfg.float("solver", "rtol"),
        atol=cfg.float("solver", "atol"),
        max_iter=cfg.int("solver", "max_iter"),
        levels=cfg.int("solver", "levels"),
        coarse=cfg.get("solver", "coarse"),
        overlap=cfg.int("solver", "overlap"),
        recycling=cfg.bool("solver", "recycling"),
        threads=threads,
    )
    newton = NewtonSettings(
        tol=cfg.float("solver", "newton_tol"),
        max_iter=cfg.int("solver", "newton_max_iter"),
        divergence_factor=cfg.float("solver", "divergence_factor"),
        line_search=cfg.bool("solver", "line_search"),
    )
    linear = cfg.get("solver", "linear")
    decomp = None
    if linear == "schwarz":
        try:
            decomp = decompose(
                mesh,
                cfg.int("solver", "px"),
                cfg.int("solver", "py"),
                cfg.int("solver", "pz"),
                solver.overlap,
            )
        except ValueError as exc:
            raise ConfigError(f"[solver] {exc}") from exc
    ns = NewtonSolver(asm, decomp, solver, newton, linear)
    return Simulation(cfg, mesh, table, pool, traces, ns, roi_spec(cfg), geometry(mesh.coords[mesh.conn]))


# --------------------------------------------------------------------------- state / checkpoint


@dataclass
class RunState:
    x: np.ndarray
    states: MaterialPointState
    step: int  # steps taken since t_origin
    t_origin: float
    dt: float
    tracker_state: dict = field(default_factory=dict)

    @property
    def t(self) -> float:
        return self.t_origin + self.step * self.dt


def initial_state(sim: Simulation, dt: float) -> RunState:
    x = np.zeros(sim.mesh.n_dofs)
    x[3::DOFS_PER_NODE] = sim.theta0
    states = MaterialPointState.virgin(sim.mesh.n_elems * 8, sim.theta0)
    return RunState(x, states, 0, 0.0, dt)


def save_checkpoint(path, sim: Simulation, rs: RunState) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        x=rs.x,
        eps_p=rs.states.eps_p,
        alpha=rs.states.alpha,
        theta=rs.states.theta,
        sigma=rs.states.sigma,
        step=rs.step,
        t_origin=rs.t_origin,
        dt=rs.dt,
        t=rs.t,
        pool_center=np.array(sim.pool.center(rs.t)),
        config_hash=sim.cfg.hash(),
        **rs.tracker_state,
    )


def load_checkpoint(path, sim: Simulation, dt: float) -> RunState:
    """Read a checkpoint; a different ``dt`` restarts the step count at its time."""
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if str(data["config_hash"]) != sim.cfg.hash():
        raise CheckpointError(
            f"checkpoint {path} was written for a different mesh/material/pool configuration"
        )
    if data["x"].size != sim.mesh.n_dofs:
        raise CheckpointError("checkpoint solution size does not match the mesh")
    states = MaterialPointState(data["eps_p"], data["alpha"], data["theta"], data["sigma"])
    tracker = {k: data[k] for k in ("fluct_entry", "fluct_entered") if k in data}
    step, origin, old_dt = int(data["step"]), float(data["t_origin"]), float(data["dt"])
    if dt != old_dt:
        origin, step = float(data["t"]), 0
    return RunState(data["x"].copy(), states, step, origin, dt, tracker)


# --------------------------------------------------------------------------- run loop


@dataclass
class RunResult:
    qoi: list
    reports: list
    state: RunState
    out_dir: Path
    checkpoints: list


class _CsvLog:
    def __init__(self, path, columns):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(columns)

    def row(self, values):
        self.w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in values])
        self.fh.flush()

    def close(self):
        self.fh.close()


def snapshot_fields(sim: Simulation, rs: RunState):
    mesh = sim.mesh
    u = rs.x.reshape(-1, DOFS_PER_NODE)[:, :3]
    theta = rs.x[3::DOFS_PER_NODE]
    E, geo = gauss_strain(mesh, u, sim.geo)
    E_nodes = nodal_average(mesh, E, geo.wdet)
    alpha_gp = rs.states.alpha.reshape(mesh.n_elems, 8)
    alpha_nodes = nodal_average(mesh, alpha_gp, geo.wdet)
    return u, theta, E_nodes, alpha_gp, alpha_nodes


def write_snapshot(out: Path, sim: Simulation, rs: RunState, tracker: FluctuationTracker) -> Path:
    mesh = sim.mesh
    u, theta, E_nodes, alpha_gp, alpha_nodes = snapshot_fields(sim, rs)
    stem = f"snap_{rs.t:010.6f}"
    write_vtk(
        out / f"{stem}.vtk",
        mesh,
        {"theta": theta, "u": u, "E": voigt_to_tensor(E_nodes), "alpha_nodal": alpha_nodes},
        {"alpha": alpha_gp.mean(axis=1)},
        title=f"ctwsim t={rs.t:.6f}",
    )
    cx = sim.pool.center(rs.t)[0]
    fxy, fE = tracker.field(u, cx)
    np.savez(
        out / f"{stem}.npz",
        t=rs.t,
        x=rs.x,
        alpha=rs.states.alpha,
        mesh=np.array([mesh.nx, mesh.ny, mesh.nz]),
        lengths=np.array(mesh.lengths),
        pool_center=np.array(sim.pool.center(rs.t)),
        fluct_xy=fxy,
        fluct_E=fE,
    )
    return out / stem


def run(
    cfg: SimulationConfig,
    checkpoint: str | Path | None = None,
    sim: Simulation | None = None,
    progress=None,
) -> RunResult:
    """Run (or continue from ``checkpoint``) to ``t_end``; writes all outputs."""
    sim = build_simulation(cfg) if sim is None else sim
    mesh = sim.mesh
    dt = cfg.float("time", "dt")
    t_end = cfg.float("time", "t_end")
    rs = initial_state(sim, dt) if checkpoint is None else load_checkpoint(checkpoint, sim, dt)
    tracker = FluctuationTracker(mesh, sim.roi)
    if rs.tracker_state:
        tracker.load(rs.tracker_state)

    out = cfg.output_dir()
    try:
        (out / "snapshots").mkdir(parents=True, exist_ok=True)
        (out / "config_used.ini").write_text(cfg.to_ini())
        if sim.traces is not None and cfg.get("traces", "source") == "synthetic" and checkpoint is None:
            write_traces(sim.traces, out / "traces.txt")
        qlog = _CsvLog(out / "qoi.csv", QOI_COLUMNS)
        rlog = _CsvLog(out / "runlog.csv", LOG_COLUMNS)
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc

    n_steps = int(round((t_end - rs.t_origin) / dt)) - rs.step
    qoi_every = max(cfg.int("output", "qoi_every"), 1)
    snap_every = cfg.int("output", "snapshot_every")
    ck_times = cfg.floats("output", "checkpoint_times")
    x_cs = cfg.float("output", "cross_section_x")
    log.info("running %d steps from t=%.6f s to %.6f s", n_steps, rs.t, t_end)

    records, reports, checkpoints = [], [], []
    try:
        for _ in range(n_steps):
            t_n = rs.t
            t_new = rs.t_origin + (rs.step + 1) * dt
            try:
                cons = sim.constraints(t_new)
            except PoolError as exc:
                raise ConfigError(str(exc)) from exc
            x, states, rep = sim.newton.advance(rs.x, rs.states, t_n, t_new - t_n, cons, rs.step + 1)
            rep.time = t_new
            rs = RunState(x, states, rs.step + 1, rs.t_origin, dt)
            reports.append(rep)
            rlog.row([rep.log_row()[c] for c in LOG_COLUMNS])

            u = x.reshape(-1, DOFS_PER_NODE)[:, :3]
            cx = sim.pool.center(t_new)[0]
            tracker.update(u, cx)
            if rs.step % qoi_every == 0:
                rec = _qoi_or_nan(sim, u, t_new, cx)
                records.append(rec)
                qlog.row(rec.as_row())
            if snap_every > 0 and rs.step % snap_every == 0:
                write_snapshot(out / "snapshots", sim, rs, tracker)
            for tc in ck_times:
                if abs(t_new - tc) < 0.5 * dt:
                    rs.tracker_state = tracker.state()
                    p = out / f"checkpoint_t{tc:.6f}.npz"
                    save_checkpoint(p, sim, rs)
                    checkpoints.append(p)
            if progress is not None:
                progress(rs, rep)
            log.debug(
                "t=%.4f newton=%d gmres=%s res=%s",
                t_new,
                rep.newton_iters,
                rep.gmres_iters,
                ["%.2e" % r for r in rep.residual_norms],
            )
        rs.tracker_state = tracker.state()
        if n_steps > 0:
            write_snapshot(out / "snapshots", sim, rs, tracker)
            if 0 <= x_cs <= mesh.lengths[0]:
                _, theta, E_nodes, _, alpha_nodes = snapshot_fields(sim, rs)
                sec = cross_section(mesh, x_cs, {"theta": theta, "E_yy": E_nodes[:, 1], "alpha": alpha_nodes})
                write_cross_section_csv(sec, out / f"cross_section_x{x_cs:g}_t{rs.t:.6f}.csv")
    finally:
        qlog.close()
        rlog.close()
    return RunResult(records, reports, rs, out, checkpoints)


def _qoi_or_nan(sim: Simulation, u, t, cx) -> QoiRecord:
    try:
        E, geo = gauss_strain(sim.mesh, u, sim.geo)
        vol = (geo.xg[..., :2].reshape(-1, 2), E.reshape(-1, 6))
        return qoi(sim.mesh, u, t, cx, sim.roi, surface_strain(sim.mesh, u), vol)
    except RoiError:
        return QoiRecord.empty(t)


def restart(checkpoint, cfg: SimulationConfig, **kw) -> RunResult:
    return run(cfg, checkpoint=checkpoint, **kw)


def postprocess_snapshots(snap_dir, cfg: SimulationConfig, x0: float | None = None) -> Path:
    """Recompute QoIs (and cross-sections at ``x0``) from ``.npz`` snapshots."""
    snap_dir = Path(snap_dir)
    files = sorted(snap_dir.glob("snap_*.npz"))
    if not files:
        raise OSError(f"no snapshots found in {snap_dir}")
    spec = roi_spec(cfg)
    records = []
    for f in files:
        with np.load(f) as z:
            nx, ny, nz = (int(v) for v in z["mesh"])
            mesh = build_mesh(nx, ny, nz, *z["lengths"])
            x = z["x"]
            t = float(z["t"])
            cx = float(z["pool_center"][0])
            alpha = z["alpha"]
        u = x.reshape(-1, DOFS_PER_NODE)[:, :3]
        try:
            records.append(qoi(mesh, u, t, cx, spec))
        except RoiError:
            records.append(QoiRecord.empty(t))
        if x0 is not None:
            E, geo = gauss_strain(mesh, u)
            E_nodes = nodal_average(mesh, E, geo.wdet)
            a_nodes = nodal_average(mesh, alpha.reshape(mesh.n_elems, 8), geo.wdet)
            sec = cross_section(mesh, x0, {"theta": x[3::4], "E_yy": E_nodes[:, 1], "alpha": a_nodes})
            write_cross_section_csv(sec, snap_dir / f"{f.stem}_cross_x{x0:g}.csv")
    out = snap_dir / "qoi_postproc.csv"
    write_qoi_csv(records, out)
    return out


__all__ = [
    "Simulation",
    "RunState",
    "RunResult",
    "StepReport",
    "build_simulation",
    "run",
    "restart",
    "save_checkpoint",
    "load_checkpoint",
    "postprocess_snapshots",
]
