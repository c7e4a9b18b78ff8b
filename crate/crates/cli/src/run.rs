//! Run orchestration and CSV/VTK/checkpoint artifacts.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use csv::Writer;
use mcs_core::checkpoint::{read_checkpoint, write_checkpoint};
use mcs_core::fespace::VectorFn;
use mcs_core::forms::{convection_dissipation, FluxMode};
use mcs_core::linsolve::{EliminationSet, PcgOptions, PressurePcKind};
use mcs_core::splitting::{Boundary, ConvectionRule, SplitterOptions, UpdateRule};
use mcs_core::stats::{
    boundary_layer_thicknesses_with, broken_h1_seminorm_sq, l2_error, l2_error_mean_free, wall_profile, wall_shear_from_sigma,
    StatAccumulator,
};
use mcs_core::{EtaThresholds, Splitter, State, TimeParams};

use crate::cases::{setup, CaseSetup};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::vtk::{write_vtk, VtkFields};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub steps: usize,
    pub t: f64,
    /// Steady runs only: whether the step-to-step change fell below tolerance.
    pub converged: Option<bool>,
    pub final_change: f64,
    pub max_divergence: f64,
    /// `(velocity L2 error, mean-free pressure L2 error)` for analytic cases.
    pub errors: Option<(f64, f64)>,
    pub kinetic_energy: f64,
}

pub fn flux_mode(cfg: &RunConfig) -> Result<FluxMode, CliError> {
    Ok(match cfg.flux.mode.as_str() {
        "central" => FluxMode::Central,
        "upwind" => FluxMode::Upwind,
        "hopu" => FluxMode::HopuFixed(cfg.flux.l.unwrap_or(cfg.case.k)),
        "adaptive" => FluxMode::HopuAdaptive(EtaThresholds::new(cfg.flux.thresholds.clone().unwrap_or_default(), cfg.case.k)?),
        m => return Err(CliError::Config(format!("flux.mode: unknown mode '{m}'"))),
    })
}

pub fn splitter_options(cfg: &RunConfig) -> SplitterOptions {
    let s = &cfg.solver;
    SplitterOptions {
        elimination: if s.elimination == "stress" { EliminationSet::StressAndGamma } else { EliminationSet::StressGammaAndBubbles },
        pressure_pc: if s.pressure_pc == "two_level" { PressurePcKind::TwoLevel } else { PressurePcKind::Jacobi },
        momentum: PcgOptions { tol: s.momentum_tol, max_iter: s.max_iter, consistency_tol: 1e-8 },
        update: if s.update == "literal" { UpdateRule::Literal } else { UpdateRule::Projected },
        convection: if cfg.time.convection == "extrapolated" { ConvectionRule::Extrapolated } else { ConvectionRule::Explicit },
        incremental: cfg.incremental(),
        cadence: cfg.flux.cadence,
    }
}

/// Builds the time stepper and the initial (or restarted) state.
pub fn prepare(cfg: &RunConfig) -> Result<(Splitter, State, CaseSetup), CliError> {
    let case = setup(cfg)?;
    let mut params = TimeParams::new(cfg.time.dt, cfg.nu(), cfg.time.t_end)?;
    params.cfl_guard = cfg.time.cfl_guard;
    let inflow: Option<VectorFn> = case.inflow.as_ref().map(|f| &**f as VectorFn);
    let force: Option<VectorFn> = case.force.as_ref().map(|f| &**f as VectorFn);
    let boundary = Boundary::new(&case.disc, inflow);
    let mut splitter = Splitter::new(case.disc.clone(), params, flux_mode(cfg)?, splitter_options(cfg), boundary, force)?;
    let state = match &cfg.output.restart {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            ck.check_compatible(&splitter.disc)?;
            if let Some(order) = ck.order_field(cfg.flux.cadence) {
                if splitter.order.is_some() {
                    splitter.order = Some(order);
                }
            }
            ck.state
        }
        None => State::from_field(&splitter.disc, &*case.initial)?,
    };
    Ok((splitter, state, case))
}

struct Artifacts {
    energy: Writer<File>,
    log: Writer<File>,
}

impl Artifacts {
    fn create(dir: &Path) -> Result<Self, CliError> {
        let mut energy = Writer::from_path(dir.join("energy.csv"))?;
        energy.write_record(["step", "t", "kinetic_energy", "viscous_dissipation", "flux_dissipation", "max_divergence"])?;
        let mut log = Writer::from_path(dir.join("solver_log.csv"))?;
        log.write_record([
            "step",
            "t",
            "momentum_iterations",
            "momentum_residual",
            "pressure_iterations",
            "pressure_residual",
            "order_refreshed",
            "velocity_change",
        ])?;
        Ok(Artifacts { energy, log })
    }

    fn flush(&mut self) -> Result<(), CliError> {
        self.energy.flush()?;
        self.log.flush()?;
        Ok(())
    }
}

fn energy_row(w: &mut Writer<File>, s: &Splitter, state: &State) -> Result<(), CliError> {
    let d = &s.disc;
    let ke = mcs_core::kinetic_energy(d, &state.u);
    let visc = s.params.nu * broken_h1_seminorm_sq(d, &state.u);
    let num = convection_dissipation(d, &s.projector, &state.u, &s.boundary.inflow, &s.flux, s.order.as_ref())?;
    w.serialize((state.step_index, state.t, ke, visc, num, d.max_divergence(&state.u)))?;
    Ok(())
}

fn element_orders(s: &Splitter) -> Vec<f64> {
    let d = &s.disc;
    let ne = d.mesh.n_elements();
    match (&s.flux, &s.order) {
        (_, Some(o)) => (0..ne).map(|e| o.element_mean(d, e)).collect(),
        (FluxMode::HopuFixed(l), None) => vec![*l as f64; ne],
        (FluxMode::Upwind, None) => vec![-1.0; ne],
        _ => vec![(d.k() + 1) as f64; ne],
    }
}

fn snapshot(dir: &Path, s: &Splitter, state: &State) -> Result<(), CliError> {
    let f = VtkFields { u: &state.u, p: &state.p, order: Some(element_orders(s)), time: state.t };
    write_vtk(&s.disc, &f, &dir.join(format!("snapshot_{:06}.vtk", state.step_index)))?;
    Ok(())
}

/// Probe lattice for channel statistics: `levels` wall-normal rows, grouped.
fn channel_probes(s: &Splitter, cfg: &RunConfig, axis: usize, lo: f64, hi: f64) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let m = &s.disc.mesh;
    let (nl, np) = (cfg.stats.levels, cfg.stats.per_level);
    let mut pts = vec![];
    let mut groups = vec![];
    let ys: Vec<f64> = (0..nl).map(|j| lo + (j as f64 + 0.5) / nl as f64 * (hi - lo)).collect();
    for (j, y) in ys.iter().enumerate() {
        for i in 0..np {
            let mut x = vec![0.0; m.dim];
            for a in 0..m.dim {
                let frac = if a == 0 { (i as f64 + 0.5) / np as f64 } else { (((i * 3) % np) as f64 + 0.5) / np as f64 };
                x[a] = m.lower[a] + frac * (m.upper[a] - m.lower[a]);
            }
            x[axis] = *y;
            pts.push(x);
            groups.push(j);
        }
    }
    (pts, groups, ys)
}

/// One averaging window: probe accumulator plus the time-averaged wall
/// shear carried by the stress unknown.
struct Window {
    acc: StatAccumulator,
    shear_sum: f64,
}

fn write_stats(path: &Path, win: &Window, ys: &[f64], lo: f64, hi: f64, nu: f64) -> Result<(), CliError> {
    let acc = &win.acc;
    let comp = |v: &[[f64; 3]], c: usize| acc.group_average(&v.iter().map(|x| x[c]).collect::<Vec<f64>>());
    let mu = acc.mean_u();
    let rs = acc.reynolds_stress();
    let rr = |a: usize, b: usize| acc.group_average(&rs.iter().map(|r| r[a][b]).collect::<Vec<f64>>());
    let (u, v, w) = (comp(&mu, 0), comp(&mu, 1), comp(&mu, 2));
    let p = acc.group_average(&acc.mean_p());
    let (uu, vv, ww, uv) = (rr(0, 0), rr(1, 1), rr(2, 2), rr(0, 1));
    let tke: Vec<f64> = (0..ys.len()).map(|j| 0.5 * (uu[j] + vv[j] + ww[j]).max(0.0)).collect();
    // Lower half for wall units.
    let lower: Vec<usize> = (0..ys.len()).filter(|&j| ys[j] - lo <= 0.5 * (hi - lo)).collect();
    let n: Vec<f64> = lower.iter().map(|&j| ys[j] - lo).collect();
    let ut: Vec<f64> = lower.iter().map(|&j| u[j]).collect();
    let shear = (acc.count > 0).then(|| win.shear_sum / acc.count as f64);
    let kk: Vec<f64> = lower.iter().map(|&j| tke[j]).collect();
    let uvl: Vec<f64> = lower.iter().map(|&j| uv[j]).collect();
    let prof = wall_profile(&n, &ut, &kk, &uvl, shear, nu)?;
    let mut wtr = Writer::from_path(path)?;
    wtr.write_record(["y", "n", "mean_u", "mean_v", "mean_w", "mean_p", "uu", "vv", "ww", "uv", "tke", "n_plus", "u_plus", "k_plus", "uv_plus", "u_tau", "samples"])?;
    for j in 0..ys.len() {
        let (np_, up, kp, uvp) = match lower.iter().position(|&l| l == j) {
            Some(i) => (prof.n_plus[i], prof.ut_plus[i], prof.k_plus[i], prof.uv_plus[i]),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        let row = [ys[j], (ys[j] - lo).min(hi - ys[j]), u[j], v[j], w[j], p[j], uu[j], vv[j], ww[j], uv[j], tke[j], np_, up, kp, uvp, prof.u_tau];
        let mut rec: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        rec.push(acc.count.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Thickness integrals of the lower-half mean profile, wall value included.
fn write_thickness(th: &mut Writer<File>, i: usize, w: &Window, ys: &[f64], lo: f64, hi: f64, edge: f64) -> Result<(), CliError> {
    let mu = w.acc.group_average(&w.acc.mean_u().iter().map(|m| m[0]).collect::<Vec<f64>>());
    let mut n = vec![0.0];
    let mut u = vec![0.0];
    for (j, y) in ys.iter().enumerate().filter(|(_, y)| **y - lo <= 0.5 * (hi - lo)) {
        n.push(y - lo);
        u.push(mu[j]);
    }
    let t = boundary_layer_thicknesses_with(&n, &u, edge)?;
    let shape = t.shape.map_or(String::from("nan"), |h| format!("{h:?}"));
    th.write_record([i.to_string(), format!("{:?}", w.acc.t_start), format!("{:?}", w.acc.t_end), format!("{:?}", t.delta_star), format!("{:?}", t.theta), shape])?;
    Ok(())
}

/// Runs a configured case to `t_end` (or to a steady state) and writes the
/// artifacts into `cfg.output.dir`. On a solver failure the CSVs written so
/// far are flushed and kept.
pub fn run_case(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    let (mut s, mut state, case) = prepare(cfg)?;
    let mut art = Artifacts::create(&dir)?;
    let total = s.params.n_steps();
    let start = Instant::now();
    log::info!("case {}: {} elements, k = {}, {} steps", cfg.case.name, s.disc.mesh.n_elements(), s.disc.k(), total);

    let stats_setup = case.wall.map(|(axis, lo, hi)| {
        let (pts, groups, ys) = channel_probes(&s, cfg, axis, lo, hi);
        let wins: Vec<Window> = cfg
            .stats
            .windows
            .iter()
            .map(|[a, b]| Window { acc: StatAccumulator::new(pts.clone(), *a, *b).with_groups(groups.clone()), shear_sum: 0.0 })
            .collect();
        (wins, ys, axis, lo, hi)
    });
    let mut stats_setup = stats_setup.filter(|w| !w.0.is_empty());

    energy_row(&mut art.energy, &s, &state)?;
    if cfg.output.vtk_every > 0 {
        snapshot(&dir, &s, &state)?;
    }
    let mut max_div = s.disc.max_divergence(&state.u);
    let mut change = f64::INFINITY;
    let mut converged = false;
    while state.step_index < total {
        let (next, rep) = match s.advance(&state) {
            Ok(r) => r,
            Err(e) => {
                art.flush()?;
                log::error!("step {} failed: {e}", state.step_index + 1);
                return Err(e.into());
            }
        };
        change = next.u.iter().zip(&state.u).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        state = next;
        max_div = max_div.max(rep.max_divergence);
        art.log.serialize((
            state.step_index,
            state.t,
            rep.momentum.iterations,
            rep.momentum.residual,
            rep.pressure.iterations,
            rep.pressure.residual,
            rep.order_refreshed,
            change,
        ))?;
        log::debug!("step {} t = {} {} | {} ({:.3}s)", state.step_index, state.t, rep.momentum, rep.pressure, start.elapsed().as_secs_f64());
        energy_row(&mut art.energy, &s, &state)?;
        if let Some((wins, _, axis, ..)) = &mut stats_setup {
            if state.step_index % cfg.stats.every == 0 {
                let shear = wall_shear_from_sigma(&s.disc, &s.workspace.sigma, *axis, 0);
                for w in wins.iter_mut() {
                    if w.acc.sample_fields(&s.disc, state.t, &state.u, &state.p) {
                        w.shear_sum += shear;
                    }
                }
            }
        }
        if cfg.output.vtk_every > 0 && state.step_index % cfg.output.vtk_every == 0 {
            snapshot(&dir, &s, &state)?;
        }
        if cfg.output.checkpoint_every > 0 && state.step_index % cfg.output.checkpoint_every == 0 {
            write_checkpoint(&dir.join(format!("checkpoint_{:06}.ckpt", state.step_index)), &s.disc, &state, s.order.as_ref())?;
        }
        if cfg.case.steady && change < cfg.solver.steady_tol {
            converged = true;
            break;
        }
    }
    art.flush()?;
    write_checkpoint(&dir.join("final.ckpt"), &s.disc, &state, s.order.as_ref())?;
    if cfg.output.vtk_every > 0 && state.step_index % cfg.output.vtk_every != 0 {
        snapshot(&dir, &s, &state)?;
    }
    if let Some(o) = &s.order {
        o.write_csv(&s.disc, &dir.join("order.csv"))?;
    }
    if let Some((wins, ys, _, lo, hi)) = &stats_setup {
        let mut th = Writer::from_path(dir.join("thickness.csv"))?;
        th.write_record(["window", "t_start", "t_end", "delta_star", "theta", "shape"])?;
        for (i, w) in wins.iter().enumerate() {
            write_stats(&dir.join(format!("stats_window{i}.csv")), w, ys, *lo, *hi, s.params.nu)?;
            write_thickness(&mut th, i, w, ys, *lo, *hi, cfg.stats.edge_fraction)?;
        }
        th.flush()?;
    }
    let errors = case.exact.as_ref().map(|ex| {
        let u = (ex.velocity)(state.t);
        let p = (ex.pressure)(state.t);
        (l2_error(&s.disc, &state.u, &*u), l2_error_mean_free(&s.disc, &state.p, &*p))
    });
    let summary = RunSummary {
        dir: dir.clone(),
        steps: state.step_index,
        t: state.t,
        converged: cfg.case.steady.then_some(converged),
        final_change: change,
        max_divergence: max_div,
        errors,
        kinetic_energy: mcs_core::kinetic_energy(&s.disc, &state.u),
    };
    write_summary(&dir.join("summary.csv"), cfg, &summary)?;
    log::info!("finished {} steps in {:.2}s", summary.steps, start.elapsed().as_secs_f64());
    Ok(summary)
}

fn write_summary(path: &Path, cfg: &RunConfig, s: &RunSummary) -> Result<(), CliError> {
    let mut w = Writer::from_path(path)?;
    w.write_record(["key", "value"])?;
    let mut rows: Vec<(&str, String)> = vec![
        ("case", cfg.case.name.clone()),
        ("dim", cfg.dim().to_string()),
        ("cells", cfg.case.cells.to_string()),
        ("k", cfg.case.k.to_string()),
        ("nu", format!("{:?}", cfg.nu())),
        ("dt", format!("{:?}", cfg.time.dt)),
        ("steps", s.steps.to_string()),
        ("t", format!("{:?}", s.t)),
        ("kinetic_energy", format!("{:?}", s.kinetic_energy)),
        ("max_divergence", format!("{:?}", s.max_divergence)),
        ("final_change", format!("{:?}", s.final_change)),
    ];
    if let Some(c) = s.converged {
        rows.push(("converged", c.to_string()));
    }
    if let Some((ue, pe)) = s.errors {
        rows.push(("velocity_l2_error", format!("{:?}", ue)));
        rows.push(("pressure_l2_error", format!("{:?}", pe)));
    }
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
