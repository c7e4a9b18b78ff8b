//! Benchmark case definitions: mesh, initial field, boundary data, forcing
//! and (where known) the analytic solution.

use std::f64::consts::PI;
use std::sync::Arc;

use mcs_core::{build_box_mesh, build_spaces, BoundaryKind, Discretization, MeshSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;

pub type Field = Arc<dyn Fn(&[f64]) -> [f64; 3] + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Analytic solution at time `t`: velocity and physical pressure.
#[derive(Clone)]
pub struct Exact {
    pub velocity: Arc<dyn Fn(f64) -> Field + Send + Sync>,
    pub pressure: Arc<dyn Fn(f64) -> ScalarField + Send + Sync>,
}

pub struct CaseSetup {
    pub disc: Discretization,
    pub initial: Field,
    /// Dirichlet data on inlet facets.
    pub inflow: Option<Field>,
    pub force: Option<Field>,
    pub exact: Option<Exact>,
    /// Wall-normal axis and lower wall position for statistics.
    pub wall: Option<(usize, f64, f64)>,
}

fn extent(cfg: &RunConfig, default: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    cfg.case.extent.clone().unwrap_or(default)
}

fn spec_from(dim: usize, cells: usize, ext: &[[f64; 2]], boundary: Vec<Option<[BoundaryKind; 2]>>) -> MeshSpec {
    MeshSpec {
        dim,
        cells: vec![cells; dim],
        lower: ext.iter().map(|e| e[0]).collect(),
        upper: ext.iter().map(|e| e[1]).collect(),
        periodic: boundary.iter().map(|b| b.is_none()).collect(),
        boundary,
    }
}

pub fn taylor_green_2d(nu: f64) -> Exact {
    Exact {
        velocity: Arc::new(move |t| {
            let f = (-2.0 * nu * t).exp();
            Arc::new(move |x: &[f64]| [f * x[0].sin() * x[1].cos(), -f * x[0].cos() * x[1].sin(), 0.0])
        }),
        pressure: Arc::new(move |t| {
            let f = (-4.0 * nu * t).exp();
            Arc::new(move |x: &[f64]| 0.25 * f * ((2.0 * x[0]).cos() + (2.0 * x[1]).cos()))
        }),
    }
}

pub fn kovasznay(re: f64) -> Exact {
    let lam = re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt();
    Exact {
        velocity: Arc::new(move |_| {
            Arc::new(move |x: &[f64]| {
                let e = (lam * x[0]).exp();
                [1.0 - e * (2.0 * PI * x[1]).cos(), lam / (2.0 * PI) * e * (2.0 * PI * x[1]).sin(), 0.0]
            })
        }),
        pressure: Arc::new(move |_| Arc::new(move |x: &[f64]| 0.5 * (1.0 - (2.0 * lam * x[0]).exp()))),
    }
}

/// Divergence-free perturbation `(psi_y, -psi_x, 0)` from a seeded sum of
/// modes. `psi` vanishes on the walls listed in `walls` (axis, lower, upper).
fn streamfunction_perturbation(seed: u64, amp: f64, ext: Vec<[f64; 2]>, walls: Vec<usize>) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = ext.len();
    let modes: Vec<([f64; 3], [f64; 3], f64)> = (0..6)
        .map(|_| {
            let wav = [1.0 + rng.random_range(0..3) as f64, 1.0 + rng.random_range(0..3) as f64, 1.0 + rng.random_range(0..2) as f64];
            let ph = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
            (wav, ph, rng.random_range(-1.0..1.0))
        })
        .collect();
    // Wall bubbles peak at 1/16; rescale so `amp` sets the velocity size.
    let amp = amp * 16f64.powi(walls.len() as i32);
    Arc::new(move |x: &[f64]| {
        // psi = sum a * prod_a f_a(x_a); f_a is a bubble on wall axes and a
        // periodic mode otherwise.
        let mut dpsi = [0.0; 3];
        for (wav, ph, a) in &modes {
            let mut val = [0.0; 3];
            let mut der = [0.0; 3];
            for ax in 0..dim {
                let [lo, hi] = ext[ax];
                let len = hi - lo;
                let s = (x[ax] - lo) / len;
                if walls.contains(&ax) {
                    // (s(1-s))^2 * (1 + 0.5 sin(2 pi m s))
                    let b = s * (1.0 - s);
                    let db = (1.0 - 2.0 * s) / len;
                    let g = 1.0 + 0.5 * (2.0 * PI * wav[ax] * s + ph[ax]).sin();
                    let dg = 0.5 * (2.0 * PI * wav[ax] * s + ph[ax]).cos() * 2.0 * PI * wav[ax] / len;
                    val[ax] = b * b * g;
                    der[ax] = 2.0 * b * db * g + b * b * dg;
                } else {
                    let arg = 2.0 * PI * wav[ax] * s + ph[ax];
                    val[ax] = arg.sin();
                    der[ax] = arg.cos() * 2.0 * PI * wav[ax] / len;
                }
            }
            for ax in 0..2 {
                let mut p = a * der[ax];
                for other in 0..dim {
                    if other != ax {
                        p *= val[other];
                    }
                }
                dpsi[ax] += p;
            }
        }
        [amp * dpsi[1], -amp * dpsi[0], 0.0]
    })
}

pub fn setup(cfg: &RunConfig) -> Result<CaseSetup, CliError> {
    let dim = cfg.dim();
    let n = cfg.case.cells;
    let k = cfg.case.k;
    let nu = cfg.nu();
    let two_pi = 2.0 * PI;
    let build = |spec: &MeshSpec| -> Result<Discretization, CliError> { Ok(build_spaces(&build_box_mesh(spec)?, k)?) };
    Ok(match cfg.case.name.as_str() {
        "tgv2d" => {
            let ext = extent(cfg, vec![[0.0, two_pi]; 2]);
            let disc = build(&spec_from(2, n, &ext, vec![None; 2]))?;
            let exact = taylor_green_2d(nu);
            CaseSetup { disc, initial: (exact.velocity)(0.0), inflow: None, force: None, exact: Some(exact), wall: None }
        }
        "tgv3d" => {
            let ext = extent(cfg, vec![[0.0, two_pi]; 3]);
            let disc = build(&spec_from(3, n, &ext, vec![None; 3]))?;
            let initial: Field = Arc::new(|x: &[f64]| {
                [x[0].sin() * x[1].cos() * x[2].cos(), -x[0].cos() * x[1].sin() * x[2].cos(), 0.0]
            });
            CaseSetup { disc, initial, inflow: None, force: None, exact: None, wall: None }
        }
        "kovasznay" => {
            let ext = extent(cfg, vec![[-0.5, 1.0], [-0.5, 1.5]]);
            let x_sides = if cfg.case.outlet { [BoundaryKind::Inlet, BoundaryKind::Outlet] } else { [BoundaryKind::Inlet; 2] };
            let disc = build(&spec_from(2, n, &ext, vec![Some(x_sides), Some([BoundaryKind::Inlet; 2])]))?;
            let exact = kovasznay(cfg.case.re);
            let u = (exact.velocity)(0.0);
            CaseSetup { disc, initial: u.clone(), inflow: Some(u), force: None, exact: Some(exact), wall: None }
        }
        "channel" => {
            let mut def = vec![[0.0, two_pi], [-1.0, 1.0]];
            if dim == 3 {
                def.push([0.0, PI]);
            }
            let ext = extent(cfg, def);
            let mut boundary = vec![None; dim];
            boundary[1] = Some([BoundaryKind::Wall; 2]);
            let disc = build(&spec_from(dim, n, &ext, boundary))?;
            let g = cfg.case.forcing;
            let [lo, hi] = ext[1];
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let pert = streamfunction_perturbation(cfg.case.seed, cfg.case.perturbation, ext.clone(), vec![1]);
            let initial: Field = Arc::new(move |x: &[f64]| {
                let eta = (x[1] - mid) / half;
                let base = g * half * half / (2.0 * nu) * (1.0 - eta * eta);
                let p = pert(x);
                [base + p[0], p[1], p[2]]
            });
            let force: Field = Arc::new(move |_x: &[f64]| [g, 0.0, 0.0]);
            CaseSetup { disc, initial, inflow: None, force: Some(force), exact: None, wall: Some((1, lo, hi)) }
        }
        "box" => {
            let ext = extent(cfg, vec![[0.0, 1.0]; dim]);
            let disc = build(&spec_from(dim, n, &ext, vec![Some([BoundaryKind::Wall; 2]); dim]))?;
            let amp = if cfg.case.perturbation > 0.0 { cfg.case.perturbation } else { 1.0 };
            let initial = streamfunction_perturbation(cfg.case.seed, amp, ext, (0..dim).collect());
            CaseSetup { disc, initial, inflow: None, force: None, exact: None, wall: None }
        }
        other => return Err(CliError::Config(format!("case.name: unknown case '{other}'"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_is_solenoidal_and_vanishes_on_walls() {
        let f = streamfunction_perturbation(3, 1.0, vec![[0.0, 2.0], [-1.0, 1.0]], vec![1]);
        let h = 1e-5;
        for &(x, y) in &[(0.3, 0.2), (1.7, -0.6), (0.9, 0.95)] {
            let dudx = (f(&[x + h, y])[0] - f(&[x - h, y])[0]) / (2.0 * h);
            let dvdy = (f(&[x, y + h])[1] - f(&[x, y - h])[1]) / (2.0 * h);
            assert!((dudx + dvdy).abs() < 1e-6);
        }
        assert!(f(&[0.4, -1.0]).iter().all(|v| v.abs() < 1e-14));
        assert!(f(&[0.4, 1.0]).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn kovasznay_is_divergence_free() {
        let u = (kovasznay(40.0).velocity)(0.0);
        let h = 1e-5;
        let (x, y) = (0.2, 0.7);
        let div = (u(&[x + h, y])[0] - u(&[x - h, y])[0] + u(&[x, y + h])[1] - u(&[x, y - h])[1]) / (2.0 * h);
        assert!(div.abs() < 1e-6);
    }
}
