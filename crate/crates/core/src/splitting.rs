//! Time stepping: implicit viscous prediction with explicit convection,
//! hybrid mixed projection onto divergence-free velocities, update.

use crate::error::{Error, Result};
use crate::fespace::{Discretization, VectorFn};
use crate::forms::{apply_convection, assemble_body_force, spmv, spmv_t, FluxMode, InflowData, SystemBlocks};
use crate::hopu::{update_order_field, FacetOrder, FacetProjector, OrderField};
use crate::linsolve::{
    Bddc, CondensedSystem, EliminationSet, MomentumSolution, PcgOptions, PressurePcKind, PressureSchur,
    ProjectionSolution, SolverReport,
};
use crate::mesh::{FacetTag, Neighbor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeParams {
    pub dt: f64,
    pub nu: f64,
    pub t_end: f64,
    pub cfl_guard: f64,
}

impl TimeParams {
    pub fn new(dt: f64, nu: f64, t_end: f64) -> Result<Self> {
        for (name, v) in [("dt", dt), ("nu", nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!("end time must be non-negative, got {t_end}")));
        }
        Ok(TimeParams { dt, nu, t_end, cfl_guard: 0.5 })
    }

    /// Number of steps to reach `t_end` from zero.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Velocity (on `V`), physical pressure (on `Q`), time and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
    pub step_index: usize,
    /// Previous velocity, kept for the extrapolated convection variant.
    pub u_prev: Option<Vec<f64>>,
}

impl State {
    pub fn new(disc: &Discretization, u: Vec<f64>) -> Self {
        State { u, p: vec![0.0; disc.dofs.n_q], t: 0.0, step_index: 0, u_prev: None }
    }

    pub fn from_field(disc: &Discretization, f: VectorFn) -> Result<Self> {
        Ok(Self::new(disc, disc.project_v(f)?))
    }
}

/// Unknowns of the last step.
#[derive(Debug, Clone, Default)]
pub struct StepWorkspace {
    pub ustar: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub uhat: Vec<f64>,
    pub utilde: Vec<f64>,
    pub utilde_disc: Vec<f64>,
    /// Projection multiplier (weak-form sign); physical increment is `p / dt`.
    pub p: Vec<f64>,
    pub phat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// `u^{n+1} = u* - u~`.
    Projected,
    /// `u^{n+1} = u^n + dt (u* - u~)`, kept for comparison only.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvectionRule {
    Explicit,
    /// Convection evaluated at `(3 u^n - u^{n-1}) / 2`.
    Extrapolated,
}

#[derive(Debug, Clone)]
pub struct SplitterOptions {
    pub elimination: EliminationSet,
    pub pressure_pc: PressurePcKind,
    pub momentum: PcgOptions,
    pub update: UpdateRule,
    pub convection: ConvectionRule,
    /// Incremental pressure correction: the previous pressure enters the
    /// prediction and the projection only corrects it. Steady states are
    /// then fixed points of the scheme.
    pub incremental: bool,
    /// Refresh cadence of the adaptive order field.
    pub cadence: usize,
}

impl Default for SplitterOptions {
    fn default() -> Self {
        SplitterOptions {
            elimination: EliminationSet::StressGammaAndBubbles,
            pressure_pc: PressurePcKind::Jacobi,
            momentum: PcgOptions { tol: 1e-11, max_iter: 2000, consistency_tol: 1e-8 },
            update: UpdateRule::Projected,
            convection: ConvectionRule::Explicit,
            incremental: false,
            cadence: 10,
        }
    }
}

/// Dirichlet data: exterior convection state on inlets, imposed normal
/// traces of `V` and `Vhat` values on wall and inlet facets.
#[derive(Debug, Clone)]
pub struct Boundary {
    pub inflow: InflowData,
    pub dir_v: Vec<f64>,
    pub dir_vhat: Vec<f64>,
}

impl Boundary {
    /// Walls get zero data, inlets the facet projections of `u_in`. Without
    /// outlet facets the inlet normal traces are shifted so the net boundary
    /// flux vanishes exactly.
    pub fn new(disc: &Discretization, u_in: Option<VectorFn>) -> Self {
        let dm = &disc.dofs;
        let nfb = disc.spaces.n_facet_basis;
        let nvh = disc.spaces.n_vhat_per_facet();
        let mut dir_v = vec![0.0; dm.n_v];
        let mut dir_vhat = vec![0.0; dm.n_vhat];
        let inflow = match u_in {
            Some(f) => InflowData::from_fn(disc, f),
            None => InflowData::none(disc),
        };
        let Some(f) = u_in else {
            return Boundary { inflow, dir_v, dir_vhat };
        };
        let inlets: Vec<usize> = disc.mesh.facets_with_tag(FacetTag::Inlet).collect();
        for &g in &inlets {
            dir_v[g * nfb..(g + 1) * nfb].copy_from_slice(&disc.project_normal_trace(g, f));
            dir_vhat[g * nvh..(g + 1) * nvh].copy_from_slice(&disc.project_tangential_trace(g, f));
        }
        if disc.mesh.facets_with_tag(FacetTag::Outlet).next().is_none() && !inlets.is_empty() {
            let sign = |g: usize| disc.mesh.facets[g].unit_normal[disc.mesh.facets[g].axis];
            let net: f64 = inlets.iter().map(|&g| sign(g) * dir_v[g * nfb] * disc.mesh.facets[g].measure).sum();
            let area: f64 = inlets.iter().map(|&g| disc.mesh.facets[g].measure).sum();
            for &g in &inlets {
                dir_v[g * nfb] -= sign(g) * net / area;
            }
        }
        Boundary { inflow, dir_v, dir_vhat }
    }

    /// Net outward flux of the imposed normal traces.
    pub fn net_flux(&self, disc: &Discretization) -> f64 {
        let nfb = disc.spaces.n_facet_basis;
        disc.mesh
            .facets
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.neighbor, Neighbor::Boundary(FacetTag::Inlet | FacetTag::Wall)))
            .map(|(g, f)| f.unit_normal[f.axis] * self.dir_v[g * nfb] * f.measure)
            .sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub momentum: SolverReport,
    pub pressure: SolverReport,
    pub max_divergence: f64,
    pub order_refreshed: bool,
}

/// Holds the condensed operators for the current `(nu, dt)` and advances states.
pub struct Splitter {
    pub disc: Discretization,
    pub params: TimeParams,
    pub flux: FluxMode,
    pub opts: SplitterOptions,
    pub boundary: Boundary,
    pub force: Vec<f64>,
    pub order: Option<OrderField>,
    pub condensed: CondensedSystem,
    pub bddc: Bddc,
    pub pressure: PressureSchur,
    pub projector: FacetProjector,
    pub blocks: SystemBlocks,
    pub workspace: StepWorkspace,
}

impl Splitter {
    pub fn new(
        disc: Discretization,
        params: TimeParams,
        flux: FluxMode,
        opts: SplitterOptions,
        boundary: Boundary,
        force: Option<VectorFn>,
    ) -> Result<Self> {
        let condensed = CondensedSystem::new(&disc, params.nu, params.dt, opts.elimination)?;
        let bddc = Bddc::new(&condensed)?;
        let pressure = PressureSchur::new(&disc, opts.pressure_pc)?;
        let projector = FacetProjector::new(&disc);
        let blocks = SystemBlocks::assemble(&disc, params.nu, params.dt)?;
        let force = match force {
            Some(f) => assemble_body_force(&disc, f),
            None => vec![0.0; disc.dofs.n_v],
        };
        let order = match &flux {
            FluxMode::HopuAdaptive(t) => {
                if t.k() != disc.k() {
                    return Err(Error::InvalidParameter(format!(
                        "threshold ladder has {} entries, order k = {} needs {}",
                        t.values().len(),
                        disc.k(),
                        disc.k() + 1
                    )));
                }
                Some(OrderField::uniform(&disc, FacetOrder::Projected(disc.k()), opts.cadence))
            }
            _ => None,
        };
        Ok(Splitter {
            disc,
            params,
            flux,
            opts,
            boundary,
            force,
            order,
            condensed,
            bddc,
            pressure,
            projector,
            blocks,
            workspace: StepWorkspace::default(),
        })
    }

    /// Changes `(nu, dt)`; the momentum operators are rebuilt when either differs.
    pub fn set_params(&mut self, params: TimeParams) -> Result<()> {
        if !self.condensed.matches(params.nu, params.dt) {
            self.condensed = CondensedSystem::new(&self.disc, params.nu, params.dt, self.opts.elimination)?;
            self.bddc = Bddc::new(&self.condensed)?;
            self.blocks = SystemBlocks::assemble(&self.disc, params.nu, params.dt)?;
        }
        self.params = params;
        Ok(())
    }

    fn convected_field(&self, state: &State) -> Vec<f64> {
        match (self.opts.convection, &state.u_prev) {
            (ConvectionRule::Extrapolated, Some(prev)) => state.u.iter().zip(prev).map(|(a, b)| 1.5 * a - 0.5 * b).collect(),
            _ => state.u.clone(),
        }
    }

    /// Largest `|u|` over all volume quadrature points.
    pub fn max_speed(&self, u: &[f64]) -> f64 {
        (0..self.disc.mesh.n_elements())
            .flat_map(|e| self.disc.v_values(e, u))
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Right-hand side of the momentum step on `V`.
    pub fn momentum_rhs(&self, state: &State) -> Result<Vec<f64>> {
        let w = self.convected_field(state);
        let conv = apply_convection(&self.disc, &self.projector, &w, &self.boundary.inflow, &self.flux, self.order.as_ref())?;
        let mut rhs = spmv(&self.blocks.muu, &state.u);
        for ((r, c), f) in rhs.iter_mut().zip(&conv).zip(&self.force) {
            *r += f - c;
        }
        if self.opts.incremental {
            let bp = spmv_t(&self.blocks.bpu, &state.p);
            for (r, b) in rhs.iter_mut().zip(&bp) {
                *r += b;
            }
        }
        Ok(rhs)
    }

    pub fn predict_velocity(&self, state: &State) -> Result<(MomentumSolution, SolverReport)> {
        self.bddc.check(self.params.nu, self.params.dt)?;
        let cfl = self.max_speed(&state.u) * self.params.dt / self.disc.mesh.h_min();
        if cfl > self.params.cfl_guard {
            log::warn!("CFL estimate {cfl:.3} exceeds guard {}", self.params.cfl_guard);
        }
        let rhs = self.momentum_rhs(state)?;
        self.condensed.solve(&self.disc, &rhs, &self.boundary.dir_v, &self.boundary.dir_vhat, &self.bddc, &self.opts.momentum)
    }

    pub fn pressure_projection(&self, ustar: &[f64]) -> Result<(ProjectionSolution, SolverReport)> {
        self.pressure.project(&self.disc, ustar)
    }

    /// One full step. Refreshes the adaptive order field first when the
    /// current step index is a multiple of the cadence.
    pub fn advance(&mut self, state: &State) -> Result<(State, StepReport)> {
        let mut refreshed = false;
        if let (FluxMode::HopuAdaptive(t), Some(order)) = (&self.flux, &self.order) {
            if order.needs_refresh(state.step_index) {
                let w = self.convected_field(state);
                self.order = Some(update_order_field(&self.disc, &self.projector, &w, &self.boundary.inflow, t, order)?);
                refreshed = true;
            }
        }
        let (m, mrep) = self.predict_velocity(state)?;
        let (proj, prep) = self.pressure_projection(&m.u)?;
        let dt = self.params.dt;
        let u: Vec<f64> = match self.opts.update {
            UpdateRule::Projected => m.u.iter().zip(&proj.utilde).map(|(a, b)| a - b).collect(),
            UpdateRule::Literal => state.u.iter().zip(m.u.iter().zip(&proj.utilde)).map(|(un, (a, b))| un + dt * (a - b)).collect(),
        };
        let p: Vec<f64> = if self.opts.incremental {
            state.p.iter().zip(&proj.p).map(|(a, b)| a + b / dt).collect()
        } else {
            physical_pressure(&proj.p, dt)
        };
        let max_divergence = self.disc.max_divergence(&u);
        self.workspace = StepWorkspace {
            ustar: m.u,
            sigma: m.sigma,
            gamma: m.gamma,
            uhat: m.uhat,
            utilde: proj.utilde,
            utilde_disc: proj.utilde_disc,
            p: proj.p,
            phat: proj.phat,
        };
        let next = State {
            u,
            p,
            t: state.t + dt,
            step_index: state.step_index + 1,
            u_prev: (self.opts.convection == ConvectionRule::Extrapolated).then(|| state.u.clone()),
        };
        Ok((next, StepReport { momentum: mrep, pressure: prep, max_divergence, order_refreshed: refreshed }))
    }
}

/// Physical pressure from the projection multiplier.
pub fn physical_pressure(p: &[f64], dt: f64) -> Vec<f64> {
    p.iter().map(|x| x / dt).collect()
}

/// `max |int (div u) q_i|` over the `Q` basis.
pub fn weak_divergence(blocks: &SystemBlocks, u: &[f64]) -> f64 {
    spmv(&blocks.bpu, u).iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_spaces;
    use crate::mesh::{build_box_mesh, BoundaryKind, MeshSpec};
    use crate::stats::kinetic_energy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tg(x: &[f64]) -> [f64; 3] {
        [x[0].sin() * x[1].cos(), -x[0].cos() * x[1].sin(), 0.0]
    }

    fn periodic(n: usize, k: usize) -> Discretization {
        build_spaces(&build_box_mesh(&MeshSpec::periodic_box(2, n, 0.0, std::f64::consts::TAU)).unwrap(), k).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(TimeParams::new(0.0, 1.0, 1.0).is_err());
        assert!(TimeParams::new(0.1, -1.0, 1.0).is_err());
        let p = TimeParams::new(1e-3, 0.01, 1.0).unwrap();
        assert_eq!(p.n_steps(), 1000);
        assert_eq!(p.cfl_guard, 0.5);
    }

    #[test]
    fn zero_state_stays_zero() {
        let d = periodic(2, 1);
        let s0 = State::new(&d, vec![0.0; d.dofs.n_v]);
        let b = Boundary::new(&d, None);
        let mut sp = Splitter::new(d, TimeParams::new(0.01, 0.1, 1.0).unwrap(), FluxMode::Upwind, SplitterOptions::default(), b, None).unwrap();
        let (s1, rep) = sp.advance(&s0).unwrap();
        assert!(s1.u.iter().all(|v| *v == 0.0));
        assert_eq!(rep.momentum.iterations, 0);
        assert_eq!(s1.step_index, 1);
        assert_eq!(physical_pressure(&[0.0, 0.0], 0.1), vec![0.0, 0.0]);
        assert_eq!(physical_pressure(&[1.0], 0.5), vec![2.0]);
        assert_eq!(physical_pressure(&[1.0], 1.0), vec![1.0]);
    }

    #[test]
    fn random_predictions_project_to_divergence_free() {
        let d = periodic(3, 2);
        let b = Boundary::new(&d, None);
        let sp = Splitter::new(d, TimeParams::new(0.01, 0.1, 1.0).unwrap(), FluxMode::Upwind, SplitterOptions::default(), b, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let ustar: Vec<f64> = (0..sp.disc.dofs.n_v).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (pr, _) = sp.pressure_projection(&ustar).unwrap();
            let u: Vec<f64> = ustar.iter().zip(&pr.utilde).map(|(a, b)| a - b).collect();
            assert!(sp.disc.max_divergence(&u) <= 1e-10, "{}", sp.disc.max_divergence(&u));
            // u~ is normal-continuous: the averaged and the broken copies agree
            let nv = sp.disc.spaces.v.len();
            for e in 0..sp.disc.mesh.n_elements() {
                for i in 0..nv {
                    assert!((pr.utilde_disc[e * nv + i] - pr.utilde[sp.disc.dofs.v[e][i]]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn taylor_green_short_run() {
        let d = periodic(4, 2);
        let s0 = State::from_field(&d, &tg).unwrap();
        let ke0 = kinetic_energy(&d, &s0.u);
        let b = Boundary::new(&d, None);
        let nu = 0.05;
        let mut sp = Splitter::new(d, TimeParams::new(0.01, nu, 0.1).unwrap(), FluxMode::Upwind, SplitterOptions::default(), b, None).unwrap();
        let mut s = s0;
        for _ in 0..10 {
            let (n, rep) = sp.advance(&s).unwrap();
            assert!(rep.max_divergence <= 1e-9);
            s = n;
        }
        let ke = kinetic_energy(&sp.disc, &s.u);
        let exact = ke0 * (-4.0 * nu * s.t).exp();
        assert!((ke - exact).abs() / exact < 2e-3, "{ke} vs {exact}");
    }

    #[test]
    fn recondensation_on_parameter_change() {
        let d = periodic(2, 1);
        let b = Boundary::new(&d, None);
        let mut sp = Splitter::new(d, TimeParams::new(0.01, 0.1, 1.0).unwrap(), FluxMode::Central, SplitterOptions::default(), b, None).unwrap();
        sp.set_params(TimeParams::new(0.02, 0.1, 1.0).unwrap()).unwrap();
        assert!(sp.condensed.matches(0.1, 0.02));
        assert!(sp.bddc.check(0.1, 0.02).is_ok());
    }

    #[test]
    fn inlet_data_is_flux_balanced() {
        let mut spec = MeshSpec::unit_walls(2, 3);
        spec.boundary = vec![Some([BoundaryKind::Inlet; 2]); 2];
        let d = build_spaces(&build_box_mesh(&spec).unwrap(), 2).unwrap();
        let b = Boundary::new(&d, Some(&|x: &[f64]| [1.0 + x[1], 0.3 * x[0] * x[0], 0.0]));
        assert!(b.net_flux(&d).abs() < 1e-14);
    }
}
