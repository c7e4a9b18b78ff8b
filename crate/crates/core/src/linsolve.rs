//! Static condensation, Schur complements, preconditioned conjugate
//! gradients, element-wise BDDC for the momentum step and the pressure
//! Schur complement with a pluggable preconditioner.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fespace::Discretization;
use crate::forms::{dot, local_blocks, spmv, LocalBlocks};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`.
    pub residual: f64,
    pub seconds: f64,
    pub applications: usize,
}

impl fmt::Display for SolverReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, relative residual {:.3e}, {} operator applications, {:.3} s",
            self.iterations, self.residual, self.applications, self.seconds
        )
    }
}

pub trait LinearOperator: Sync {
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

impl LinearOperator for DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

impl LinearOperator for CsrMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        spmv(self, x)
    }
}

/// A symmetric operator restricted to the unconstrained entries: constrained
/// entries of the input are ignored and those of the output are zero.
pub struct Masked<'a, A: LinearOperator> {
    pub op: &'a A,
    pub fixed: &'a [bool],
}

impl<A: LinearOperator> LinearOperator for Masked<'_, A> {
    fn size(&self) -> usize {
        self.op.size()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let xm: Vec<f64> = x.iter().zip(self.fixed).map(|(v, f)| if *f { 0.0 } else { *v }).collect();
        let mut y = self.op.apply(&xm);
        for (v, f) in y.iter_mut().zip(self.fixed) {
            if *f {
                *v = 0.0;
            }
        }
        y
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_out(x: &mut [f64], z: &[Vec<f64>]) {
    for zi in z {
        let c = dot(zi, x);
        for (v, w) in x.iter_mut().zip(zi) {
            *v -= c * w;
        }
    }
}

/// Orthonormalizes deflation vectors (modified Gram-Schmidt).
pub fn orthonormalize(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in z {
        let mut w = v.clone();
        project_out(&mut w, &out);
        let n = norm(&w);
        if n > 1e-14 {
            out.push(w.iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Options of [`pcg`].
#[derive(Debug, Clone)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Allowed `|Z^T b| / ||b||` before the right-hand side counts as inconsistent.
    pub consistency_tol: f64,
}

impl Default for PcgOptions {
    fn default() -> Self {
        PcgOptions { tol: 1e-10, max_iter: 1000, consistency_tol: 1e-8 }
    }
}

/// Preconditioned conjugate gradients from a zero initial guess. Converged
/// when the true relative residual `||b - A x|| / ||b||` drops below `tol`.
/// Deflation vectors (orthonormalized here) are projected out of the
/// right-hand side, every preconditioned residual and the solution.
pub fn pcg(
    op: &dyn LinearOperator,
    b: &[f64],
    pc: &dyn Preconditioner,
    opts: &PcgOptions,
    deflation: Option<&[Vec<f64>]>,
) -> Result<(Vec<f64>, SolverReport)> {
    let start = Instant::now();
    let n = op.size();
    let z_defl = deflation.map(orthonormalize).unwrap_or_default();
    let mut r = b.to_vec();
    let bnorm0 = norm(&r);
    if !z_defl.is_empty() && bnorm0 > 0.0 {
        let incons = z_defl.iter().map(|z| dot(z, &r).powi(2)).sum::<f64>().sqrt();
        if incons > opts.consistency_tol * bnorm0 {
            return Err(Error::InconsistentRhs(incons / bnorm0));
        }
        project_out(&mut r, &z_defl);
    }
    let bnorm = norm(&r);
    let mut x = vec![0.0; n];
    let mut report = SolverReport::default();
    if bnorm == 0.0 {
        report.seconds = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let mut history = vec![1.0];
    let mut z = pc.apply(&r);
    project_out(&mut z, &z_defl);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=opts.max_iter {
        let ap = op.apply(&p);
        report.applications += 1;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Indefinite(pap));
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rel = norm(&r) / bnorm;
        history.push(rel);
        report.iterations = it;
        report.residual = rel;
        if rel <= opts.tol {
            project_out(&mut x, &z_defl);
            report.seconds = start.elapsed().as_secs_f64();
            return Ok((x, report));
        }
        z = pc.apply(&r);
        project_out(&mut z, &z_defl);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Err(Error::NotConverged { report, history })
}

/// Which local unknowns the momentum condensation removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EliminationSet {
    StressAndGamma,
    StressGammaAndBubbles,
}

/// Momentum-step system after eliminating `(sigma, gamma)` (and optionally
/// the velocity bubbles) element by element.
///
/// Retained global layout: velocity unknowns first (facet DOFs, plus bubbles
/// when kept), then `Vhat`.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub nu: f64,
    pub dt: f64,
    pub elimination: EliminationSet,
    pub n_vret: usize,
    pub n_ret: usize,
    /// Per element: retained local index -> retained global index.
    pub local_map: Vec<Vec<usize>>,
    /// Full local `S_T` on `(V_T, Vhat_T)`.
    pub s_full: DMatrix<f64>,
    /// Local operator on the retained unknowns.
    pub s_local: DMatrix<f64>,
    /// Local indices (into the full local vector) that are retained.
    pub ret_idx: Vec<usize>,
    bubble_idx: Vec<usize>,
    bubble_chol: Option<Cholesky<f64, Dyn>>,
    /// `[sigma; gamma] = recovery * x_T`.
    pub recovery: DMatrix<f64>,
    pub s: CsrMatrix<f64>,
    pub fixed: Vec<bool>,
    pub blocks: LocalBlocks,
}

/// Solution of the momentum step.
#[derive(Debug, Clone)]
pub struct MomentumSolution {
    pub u: Vec<f64>,
    pub uhat: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl CondensedSystem {
    pub fn new(disc: &Discretization, nu: f64, dt: f64, elimination: EliminationSet) -> Result<Self> {
        if !(nu > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("need nu > 0 and dt > 0 (nu = {nu}, dt = {dt})")));
        }
        let lb = local_blocks(disc);
        let ns = disc.spaces.sigma.len();
        let nw = disc.spaces.w.len();
        let nv = disc.spaces.v.len();
        let nvh = disc.spaces.vhat.len();
        let nfl = disc.spaces.n_v_facet_local;
        let nfull = nv + nvh;
        let mut m = DMatrix::zeros(ns + nw, ns + nw);
        m.view_mut((0, 0), (ns, ns)).copy_from(&(&lb.sigma_mass * (-0.5 / nu)));
        m.view_mut((ns, 0), (nw, ns)).copy_from(&lb.b_gs);
        m.view_mut((0, ns), (ns, nw)).copy_from(&lb.b_gs.transpose());
        let mut bt = DMatrix::zeros(ns + nw, nfull);
        bt.view_mut((0, 0), (ns, nv)).copy_from(&lb.b_us.transpose());
        bt.view_mut((0, nv), (ns, nvh)).copy_from(&lb.b_uhs.transpose());
        let lu = LU::new(m);
        let y = lu.solve(&bt).ok_or_else(|| Error::SingularElementBlock { element: 0, what: "stress/rotation block".into() })?;
        let mut s_full = -(bt.transpose() * &y);
        let mass_dt = &lb.v_mass / dt;
        let mut blk = s_full.view_mut((0, 0), (nv, nv));
        blk += &mass_dt;
        s_full = (&s_full + s_full.transpose()) * 0.5;
        let recovery = -y;

        let (ret_idx, bubble_idx): (Vec<usize>, Vec<usize>) = match elimination {
            EliminationSet::StressAndGamma => ((0..nfull).collect(), vec![]),
            EliminationSet::StressGammaAndBubbles => ((0..nfl).chain(nv..nfull).collect(), (nfl..nv).collect()),
        };
        let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| s_full[(r[i], c[j])]);
        let (s_local, bubble_chol) = if bubble_idx.is_empty() {
            (s_full.clone(), None)
        } else {
            let sbb = sub(&bubble_idx, &bubble_idx);
            let chol = Cholesky::new(sbb).ok_or_else(|| Error::SingularElementBlock { element: 0, what: "velocity bubble block".into() })?;
            let srb = sub(&ret_idx, &bubble_idx);
            let sl = sub(&ret_idx, &ret_idx) - &srb * chol.solve(&srb.transpose());
            ((&sl + sl.transpose()) * 0.5, Some(chol))
        };

        let dm = &disc.dofs;
        let n_vret = if bubble_idx.is_empty() { dm.n_v } else { dm.n_v_facet };
        let n_ret = n_vret + dm.n_vhat;
        let local_map: Vec<Vec<usize>> = (0..disc.mesh.n_elements())
            .map(|e| {
                ret_idx
                    .iter()
                    .map(|&i| if i < nv { dm.v[e][i] } else { n_vret + dm.vhat[e][i - nv] })
                    .collect()
            })
            .collect();
        let mut fixed = vec![false; n_ret];
        for (i, f) in dm.v_dirichlet.iter().enumerate().take(n_vret) {
            fixed[i] = *f;
        }
        for (i, f) in dm.vhat_dirichlet.iter().enumerate() {
            fixed[n_vret + i] = *f;
        }
        let mut coo = CooMatrix::new(n_ret, n_ret);
        for map in &local_map {
            for (i, &gi) in map.iter().enumerate() {
                for (j, &gj) in map.iter().enumerate() {
                    coo.push(gi, gj, s_local[(i, j)]);
                }
            }
        }
        let s = CsrMatrix::from(&coo);
        Ok(CondensedSystem {
            nu,
            dt,
            elimination,
            n_vret,
            n_ret,
            local_map,
            s_full,
            s_local,
            ret_idx,
            bubble_idx,
            bubble_chol,
            recovery,
            s,
            fixed,
            blocks: lb,
        })
    }

    /// Whether this system was built for `(nu, dt)`.
    pub fn matches(&self, nu: f64, dt: f64) -> bool {
        self.nu == nu && self.dt == dt
    }

    /// Solves the momentum step. `rhs_v` is the global velocity load
    /// (`M u^n - C(u^n) + F`); `dir_v` / `dir_vhat` hold the Dirichlet values
    /// (only entries on constrained DOFs are read).
    pub fn solve(
        &self,
        disc: &Discretization,
        rhs_v: &[f64],
        dir_v: &[f64],
        dir_vhat: &[f64],
        pc: &dyn Preconditioner,
        opts: &PcgOptions,
    ) -> Result<(MomentumSolution, SolverReport)> {
        let dm = &disc.dofs;
        let nv = disc.spaces.v.len();
        let ne = disc.mesh.n_elements();
        let mut g = vec![0.0; self.n_ret];
        g[..self.n_vret].copy_from_slice(&rhs_v[..self.n_vret]);
        let bubble_corr: Vec<DVector<f64>> = match &self.bubble_chol {
            Some(chol) => (0..ne)
                .map(|e| {
                    let gb = DVector::from_iterator(self.bubble_idx.len(), self.bubble_idx.iter().map(|&i| rhs_v[dm.v[e][i]]));
                    chol.solve(&gb)
                })
                .collect(),
            None => vec![],
        };
        if self.bubble_chol.is_some() {
            for e in 0..ne {
                for (i, &ri) in self.ret_idx.iter().enumerate() {
                    let c: f64 = self.bubble_idx.iter().enumerate().map(|(j, &bj)| self.s_full[(ri, bj)] * bubble_corr[e][j]).sum();
                    g[self.local_map[e][i]] -= c;
                }
            }
        }
        let mut xd = vec![0.0; self.n_ret];
        for i in 0..self.n_ret {
            if self.fixed[i] {
                xd[i] = if i < self.n_vret { dir_v[i] } else { dir_vhat[i - self.n_vret] };
            }
        }
        let sxd = spmv(&self.s, &xd);
        let gf: Vec<f64> = (0..self.n_ret).map(|i| if self.fixed[i] { 0.0 } else { g[i] - sxd[i] }).collect();
        let op = Masked { op: &self.s, fixed: &self.fixed };
        let (xf, report) = pcg(&op, &gf, pc, opts, None)?;
        let x: Vec<f64> = (0..self.n_ret).map(|i| if self.fixed[i] { xd[i] } else { xf[i] }).collect();

        let mut u = vec![0.0; dm.n_v];
        let mut uhat = vec![0.0; dm.n_vhat];
        u[..self.n_vret].copy_from_slice(&x[..self.n_vret]);
        uhat.copy_from_slice(&x[self.n_vret..]);
        let ns = disc.spaces.sigma.len();
        let nw = disc.spaces.w.len();
        let locals: Vec<(Vec<f64>, DVector<f64>)> = (0..ne)
            .into_par_iter()
            .map(|e| {
                let mut xl = DVector::zeros(self.s_full.nrows());
                for (i, &ri) in self.ret_idx.iter().enumerate() {
                    xl[ri] = x[self.local_map[e][i]];
                }
                let mut bub = vec![];
                if let Some(chol) = &self.bubble_chol {
                    let sbr_x = DVector::from_iterator(
                        self.bubble_idx.len(),
                        self.bubble_idx.iter().map(|&b| self.ret_idx.iter().map(|&r| self.s_full[(b, r)] * xl[r]).sum::<f64>()),
                    );
                    let xb = &bubble_corr[e] - chol.solve(&sbr_x);
                    for (j, &bj) in self.bubble_idx.iter().enumerate() {
                        xl[bj] = xb[j];
                    }
                    bub = xb.as_slice().to_vec();
                }
                (bub, &self.recovery * &xl)
            })
            .collect();
        let mut sigma = vec![0.0; dm.n_sigma];
        let mut gamma = vec![0.0; dm.n_w];
        for (e, (bub, sg)) in locals.iter().enumerate() {
            for (j, &bj) in self.bubble_idx.iter().enumerate() {
                u[dm.v[e][bj]] = bub[j];
            }
            sigma[e * ns..(e + 1) * ns].copy_from_slice(&sg.as_slice()[..ns]);
            gamma[e * nw..(e + 1) * nw].copy_from_slice(&sg.as_slice()[ns..ns + nw]);
        }
        debug_assert_eq!(nv, self.s_full.nrows() - disc.spaces.vhat.len());
        Ok((MomentumSolution { u, uhat, sigma, gamma }, report))
    }
}

/// Element-wise BDDC without coarse space: `C^{-1} = R S_BDDC^{-1} R^T`
/// with multiplicity-weighted averaging `R`.
#[derive(Debug, Clone)]
pub struct Bddc {
    pub nu: f64,
    pub dt: f64,
    local_map: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    patterns: Vec<(Vec<usize>, Cholesky<f64, Dyn>)>,
    element_pattern: Vec<usize>,
}

impl Bddc {
    pub fn new(cs: &CondensedSystem) -> Result<Self> {
        if cs.nu * cs.dt > 0.1 {
            log::warn!("nu * dt = {} > 0.1: BDDC without coarse space may converge slowly", cs.nu * cs.dt);
        }
        let mut mult = vec![0.0; cs.n_ret];
        for map in &cs.local_map {
            for &g in map {
                if !cs.fixed[g] {
                    mult[g] += 1.0;
                }
            }
        }
        let weights: Vec<f64> = mult.iter().map(|&m| if m > 0.0 { 1.0 / m } else { 0.0 }).collect();
        let mut lookup: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut element_pattern = Vec::with_capacity(cs.local_map.len());
        for (e, map) in cs.local_map.iter().enumerate() {
            let free: Vec<usize> = (0..map.len()).filter(|&i| !cs.fixed[map[i]]).collect();
            let id = match lookup.get(&free) {
                Some(&id) => id,
                None => {
                    let a = DMatrix::from_fn(free.len(), free.len(), |i, j| cs.s_local[(free[i], free[j])]);
                    let chol = Cholesky::new(a)
                        .ok_or_else(|| Error::SingularElementBlock { element: e, what: "local Schur complement".into() })?;
                    patterns.push((free.clone(), chol));
                    lookup.insert(free, patterns.len() - 1);
                    patterns.len() - 1
                }
            };
            element_pattern.push(id);
        }
        Ok(Bddc { nu: cs.nu, dt: cs.dt, local_map: cs.local_map.clone(), weights, patterns, element_pattern })
    }

    pub fn check(&self, nu: f64, dt: f64) -> Result<()> {
        if self.nu != nu || self.dt != dt {
            return Err(Error::StalePreconditioner { built_nu: self.nu, built_dt: self.dt, nu, dt });
        }
        Ok(())
    }

    /// `R S_BDDC^{-1} R^T r`, after checking the parameters it was built for.
    pub fn apply_checked(&self, r: &[f64], nu: f64, dt: f64) -> Result<Vec<f64>> {
        self.check(nu, dt)?;
        Ok(Preconditioner::apply(self, r))
    }

    /// Averaging map on broken (per element) coefficient vectors.
    pub fn average(&self, broken: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.len()];
        for (map, loc) in self.local_map.iter().zip(broken) {
            for (&g, v) in map.iter().zip(loc) {
                out[g] += self.weights[g] * v;
            }
        }
        out
    }

    /// Duplicates a conforming vector into broken element copies.
    pub fn duplicate(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.local_map.iter().map(|m| m.iter().map(|&g| x[g]).collect()).collect()
    }
}

impl Preconditioner for Bddc {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let locals: Vec<Vec<f64>> = (0..self.local_map.len())
            .into_par_iter()
            .map(|e| {
                let map = &self.local_map[e];
                let (free, chol) = &self.patterns[self.element_pattern[e]];
                let rl = DVector::from_iterator(free.len(), free.iter().map(|&i| self.weights[map[i]] * r[map[i]]));
                let z = chol.solve(&rl);
                let mut out = vec![0.0; map.len()];
                for (j, &i) in free.iter().enumerate() {
                    out[i] = z[j];
                }
                out
            })
            .collect();
        self.average(&locals)
    }
}

/// Pressure-step preconditioners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressurePcKind {
    Jacobi,
    /// Jacobi plus an exact solve on the facet-constant modes.
    TwoLevel,
}

#[derive(Debug, Clone)]
pub struct PressurePc {
    inv_diag: Vec<f64>,
    coarse: Option<(Vec<usize>, Cholesky<f64, Dyn>)>,
}

impl Preconditioner for PressurePc {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, b)| a * b).collect();
        if let Some((idx, chol)) = &self.coarse {
            let rc = DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i]));
            let zc = chol.solve(&rc);
            for (j, &i) in idx.iter().enumerate() {
                z[i] += zc[j];
            }
        }
        z
    }
}

/// Solution of the pressure step.
#[derive(Debug, Clone)]
pub struct ProjectionSolution {
    /// `u~` as a conforming velocity (facet copies averaged).
    pub utilde: Vec<f64>,
    /// `u~` element by element, before averaging.
    pub utilde_disc: Vec<f64>,
    /// Multiplier `p` in the weak-form sign convention (`u~ ~ grad p`).
    pub p: Vec<f64>,
    pub phat: Vec<f64>,
}

/// Hybridized pressure projection: local `(u~, p)` eliminated, global
/// `S_p = -sum C K^{-1} C^T` on `Qhat`.
#[derive(Debug, Clone)]
pub struct PressureSchur {
    ku: DMatrix<f64>,
    kc: DMatrix<f64>,
    rhs_map: DMatrix<f64>,
    pub sp_local: DMatrix<f64>,
    pub sp: CsrMatrix<f64>,
    pub fixed: Vec<bool>,
    pub deflation: Option<Vec<f64>>,
    pub pc: PressurePc,
    pub opts: PcgOptions,
}

impl PressureSchur {
    pub fn new(disc: &Discretization, kind: PressurePcKind) -> Result<Self> {
        let lb = local_blocks(disc);
        let nv = disc.spaces.v.len();
        let nq = disc.spaces.q.len();
        let nqh = lb.b3.nrows();
        let mut k = DMatrix::zeros(nv + nq, nv + nq);
        k.view_mut((0, 0), (nv, nv)).copy_from(&(-&lb.v_mass));
        k.view_mut((nv, 0), (nq, nv)).copy_from(&lb.b1);
        k.view_mut((0, nv), (nv, nq)).copy_from(&lb.b1.transpose());
        let lu = LU::new(k);
        let mut f = DMatrix::zeros(nv + nq, nv);
        f.view_mut((nv, 0), (nq, nv)).copy_from(&lb.b1);
        let mut ct = DMatrix::zeros(nv + nq, nqh);
        ct.view_mut((0, 0), (nv, nqh)).copy_from(&lb.b3.transpose());
        let singular = || Error::SingularElementBlock { element: 0, what: "velocity/pressure block".into() };
        let ku = lu.solve(&f).ok_or_else(singular)?;
        let kc = lu.solve(&ct).ok_or_else(singular)?;
        let rhs_map = -(ct.transpose() * &ku);
        let sp_local = -(ct.transpose() * &kc);
        let sp_local = (&sp_local + sp_local.transpose()) * 0.5;

        let dm = &disc.dofs;
        let n = dm.n_qhat;
        let fixed = dm.qhat_fixed.clone();
        let mut coo = CooMatrix::new(n, n);
        for e in 0..disc.mesh.n_elements() {
            let map = &dm.qhat[e];
            for (i, &gi) in map.iter().enumerate() {
                if fixed[gi] {
                    continue;
                }
                for (j, &gj) in map.iter().enumerate() {
                    if !fixed[gj] {
                        coo.push(gi, gj, sp_local[(i, j)]);
                    }
                }
            }
        }
        let sp = CsrMatrix::from(&coo);
        let nfb = disc.spaces.n_facet_basis;
        let deflation = if fixed.iter().any(|f| *f) {
            None
        } else {
            let nf = disc.mesh.n_facets();
            let mut z = vec![0.0; n];
            for g in 0..nf {
                z[g * nfb] = 1.0 / (nf as f64).sqrt();
            }
            Some(z)
        };
        let mut diag = vec![0.0; n];
        for (r, row) in sp.row_iter().enumerate() {
            for (c, v) in row.col_indices().iter().zip(row.values()) {
                if *c == r {
                    diag[r] += v;
                }
            }
        }
        let inv_diag: Vec<f64> = diag.iter().zip(&fixed).map(|(d, f)| if *f || *d <= 0.0 { 0.0 } else { 1.0 / d }).collect();
        let coarse = match kind {
            PressurePcKind::Jacobi => None,
            PressurePcKind::TwoLevel => {
                let idx: Vec<usize> = (0..disc.mesh.n_facets()).map(|g| g * nfb).filter(|&i| !fixed[i]).collect();
                let pos: HashMap<usize, usize> = idx.iter().enumerate().map(|(j, &i)| (i, j)).collect();
                let nc = idx.len();
                let mut a = DMatrix::zeros(nc, nc);
                for (j, &i) in idx.iter().enumerate() {
                    let row = sp.row(i);
                    for (c, v) in row.col_indices().iter().zip(row.values()) {
                        if let Some(&cj) = pos.get(c) {
                            a[(j, cj)] += v;
                        }
                    }
                }
                if deflation.is_some() {
                    let s = a.diagonal().mean() / nc as f64;
                    a.add_scalar_mut(s);
                }
                let chol = Cholesky::new(a).ok_or_else(|| Error::SingularElementBlock { element: 0, what: "coarse pressure operator".into() })?;
                Some((idx, chol))
            }
        };
        Ok(PressureSchur {
            ku,
            kc,
            rhs_map,
            sp_local,
            sp,
            fixed,
            deflation,
            pc: PressurePc { inv_diag, coarse },
            opts: PcgOptions { tol: 1e-12, max_iter: 5000, consistency_tol: 1e-8 },
        })
    }

    /// Right-hand side of the `Qhat` system for a given `u*`.
    pub fn rhs(&self, disc: &Discretization, ustar: &[f64]) -> Vec<f64> {
        self.rhs_with_scale(disc, ustar).0
    }

    /// Assembled right-hand side and `|| |R_T| |u*_T| ||`, the size of the
    /// terms whose cancellation produces the right-hand side.
    fn rhs_with_scale(&self, disc: &Discretization, ustar: &[f64]) -> (Vec<f64>, f64) {
        let dm = &disc.dofs;
        let mut out = vec![0.0; dm.n_qhat];
        let mut scale = 0.0;
        for e in 0..disc.mesh.n_elements() {
            let ul = DVector::from_vec(disc.gather_v(e, ustar));
            let r = &self.rhs_map * &ul;
            let ra = self.rhs_map.abs() * ul.abs();
            for (i, &g) in dm.qhat[e].iter().enumerate() {
                if !self.fixed[g] {
                    out[g] += r[i];
                    scale += ra[i] * ra[i];
                }
            }
        }
        (out, scale.sqrt())
    }

    pub fn solve_pressure_schur(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let op = Masked { op: &self.sp, fixed: &self.fixed };
        let defl = self.deflation.as_ref().map(|z| vec![z.clone()]);
        pcg(&op, rhs, &self.pc, &self.opts, defl.as_deref())
    }

    /// Full projection: solve for `phat`, then recover `(u~, p)` element-wise.
    pub fn project(&self, disc: &Discretization, ustar: &[f64]) -> Result<(ProjectionSolution, SolverReport)> {
        let (mut rhs, scale) = self.rhs_with_scale(disc, ustar);
        if let Some(z) = &self.deflation {
            // With balanced boundary flux the compatibility component is pure
            // cancellation error; strip it.
            let c = dot(z, &rhs);
            if c.abs() > self.opts.consistency_tol * scale {
                return Err(Error::InconsistentRhs(c.abs() / scale));
            }
            for (r, zi) in rhs.iter_mut().zip(z) {
                *r -= c * zi;
            }
        }
        let (phat, report) = self.solve_pressure_schur(&rhs)?;
        let dm = &disc.dofs;
        let nv = disc.spaces.v.len();
        let nq = disc.spaces.q.len();
        let ne = disc.mesh.n_elements();
        let locals: Vec<DVector<f64>> = (0..ne)
            .into_par_iter()
            .map(|e| {
                let ul = DVector::from_vec(disc.gather_v(e, ustar));
                let ph = DVector::from_iterator(dm.qhat[e].len(), dm.qhat[e].iter().map(|&g| phat[g]));
                &self.ku * ul - &self.kc * ph
            })
            .collect();
        let mut utilde = vec![0.0; dm.n_v];
        let mut count = vec![0.0; dm.n_v];
        let mut utilde_disc = vec![0.0; dm.n_vdisc];
        let mut p = vec![0.0; dm.n_q];
        for (e, l) in locals.iter().enumerate() {
            for i in 0..nv {
                utilde[dm.v[e][i]] += l[i];
                count[dm.v[e][i]] += 1.0;
                utilde_disc[e * nv + i] = l[i];
            }
            for i in 0..nq {
                p[e * nq + i] = -l[nv + i];
            }
        }
        for (u, c) in utilde.iter_mut().zip(&count) {
            *u /= c;
        }
        Ok((ProjectionSolution { utilde, utilde_disc, p, phat }, report))
    }
}
