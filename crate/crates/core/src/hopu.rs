//! Projected upwinding: facet-wise `L2` projection of tangential jumps onto
//! low-order polynomials, the jump indicator `eta` and the per-facet order ladder.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fespace::Discretization;
use crate::forms::{facet_traces, InflowData};
use crate::poly::{legendre_norm_sq, multi_indices, TensorPoly};

/// Per-facet stabilization choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetOrder {
    /// Plain upwinding (`Pi = 0`).
    StandardUpwind,
    /// Upwinding of the part of the jump orthogonal to tangential `P^l`.
    Projected(usize),
}

impl FacetOrder {
    /// Integer code used in dumps: `-1` for upwind, else `l`.
    pub fn code(self) -> i64 {
        match self {
            FacetOrder::StandardUpwind => -1,
            FacetOrder::Projected(l) => l as i64,
        }
    }
}

/// Strictly increasing thresholds `eta_0 < ... < eta_k < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaThresholds {
    values: Vec<f64>,
}

impl EtaThresholds {
    pub fn new(values: Vec<f64>, k: usize) -> Result<Self> {
        if values.len() != k + 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} thresholds for k = {k}, got {}",
                k + 1,
                values.len()
            )));
        }
        if values[0] <= 0.0 || values.windows(2).any(|w| w[0] >= w[1]) || values[k] >= 1.0 {
            return Err(Error::InvalidParameter(format!("thresholds must satisfy 0 < eta_0 < ... < eta_k < 1: {values:?}")));
        }
        Ok(EtaThresholds { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len() - 1
    }

    /// Maps an indicator value to a facet order. Values above `eta_k`,
    /// including those above 1, land in the top bracket.
    pub fn classify(&self, eta: f64) -> FacetOrder {
        if eta <= self.values[0] {
            return FacetOrder::StandardUpwind;
        }
        for i in 0..self.k() {
            if eta <= self.values[i + 1] {
                return FacetOrder::Projected(i);
            }
        }
        FacetOrder::Projected(self.k())
    }
}

/// Per-facet orders. Entries exist only for facets in the interior set
/// (interior, periodic, inlet).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderField {
    pub entries: Vec<Option<FacetOrder>>,
    pub cadence: usize,
    pub refresh_count: usize,
}

impl OrderField {
    pub fn uniform(disc: &Discretization, order: FacetOrder, cadence: usize) -> Self {
        let entries = disc.mesh.facets.iter().map(|f| f.tag.in_interior_set().then_some(order)).collect();
        OrderField { entries, cadence: cadence.max(1), refresh_count: 0 }
    }

    pub fn needs_refresh(&self, step_index: usize) -> bool {
        step_index % self.cadence == 0
    }

    pub fn get(&self, facet: usize) -> Option<FacetOrder> {
        self.entries.get(facet).copied().flatten()
    }

    /// Mean projection order over the facets of an element (`-1` for upwind).
    pub fn element_mean(&self, disc: &Discretization, e: usize) -> f64 {
        let codes: Vec<f64> =
            disc.mesh.element_facets[e].iter().filter_map(|&g| self.get(g)).map(|o| o.code() as f64).collect();
        if codes.is_empty() {
            -1.0
        } else {
            codes.iter().sum::<f64>() / codes.len() as f64
        }
    }

    /// CSV dump: `facet_id,cx,cy,cz,mode`.
    pub fn write_csv(&self, disc: &Discretization, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "facet_id,cx,cy,cz,mode")?;
        for (g, e) in self.entries.iter().enumerate() {
            if let Some(o) = e {
                let c = disc.mesh.facets[g].center;
                writeln!(w, "{g},{},{},{},{}", c[0], c[1], c[2], o.code())?;
            }
        }
        Ok(())
    }
}

/// `L2(E)` projections onto tangential `P^l(E)` at the facet quadrature
/// points, one matrix per `l` (shared by all facets of the uniform mesh).
#[derive(Debug, Clone)]
pub struct FacetProjector {
    pub k: usize,
    mats: Vec<DMatrix<f64>>,
}

impl FacetProjector {
    pub fn new(disc: &Discretization) -> Self {
        let d = disc.dim();
        let k = disc.k();
        let (tpts, w) = crate::poly::tensor_rule(d - 1, disc.quad.n1d);
        let basis = multi_indices(d - 1, k);
        let n = tpts.len();
        let mats = (0..=k)
            .map(|l| {
                let mut p = DMatrix::zeros(n, n);
                for m in basis.iter().filter(|m| m.iter().sum::<usize>() <= l) {
                    let poly = TensorPoly::legendre(m);
                    let norm: f64 = m.iter().map(|&i| legendre_norm_sq(i)).product();
                    let vals: Vec<f64> = tpts.iter().map(|x| poly.eval(x)).collect();
                    for q in 0..n {
                        for r in 0..n {
                            p[(q, r)] += vals[q] * vals[r] * w[r] / norm;
                        }
                    }
                }
                p
            })
            .collect();
        FacetProjector { k, mats }
    }

    /// Projects the tangential components (normal axis `axis`) of sampled
    /// values; the normal component maps to zero.
    pub fn project(&self, l: usize, axis: usize, values: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        if l > self.k {
            return Err(Error::ProjectionOrder { l, k: self.k });
        }
        let p = &self.mats[l];
        let n = values.len();
        let mut out = vec![[0.0; 3]; n];
        for (q, o) in out.iter_mut().enumerate() {
            for c in (0..3).filter(|&c| c != axis) {
                o[c] = (0..n).map(|r| p[(q, r)] * values[r][c]).sum();
            }
        }
        Ok(out)
    }

    /// `(I - Pi) values` for the given order; the identity for plain upwinding.
    pub fn residual(&self, order: FacetOrder, axis: usize, values: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        match order {
            FacetOrder::StandardUpwind => Ok(values.to_vec()),
            FacetOrder::Projected(l) => {
                let p = self.project(l, axis, values)?;
                Ok(values.iter().zip(&p).map(|(v, q)| [v[0] - q[0], v[1] - q[1], v[2] - q[2]]).collect())
            }
        }
    }
}

/// Projection of sampled tangential values on facet `facet` onto `P^l`.
pub fn facet_project(
    disc: &Discretization,
    proj: &FacetProjector,
    l: usize,
    facet: usize,
    values: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>> {
    let f = disc.mesh.facets.get(facet).ok_or(Error::InvalidFacet(facet))?;
    proj.project(l, f.axis, values)
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Square root of the domain average of `|u|^2`.
pub fn velocity_scale(disc: &Discretization, u: &[f64]) -> f64 {
    let w = disc.vol_weights();
    let s: f64 = (0..disc.mesh.n_elements())
        .map(|e| disc.v_values(e, u).iter().zip(&w).map(|(v, wq)| wq * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sum::<f64>())
        .sum();
    (s / disc.mesh.domain_volume()).sqrt()
}

/// Jump indicator on one facet, using `current` inside `(I - Pi)`.
/// `scale` is the velocity scale of the stagnation cut-off.
pub fn compute_eta_scaled(
    disc: &Discretization,
    proj: &FacetProjector,
    u: &[f64],
    inflow: &InflowData,
    facet: usize,
    current: FacetOrder,
    scale: f64,
) -> Result<f64> {
    let f = disc.mesh.facets.get(facet).ok_or(Error::InvalidFacet(facet))?;
    if !f.tag.in_interior_set() {
        return Err(Error::InvalidParameter(format!("facet {facet} is not in the interior set")));
    }
    let tr = facet_traces(disc, u, inflow, facet);
    let jump: Vec<[f64; 3]> = tr.inner.iter().zip(&tr.outer).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).collect();
    let res = proj.residual(current, f.axis, &jump)?;
    let w = &disc.quad.facet_w;
    let num: f64 = res.iter().zip(w).map(|(r, wq)| wq * norm3(r)).sum();
    let den: f64 = tr
        .inner
        .iter()
        .zip(&tr.outer)
        .zip(w)
        .map(|((a, b), wq)| wq * 0.5 * norm3(&[a[0] + b[0], a[1] + b[1], a[2] + b[2]]))
        .sum();
    // weights above are on the reference facet, so the measure factor is 1
    if den <= 1e-12 * scale {
        return Ok(0.0);
    }
    Ok(num / den)
}

pub fn compute_eta(
    disc: &Discretization,
    proj: &FacetProjector,
    u: &[f64],
    inflow: &InflowData,
    facet: usize,
    current: FacetOrder,
) -> Result<f64> {
    let scale = velocity_scale(disc, u);
    compute_eta_scaled(disc, proj, u, inflow, facet, current, scale)
}

/// Recomputes every facet order from `eta` evaluated with the previous orders.
pub fn update_order_field(
    disc: &Discretization,
    proj: &FacetProjector,
    u: &[f64],
    inflow: &InflowData,
    thresholds: &EtaThresholds,
    previous: &OrderField,
) -> Result<OrderField> {
    if thresholds.k() != disc.k() {
        return Err(Error::InvalidParameter("threshold ladder does not match k".into()));
    }
    let scale = velocity_scale(disc, u);
    let mut entries = previous.entries.clone();
    for (g, e) in entries.iter_mut().enumerate() {
        if let Some(cur) = e {
            let eta = compute_eta_scaled(disc, proj, u, inflow, g, *cur, scale)?;
            *e = Some(thresholds.classify(eta));
        }
    }
    Ok(OrderField { entries, cadence: previous.cadence, refresh_count: previous.refresh_count + 1 })
}
