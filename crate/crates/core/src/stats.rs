//! Energies, running statistics at probe points, wall-unit profiles and
//! boundary-layer thicknesses.

use crate::error::{Error, Result};
use crate::fespace::Discretization;
use crate::mesh::FacetTag;

pub const KAPPA: f64 = 0.41;
pub const C_PLUS: f64 = 5.2;

/// `1/2 int |u|^2`.
pub fn kinetic_energy(disc: &Discretization, u: &[f64]) -> f64 {
    let w = disc.vol_weights();
    0.5 * (0..disc.mesh.n_elements())
        .map(|e| disc.v_values(e, u).iter().zip(&w).map(|(v, wq)| wq * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sum::<f64>())
        .sum::<f64>()
}

/// `int |grad_h u|^2`, element by element.
pub fn broken_h1_seminorm_sq(disc: &Discretization, u: &[f64]) -> f64 {
    let w = disc.vol_weights();
    let tab = &disc.tabs.v;
    let d = disc.dim();
    let mut s = 0.0;
    for e in 0..disc.mesh.n_elements() {
        let ul = disc.gather_v(e, u);
        for (q, wq) in w.iter().enumerate() {
            for c in 0..d {
                for a in 0..d {
                    let g: f64 = ul.iter().enumerate().map(|(i, x)| x * tab.grad(q, i, c)[a]).sum();
                    s += wq * g * g;
                }
            }
        }
    }
    s
}

/// `||u_h - u||_{L2}` against an analytic field, sampled with the volume rule.
pub fn l2_error(disc: &Discretization, u: &[f64], exact: &(dyn Fn(&[f64]) -> [f64; 3] + Sync)) -> f64 {
    let w = disc.vol_weights();
    let mut s = 0.0;
    for e in 0..disc.mesh.n_elements() {
        let vals = disc.v_values(e, u);
        for ((x, v), wq) in disc.vol_points(e).iter().zip(&vals).zip(&w) {
            let ex = exact(x);
            s += wq * (0..3).map(|c| (v[c] - ex[c]).powi(2)).sum::<f64>();
        }
    }
    s.sqrt()
}

/// `||p_h - p||_{L2}` for a broken `Q` field, both shifted to zero mean.
pub fn l2_error_mean_free(disc: &Discretization, p: &[f64], exact: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
    let w = disc.vol_weights();
    let nq = disc.spaces.q.len();
    let tab = &disc.tabs.q;
    let mut samples = Vec::new();
    for e in 0..disc.mesh.n_elements() {
        for (q, x) in disc.vol_points(e).iter().enumerate() {
            let ph: f64 = (0..nq).map(|i| p[e * nq + i] * tab.value(q, i)[0]).sum();
            samples.push((w[q], ph, exact(x)));
        }
    }
    let vol: f64 = samples.iter().map(|s| s.0).sum();
    let mh = samples.iter().map(|s| s.0 * s.1).sum::<f64>() / vol;
    let me = samples.iter().map(|s| s.0 * s.2).sum::<f64>() / vol;
    samples.iter().map(|(wq, a, b)| wq * ((a - mh) - (b - me)).powi(2)).sum::<f64>().sqrt()
}

/// Running means of `u` and `p` and co-moments of `u` at fixed probes inside
/// an averaging window. Probes can be grouped along a homogeneous direction.
/// The updates are Welford-style, so a constant signal keeps its mean exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct StatAccumulator {
    pub points: Vec<Vec<f64>>,
    pub t_start: f64,
    pub t_end: f64,
    /// Group id per probe for averaging over a homogeneous direction.
    pub groups: Option<Vec<usize>>,
    pub count: usize,
    mean_u: Vec<[f64; 3]>,
    comoment: Vec<[[f64; 3]; 3]>,
    mean_p: Vec<f64>,
}

impl StatAccumulator {
    pub fn new(points: Vec<Vec<f64>>, t_start: f64, t_end: f64) -> Self {
        let n = points.len();
        StatAccumulator {
            points,
            t_start,
            t_end,
            groups: None,
            count: 0,
            mean_u: vec![[0.0; 3]; n],
            comoment: vec![[[0.0; 3]; 3]; n],
            mean_p: vec![0.0; n],
        }
    }

    /// Averages over probes with equal group ids (homogeneous direction).
    pub fn with_groups(mut self, groups: Vec<usize>) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }

    /// Adds one sample if `t` lies in the window; returns whether it was taken.
    pub fn sample(&mut self, t: f64, u: &[[f64; 3]], p: &[f64]) -> bool {
        if !self.in_window(t) {
            return false;
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.points.len() {
            let d0 = [0, 1, 2].map(|a| u[i][a] - self.mean_u[i][a]);
            for a in 0..3 {
                self.mean_u[i][a] += d0[a] / n;
            }
            for a in 0..3 {
                for b in 0..3 {
                    self.comoment[i][a][b] += d0[a] * (u[i][b] - self.mean_u[i][b]);
                }
            }
            self.mean_p[i] += (p[i] - self.mean_p[i]) / n;
        }
        true
    }

    /// Samples a discrete velocity/pressure pair at the probes.
    pub fn sample_fields(&mut self, disc: &Discretization, t: f64, u: &[f64], p: &[f64]) -> bool {
        if !self.in_window(t) {
            return false;
        }
        let (uv, pv): (Vec<[f64; 3]>, Vec<f64>) = self
            .points
            .iter()
            .map(|x| {
                let (e, xi) = disc.locate(x);
                (disc.eval_v_local(e, &xi, u), disc.eval_q_local(e, &xi, p))
            })
            .unzip();
        self.sample(t, &uv, &pv)
    }

    pub fn mean_u(&self) -> Vec<[f64; 3]> {
        self.mean_u.clone()
    }

    /// `<u_a u_b>`.
    pub fn mean_uu(&self) -> Vec<[[f64; 3]; 3]> {
        let r = self.reynolds_stress();
        r.iter()
            .zip(&self.mean_u)
            .map(|(r, m)| {
                let mut o = [[0.0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        o[a][b] = r[a][b] + m[a] * m[b];
                    }
                }
                o
            })
            .collect()
    }

    pub fn mean_p(&self) -> Vec<f64> {
        self.mean_p.clone()
    }

    /// `<u'_a u'_b>` (population normalization).
    pub fn reynolds_stress(&self) -> Vec<[[f64; 3]; 3]> {
        let c = 1.0 / self.count.max(1) as f64;
        self.comoment.iter().map(|m| m.map(|r| r.map(|v| v * c))).collect()
    }

    /// Turbulent kinetic energy `1/2 (<u'u'> + <v'v'> + <w'w'>)`.
    pub fn tke(&self) -> Vec<f64> {
        self.reynolds_stress().iter().map(|r| 0.5 * (0..3).map(|a| r[a][a].max(0.0)).sum::<f64>()).collect()
    }

    /// Group averages of a per-probe quantity, ordered by group id.
    pub fn group_average<T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>>(
        &self,
        values: &[T],
    ) -> Vec<T> {
        let Some(groups) = &self.groups else { return values.to_vec() };
        let n = groups.iter().max().map_or(0, |m| m + 1);
        let mut sum = vec![T::default(); n];
        let mut cnt = vec![0usize; n];
        for (v, &g) in values.iter().zip(groups) {
            sum[g] = sum[g] + *v;
            cnt[g] += 1;
        }
        sum.iter().zip(&cnt).map(|(s, &c)| *s * (1.0 / c.max(1) as f64)).collect()
    }
}

/// Mean tangential velocity profile in wall units.
#[derive(Debug, Clone, PartialEq)]
pub struct WallProfile {
    pub n: Vec<f64>,
    pub u_tau: f64,
    pub n_plus: Vec<f64>,
    pub ut_plus: Vec<f64>,
    pub k_plus: Vec<f64>,
    pub uv_plus: Vec<f64>,
    pub kappa: f64,
    pub c_plus: f64,
    /// False when the wall shear vanishes and plus units are undefined.
    pub defined: bool,
}

impl WallProfile {
    /// Log-law reference `ln(n+)/kappa + C+`.
    pub fn log_law(&self, n_plus: f64) -> f64 {
        n_plus.ln() / self.kappa + self.c_plus
    }
}

/// Derivative at `x0` of the Lagrange interpolant through up to three samples.
pub fn one_sided_derivative(x: &[f64], y: &[f64], x0: f64) -> f64 {
    let m = x.len().min(3);
    let mut d = 0.0;
    for j in 0..m {
        let mut dl = 0.0;
        for i in 0..m {
            if i == j {
                continue;
            }
            let mut term = 1.0 / (x[j] - x[i]);
            for l in 0..m {
                if l != j && l != i {
                    term *= (x0 - x[l]) / (x[j] - x[l]);
                }
            }
            dl += term;
        }
        d += y[j] * dl;
    }
    d
}

/// Wall-unit profile from mean data on wall distances `n`. The wall shear
/// `nu d<u_t>/dn` is taken from `wall_shear` when given (e.g. from the
/// stress unknown), else from one-sided differentiation at `n = 0`.
pub fn wall_profile(n: &[f64], ut: &[f64], k: &[f64], uv: &[f64], wall_shear: Option<f64>, nu: f64) -> Result<WallProfile> {
    if n.len() != ut.len() || n.len() != k.len() || n.len() != uv.len() {
        return Err(Error::Profile("profile arrays differ in length".into()));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!("viscosity must be positive, got {nu}")));
    }
    let tau = match wall_shear {
        Some(t) => t.abs(),
        None => {
            if n.len() < 2 {
                return Err(Error::Profile("need at least two samples for the wall gradient".into()));
            }
            nu * one_sided_derivative(n, ut, 0.0).abs()
        }
    };
    let u_tau = tau.sqrt();
    let defined = u_tau > 0.0;
    let (n_plus, ut_plus, k_plus, uv_plus) = if defined {
        let u2 = u_tau * u_tau;
        (
            n.iter().map(|x| x * u_tau / nu).collect(),
            ut.iter().map(|x| x / u_tau).collect(),
            k.iter().map(|x| x / u2).collect(),
            uv.iter().map(|x| x / u2).collect(),
        )
    } else {
        let nan = vec![f64::NAN; n.len()];
        (nan.clone(), nan.clone(), nan.clone(), nan)
    };
    Ok(WallProfile { n: n.to_vec(), u_tau, n_plus, ut_plus, k_plus, uv_plus, kappa: KAPPA, c_plus: C_PLUS, defined })
}

/// Mean `|sigma_nt|` over all wall facets whose normal is along `axis`;
/// this is the wall shear `nu d u_t / dn` carried by the stress unknown.
pub fn wall_shear_from_sigma(disc: &Discretization, sigma: &[f64], axis: usize, tangent: usize) -> f64 {
    let ns = disc.spaces.sigma.len();
    let d = disc.dim();
    let mut total = 0.0;
    let mut area = 0.0;
    for f in disc.mesh.facets.iter().filter(|f| f.tag == FacetTag::Wall && f.axis == axis) {
        let tab = &disc.tabs.sigma_facet[f.owner_local];
        let fw = disc.facet_weights(axis);
        let s = &sigma[f.owner * ns..(f.owner + 1) * ns];
        let mut v = 0.0;
        for (q, wq) in fw.iter().enumerate() {
            let snt: f64 = s.iter().enumerate().map(|(i, c)| c * tab.value(q, i)[tangent * d + axis]).sum();
            v += wq * snt;
        }
        total += v.abs();
        area += f.measure;
    }
    if area > 0.0 {
        total / area
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thicknesses {
    pub delta_star: f64,
    pub theta: f64,
    /// `delta* / theta`; `None` when `theta = 0`.
    pub shape: Option<f64>,
    pub u_edge: f64,
    /// First sample reaching the edge fraction (default 99 %) of the maximum.
    pub edge_index: usize,
}

/// Displacement and momentum thickness of a sampled profile. The integrals
/// are exact for the piecewise linear interpolant of the samples.
pub fn boundary_layer_thicknesses(n: &[f64], u: &[f64]) -> Result<Thicknesses> {
    boundary_layer_thicknesses_with(n, u, 0.99)
}

/// As [`boundary_layer_thicknesses`], with the edge at the first sample
/// reaching `edge_fraction` of the maximum.
pub fn boundary_layer_thicknesses_with(n: &[f64], u: &[f64], edge_fraction: f64) -> Result<Thicknesses> {
    if !(edge_fraction > 0.0 && edge_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("edge fraction must lie in (0, 1], got {edge_fraction}")));
    }
    if n.len() != u.len() || n.len() < 2 {
        return Err(Error::Profile("need matching n/u arrays with at least two samples".into()));
    }
    let u_edge = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(u_edge > 0.0) {
        return Err(Error::Profile(format!("no positive edge velocity; profile: {u:?}")));
    }
    let edge_index = u.iter().position(|&v| v >= edge_fraction * u_edge).unwrap_or(u.len() - 1);
    let tol = 1e-12 * u_edge;
    if u[..=edge_index].windows(2).any(|w| w[1] < w[0] - tol) {
        let dump: Vec<String> = n.iter().zip(u).map(|(a, b)| format!("{a} {b}")).collect();
        return Err(Error::Profile(format!("profile is not monotone below the edge:\n{}", dump.join("\n"))));
    }
    let mut delta_star = 0.0;
    let mut theta = 0.0;
    for i in 0..n.len() - 1 {
        let h = n[i + 1] - n[i];
        let (a, b) = (u[i] / u_edge, u[i + 1] / u_edge);
        delta_star += h * (1.0 - 0.5 * (a + b));
        theta += h * (0.5 * (a + b) - (a * a + a * b + b * b) / 3.0);
    }
    let shape = (theta.abs() > 0.0).then(|| delta_star / theta);
    Ok(Thicknesses { delta_star, theta, shape, u_edge, edge_index })
}
