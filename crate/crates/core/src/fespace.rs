//! Element-local bases, DOF maps and quadrature tables for the seven spaces
//! of the hybrid mixed-stress method on axis-aligned boxes.
//!
//! Every local function is a product of one-dimensional polynomials in the
//! reference coordinates `xi in [0,1]^d`, attached to one or two tensor
//! components. Because the box map is a diagonal scaling, no Piola transform
//! is needed: a velocity facet DOF is the coefficient of `v . e_axis` on that
//! facet and is shared verbatim by both neighbors.
//!
//! Dimensions (total-degree convention, `P^k` = polynomials of total degree `<= k`):
//!
//! * `Q`     : `P^k` per element.
//! * `Qhat`  : `P^k(E)` per facet, zero on outlet facets.
//! * `V`     : component `i` in `P^k + xi_i * P~^k` (homogeneous degree `k`
//!             part), i.e. `{v in P^{k+1}: v . n in P^k(E)}`. Normal traces
//!             are `P^k(E)`, `div V = P^k`, and the interior DOFs are moments
//!             against `P^{k-1}^d`, which gives a commuting interpolant.
//! * `Vdisc` : the same local space without facet coupling.
//! * `Vhat`  : tangential `P^k(E)` vectors per facet.
//! * `Sigma` : trace-free matrices whose normal-tangential traces are in
//!             `P^k(E)`. Diagonal part: deviatoric `P^{k+1}`. Entry `(r, c)`,
//!             `r != c`: `P^k`, the degree-`k+1` Legendre products containing
//!             `xi_c`, and the degree-`k+2` ones at least quadratic in `xi_c`.
//!             The last group keeps the local hybrid problem free of
//!             spurious tangential modes on boxes.
//! * `W`     : skew-symmetric `P^k` matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{FacetTag, Mesh, Neighbor};
use crate::poly::{legendre, legendre_norm_sq, multi_indices, tensor_rule, Poly1, TensorPoly};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    V,
    Vhat,
    Sigma,
    W,
    Q,
    Qhat,
    Vdisc,
}

/// What to evaluate in [`Discretization::eval_basis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Value,
    Divergence,
    NormalTrace,
    TangentialTrace,
    NnTrace,
    NtTrace,
}

#[derive(Debug, Clone)]
pub struct Shape {
    pub poly: TensorPoly,
    /// `(flat component, weight)`; matrices use `r * d + c`.
    pub comps: Vec<(usize, f64)>,
    /// Local facet carrying this function, for facet spaces.
    pub facet: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LocalSpace {
    pub ncomp: usize,
    pub shapes: Vec<Shape>,
}

impl LocalSpace {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

/// Local spaces for a given dimension and order, plus the counts used by the DOF map.
#[derive(Debug, Clone)]
pub struct SpaceSet {
    pub dim: usize,
    pub k: usize,
    pub v: LocalSpace,
    pub vhat: LocalSpace,
    pub sigma: LocalSpace,
    pub w: LocalSpace,
    pub q: LocalSpace,
    pub qhat: LocalSpace,
    /// Scalar facet basis size, `dim P^k(E)`.
    pub n_facet_basis: usize,
    /// Velocity facet functions per element (`2d * n_facet_basis`).
    pub n_v_facet_local: usize,
    pub n_v_bubble_local: usize,
    pub facet_indices: Vec<Vec<usize>>,
}

fn facet_factors(d: usize, axis: usize, m: &[usize], normal: Poly1) -> TensorPoly {
    let mut factors = Vec::with_capacity(d);
    let mut ti = 0;
    for t in 0..d {
        if t == axis {
            factors.push(normal.clone());
        } else {
            factors.push(legendre(m[ti]));
            ti += 1;
        }
    }
    TensorPoly { factors }
}

impl SpaceSet {
    pub fn new(dim: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::UnsupportedOrder(k));
        }
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension {dim}")));
        }
        let d = dim;
        let facet_indices = multi_indices(d - 1, k);
        let nfb = facet_indices.len();

        let mut v = Vec::new();
        for lf in 0..2 * d {
            let (a, s) = (lf / 2, lf % 2);
            let normal = if s == 1 { Poly1::x() } else { Poly1::one_minus_x() };
            for m in &facet_indices {
                v.push(Shape { poly: facet_factors(d, a, m, normal.clone()), comps: vec![(a, 1.0)], facet: None });
            }
        }
        let bubble = Poly1(vec![0.0, 1.0, -1.0]);
        for b in 0..d {
            for g in multi_indices(d, k - 1) {
                let mut poly = TensorPoly::legendre(&g);
                poly.factors[b] = bubble.mul(&poly.factors[b]);
                v.push(Shape { poly, comps: vec![(b, 1.0)], facet: None });
            }
        }
        let n_v_facet_local = 2 * d * nfb;
        let n_v_bubble_local = v.len() - n_v_facet_local;

        let mut vhat = Vec::new();
        let mut qhat = Vec::new();
        for lf in 0..2 * d {
            let a = lf / 2;
            for t in (0..d).filter(|&t| t != a) {
                for m in &facet_indices {
                    vhat.push(Shape {
                        poly: facet_factors(d, a, m, Poly1::constant(1.0)),
                        comps: vec![(t, 1.0)],
                        facet: Some(lf),
                    });
                }
            }
            for m in &facet_indices {
                qhat.push(Shape {
                    poly: facet_factors(d, a, m, Poly1::constant(1.0)),
                    comps: vec![(0, 1.0)],
                    facet: Some(lf),
                });
            }
        }

        let q: Vec<Shape> = multi_indices(d, k)
            .iter()
            .map(|b| Shape { poly: TensorPoly::legendre(b), comps: vec![(0, 1.0)], facet: None })
            .collect();

        let mut w = Vec::new();
        for r in 0..d {
            for c in r + 1..d {
                for b in multi_indices(d, k) {
                    w.push(Shape {
                        poly: TensorPoly::legendre(&b),
                        comps: vec![(r * d + c, 1.0), (c * d + r, -1.0)],
                        facet: None,
                    });
                }
            }
        }

        let mut sigma = Vec::new();
        for m in 0..d - 1 {
            for b in multi_indices(d, k + 1) {
                sigma.push(Shape {
                    poly: TensorPoly::legendre(&b),
                    comps: vec![(m * d + m, 1.0), ((m + 1) * d + m + 1, -1.0)],
                    facet: None,
                });
            }
        }
        for r in 0..d {
            for c in 0..d {
                if r == c {
                    continue;
                }
                for b in multi_indices(d, k + 2) {
                    let total: usize = b.iter().sum();
                    if total <= k || (total == k + 1 && b[c] >= 1) || (total == k + 2 && b[c] >= 2) {
                        sigma.push(Shape { poly: TensorPoly::legendre(&b), comps: vec![(r * d + c, 1.0)], facet: None });
                    }
                }
            }
        }

        Ok(SpaceSet {
            dim,
            k,
            v: LocalSpace { ncomp: d, shapes: v },
            vhat: LocalSpace { ncomp: d, shapes: vhat },
            sigma: LocalSpace { ncomp: d * d, shapes: sigma },
            w: LocalSpace { ncomp: d * d, shapes: w },
            q: LocalSpace { ncomp: 1, shapes: q },
            qhat: LocalSpace { ncomp: 1, shapes: qhat },
            n_facet_basis: nfb,
            n_v_facet_local,
            n_v_bubble_local,
            facet_indices,
        })
    }

    pub fn local(&self, kind: SpaceKind) -> &LocalSpace {
        match kind {
            SpaceKind::V | SpaceKind::Vdisc => &self.v,
            SpaceKind::Vhat => &self.vhat,
            SpaceKind::Sigma => &self.sigma,
            SpaceKind::W => &self.w,
            SpaceKind::Q => &self.q,
            SpaceKind::Qhat => &self.qhat,
        }
    }

    /// Vhat functions per local facet.
    pub fn n_vhat_per_facet(&self) -> usize {
        (self.dim - 1) * self.n_facet_basis
    }

    /// Human-readable description of the polynomial convention in use.
    pub fn convention(&self) -> &'static str {
        "total-degree P^k; V = {v in P^{k+1}: v.n in P^k(E)} (BDFM-type), Sigma = trace-free P^{k+1} with nt-trace in P^k"
    }
}

/// Element-to-global maps and constrained index sets.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_v: usize,
    pub n_v_facet: usize,
    pub n_v_bubble: usize,
    pub n_vhat: usize,
    pub n_qhat: usize,
    pub n_sigma: usize,
    pub n_w: usize,
    pub n_q: usize,
    pub n_vdisc: usize,
    pub v: Vec<Vec<usize>>,
    pub vhat: Vec<Vec<usize>>,
    pub qhat: Vec<Vec<usize>>,
    pub v_dirichlet: Vec<bool>,
    pub vhat_dirichlet: Vec<bool>,
    pub qhat_fixed: Vec<bool>,
}

impl DofMap {
    pub fn build(mesh: &Mesh, spaces: &SpaceSet) -> Self {
        let d = mesh.dim;
        let nfb = spaces.n_facet_basis;
        let nvh = spaces.n_vhat_per_facet();
        let nb = spaces.n_v_bubble_local;
        let nf = mesh.n_facets();
        let ne = mesh.n_elements();
        let n_v_facet = nf * nfb;
        let mut v = Vec::with_capacity(ne);
        let mut vhat = Vec::with_capacity(ne);
        let mut qhat = Vec::with_capacity(ne);
        for e in 0..ne {
            let mut lv = Vec::with_capacity(spaces.v.len());
            let mut lvh = Vec::with_capacity(spaces.vhat.len());
            let mut lqh = Vec::with_capacity(spaces.qhat.len());
            for lf in 0..2 * d {
                let g = mesh.element_facets[e][lf];
                lv.extend((0..nfb).map(|j| g * nfb + j));
                lvh.extend((0..nvh).map(|j| g * nvh + j));
                lqh.extend((0..nfb).map(|j| g * nfb + j));
            }
            lv.extend((0..nb).map(|j| n_v_facet + e * nb + j));
            v.push(lv);
            vhat.push(lvh);
            qhat.push(lqh);
        }
        let mut v_dirichlet = vec![false; n_v_facet + ne * nb];
        let mut vhat_dirichlet = vec![false; nf * nvh];
        let mut qhat_fixed = vec![false; nf * nfb];
        for (g, f) in mesh.facets.iter().enumerate() {
            if f.tag.is_dirichlet() {
                v_dirichlet[g * nfb..(g + 1) * nfb].iter_mut().for_each(|x| *x = true);
                vhat_dirichlet[g * nvh..(g + 1) * nvh].iter_mut().for_each(|x| *x = true);
            }
            if f.tag == FacetTag::Outlet {
                qhat_fixed[g * nfb..(g + 1) * nfb].iter_mut().for_each(|x| *x = true);
            }
        }
        DofMap {
            n_v: n_v_facet + ne * nb,
            n_v_facet,
            n_v_bubble: ne * nb,
            n_vhat: nf * nvh,
            n_qhat: nf * nfb,
            n_sigma: ne * spaces.sigma.len(),
            n_w: ne * spaces.w.len(),
            n_q: ne * spaces.q.len(),
            n_vdisc: ne * spaces.v.len(),
            v,
            vhat,
            qhat,
            v_dirichlet,
            vhat_dirichlet,
            qhat_fixed,
        }
    }

    /// Condensed ("gDOF") count of the momentum step: velocity facet DOFs plus `Vhat`.
    pub fn condensed_count(&self) -> usize {
        self.n_v_facet + self.n_vhat
    }

    pub fn count(&self, kind: SpaceKind) -> usize {
        match kind {
            SpaceKind::V => self.n_v,
            SpaceKind::Vhat => self.n_vhat,
            SpaceKind::Sigma => self.n_sigma,
            SpaceKind::W => self.n_w,
            SpaceKind::Q => self.n_q,
            SpaceKind::Qhat => self.n_qhat,
            SpaceKind::Vdisc => self.n_vdisc,
        }
    }
}

/// Values and physical gradients of a local space at a set of points.
#[derive(Debug, Clone)]
pub struct Tab {
    pub npts: usize,
    pub nfun: usize,
    pub ncomp: usize,
    pub d: usize,
    pub val: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tab {
    pub fn build(shapes: &[Shape], ncomp: usize, pts: &[Vec<f64>], h: &[f64]) -> Self {
        let d = h.len();
        let nfun = shapes.len();
        let npts = pts.len();
        let mut val = vec![0.0; npts * nfun * ncomp];
        let mut grad = vec![0.0; npts * nfun * ncomp * d];
        for (q, xi) in pts.iter().enumerate() {
            for (i, s) in shapes.iter().enumerate() {
                let (v, g) = s.poly.eval_grad(xi);
                for &(c, wgt) in &s.comps {
                    let base = (q * nfun + i) * ncomp + c;
                    val[base] += wgt * v;
                    for a in 0..d {
                        grad[base * d + a] += wgt * g[a] / h[a];
                    }
                }
            }
        }
        Tab { npts, nfun, ncomp, d, val, grad }
    }

    #[inline]
    pub fn value(&self, q: usize, i: usize) -> &[f64] {
        let b = (q * self.nfun + i) * self.ncomp;
        &self.val[b..b + self.ncomp]
    }

    #[inline]
    pub fn grad(&self, q: usize, i: usize, c: usize) -> &[f64] {
        let b = ((q * self.nfun + i) * self.ncomp + c) * self.d;
        &self.grad[b..b + self.d]
    }

    /// Divergence of a vector function.
    pub fn div(&self, q: usize, i: usize) -> f64 {
        (0..self.d).map(|a| self.grad(q, i, a)[a]).sum()
    }

    /// Row-wise divergence of a matrix function.
    pub fn row_div(&self, q: usize, i: usize) -> Vec<f64> {
        let d = self.d;
        (0..d).map(|r| (0..d).map(|c| self.grad(q, i, r * d + c)[c]).sum()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub n1d: usize,
    /// Reference volume points and weights (weights sum to 1).
    pub vol_pts: Vec<Vec<f64>>,
    pub vol_w: Vec<f64>,
    /// Per local facet: reference points in element coordinates.
    pub facet_pts: Vec<Vec<Vec<f64>>>,
    /// Reference facet weights (sum to 1), shared by all facets.
    pub facet_w: Vec<f64>,
}

impl Quadrature {
    /// Gauss rule exact for the convection integrand (degree `3k + 2`) and
    /// the stress mass (degree `2k + 4`).
    pub fn new(d: usize, k: usize) -> Self {
        Self::with_points(d, ((3 * k + 4) / 2).max(k + 3))
    }

    pub fn with_points(d: usize, n1d: usize) -> Self {
        let (vol_pts, vol_w) = tensor_rule(d, n1d);
        let (fpts, facet_w) = tensor_rule(d - 1, n1d);
        let facet_pts = (0..2 * d)
            .map(|lf| {
                let (a, s) = (lf / 2, lf % 2);
                fpts.iter()
                    .map(|tp| {
                        let mut p = Vec::with_capacity(d);
                        let mut ti = 0;
                        for t in 0..d {
                            if t == a {
                                p.push(s as f64);
                            } else {
                                p.push(tp[ti]);
                                ti += 1;
                            }
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        Quadrature { n1d, vol_pts, vol_w, facet_pts, facet_w }
    }
}

/// Tabulations on the (shared) reference element.
#[derive(Debug, Clone)]
pub struct Tables {
    pub v: Tab,
    pub sigma: Tab,
    pub w: Tab,
    pub q: Tab,
    /// Per local facet, all functions of the element space at that facet's points.
    pub v_facet: Vec<Tab>,
    pub sigma_facet: Vec<Tab>,
    /// Per local facet, only the functions supported on it.
    pub vhat_facet: Vec<Tab>,
    pub qhat_facet: Vec<Tab>,
    /// Finer rule for projecting non-polynomial data.
    pub proj_quad: Quadrature,
    pub proj_v: Tab,
    pub proj_qhat_facet: Vec<Tab>,
}

/// Mesh, spaces, DOF maps, quadrature and tabulations bundled together.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub spaces: SpaceSet,
    pub dofs: DofMap,
    pub quad: Quadrature,
    pub tabs: Tables,
}

/// A physical vector field `x -> u(x)`; unused trailing components ignored.
pub type VectorFn<'a> = &'a (dyn Fn(&[f64]) -> [f64; 3] + Sync);
pub type ScalarFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Builds all spaces and DOF maps for `mesh` at order `k`.
pub fn build_spaces(mesh: &Mesh, k: usize) -> Result<Discretization> {
    let spaces = SpaceSet::new(mesh.dim, k)?;
    let dofs = DofMap::build(mesh, &spaces);
    let quad = Quadrature::new(mesh.dim, k);
    let proj_quad = Quadrature::with_points(mesh.dim, quad.n1d.max(k + 6));
    let h = &mesh.h;
    let nvh = spaces.n_vhat_per_facet();
    let nfb = spaces.n_facet_basis;
    let tabs = Tables {
        v: Tab::build(&spaces.v.shapes, spaces.v.ncomp, &quad.vol_pts, h),
        sigma: Tab::build(&spaces.sigma.shapes, spaces.sigma.ncomp, &quad.vol_pts, h),
        w: Tab::build(&spaces.w.shapes, spaces.w.ncomp, &quad.vol_pts, h),
        q: Tab::build(&spaces.q.shapes, 1, &quad.vol_pts, h),
        v_facet: quad.facet_pts.iter().map(|p| Tab::build(&spaces.v.shapes, spaces.v.ncomp, p, h)).collect(),
        sigma_facet: quad
            .facet_pts
            .iter()
            .map(|p| Tab::build(&spaces.sigma.shapes, spaces.sigma.ncomp, p, h))
            .collect(),
        vhat_facet: (0..2 * mesh.dim)
            .map(|lf| Tab::build(&spaces.vhat.shapes[lf * nvh..(lf + 1) * nvh], mesh.dim, &quad.facet_pts[lf], h))
            .collect(),
        qhat_facet: (0..2 * mesh.dim)
            .map(|lf| Tab::build(&spaces.qhat.shapes[lf * nfb..(lf + 1) * nfb], 1, &quad.facet_pts[lf], h))
            .collect(),
        proj_v: Tab::build(&spaces.v.shapes, spaces.v.ncomp, &proj_quad.vol_pts, h),
        proj_qhat_facet: (0..2 * mesh.dim)
            .map(|lf| Tab::build(&spaces.qhat.shapes[lf * nfb..(lf + 1) * nfb], 1, &proj_quad.facet_pts[lf], h))
            .collect(),
        proj_quad,
    };
    Ok(Discretization { mesh: mesh.clone(), spaces, dofs, quad, tabs })
}

impl Discretization {
    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    pub fn k(&self) -> usize {
        self.spaces.k
    }

    /// Physical volume quadrature weights.
    pub fn vol_weights(&self) -> Vec<f64> {
        let jac = self.mesh.element_volume();
        self.quad.vol_w.iter().map(|w| w * jac).collect()
    }

    pub fn facet_weights(&self, axis: usize) -> Vec<f64> {
        let jac = self.mesh.facet_measure(axis);
        self.quad.facet_w.iter().map(|w| w * jac).collect()
    }

    /// Outward unit normal of local facet `lf` as `(axis, sign)`.
    pub fn local_normal(lf: usize) -> (usize, f64) {
        (lf / 2, if lf % 2 == 1 { 1.0 } else { -1.0 })
    }

    /// Gathers the local coefficients of a global `V` vector on element `e`.
    pub fn gather_v(&self, e: usize, u: &[f64]) -> Vec<f64> {
        self.dofs.v[e].iter().map(|&g| u[g]).collect()
    }

    /// Evaluates a `V` field on element `e` at its volume quadrature points.
    pub fn v_values(&self, e: usize, u: &[f64]) -> Vec<[f64; 3]> {
        let ul = self.gather_v(e, u);
        let tab = &self.tabs.v;
        let d = self.dim();
        (0..tab.npts)
            .map(|q| {
                let mut out = [0.0; 3];
                for (i, c) in ul.iter().enumerate() {
                    let v = tab.value(q, i);
                    for a in 0..d {
                        out[a] += c * v[a];
                    }
                }
                out
            })
            .collect()
    }

    /// Physical points of the volume quadrature on element `e`.
    pub fn vol_points(&self, e: usize) -> Vec<Vec<f64>> {
        self.quad.vol_pts.iter().map(|xi| self.mesh.map_point(e, xi)).collect()
    }

    /// Physical points of the quadrature on global facet `g` (from the owner side).
    pub fn facet_points(&self, g: usize) -> Vec<Vec<f64>> {
        let f = &self.mesh.facets[g];
        self.quad.facet_pts[f.owner_local].iter().map(|xi| self.mesh.map_point(f.owner, xi)).collect()
    }

    /// Pointwise divergence of a global `V` field at all volume quadrature points.
    pub fn max_divergence(&self, u: &[f64]) -> f64 {
        let tab = &self.tabs.v;
        (0..self.mesh.n_elements())
            .map(|e| {
                let ul = self.gather_v(e, u);
                (0..tab.npts)
                    .map(|q| ul.iter().enumerate().map(|(i, c)| c * tab.div(q, i)).sum::<f64>().abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Evaluates every local basis function of `kind` at reference points of
    /// element `element`. Returns `[basis][point][component]`.
    pub fn eval_basis(
        &self,
        kind: SpaceKind,
        element: usize,
        points: &[Vec<f64>],
        what: EvalKind,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        if element >= self.mesh.n_elements() {
            return Err(Error::InvalidParameter(format!("element {element} out of range")));
        }
        let d = self.dim();
        let space = self.spaces.local(kind);
        let tab = Tab::build(&space.shapes, space.ncomp, points, &self.mesh.h);
        let facet_of = |p: &[f64]| -> Result<usize> {
            for a in 0..d {
                if p[a].abs() < 1e-14 {
                    return Ok(2 * a);
                }
                if (p[a] - 1.0).abs() < 1e-14 {
                    return Ok(2 * a + 1);
                }
            }
            Err(Error::TraceAtInteriorPoint)
        };
        let mut out = vec![Vec::with_capacity(points.len()); space.len()];
        for (q, p) in points.iter().enumerate() {
            let normal = match what {
                EvalKind::Value | EvalKind::Divergence => None,
                _ => Some(Self::local_normal(facet_of(p)?)),
            };
            for (i, o) in out.iter_mut().enumerate() {
                let val = tab.value(q, i);
                let r = match (what, normal) {
                    (EvalKind::Value, _) => val.to_vec(),
                    (EvalKind::Divergence, _) => {
                        if space.ncomp == d {
                            vec![tab.div(q, i)]
                        } else if space.ncomp == d * d {
                            tab.row_div(q, i)
                        } else {
                            return Err(Error::InvalidParameter("divergence of a scalar".into()));
                        }
                    }
                    (EvalKind::NormalTrace, Some((a, s))) => vec![s * val[a]],
                    (EvalKind::TangentialTrace, Some((a, _))) => {
                        (0..d).map(|t| if t == a { 0.0 } else { val[t] }).collect()
                    }
                    (EvalKind::NnTrace, Some((a, _))) => vec![val[a * d + a]],
                    (EvalKind::NtTrace, Some((a, s))) => {
                        (0..d).map(|t| if t == a { 0.0 } else { s * val[t * d + a] }).collect()
                    }
                    _ => unreachable!(),
                };
                o.push(r);
            }
        }
        Ok(out)
    }

    /// Local (reference-element) mass matrix of a volume space.
    pub fn local_mass(&self, kind: SpaceKind) -> DMatrix<f64> {
        let tab = match kind {
            SpaceKind::V | SpaceKind::Vdisc => &self.tabs.v,
            SpaceKind::Sigma => &self.tabs.sigma,
            SpaceKind::W => &self.tabs.w,
            SpaceKind::Q => &self.tabs.q,
            SpaceKind::Vhat | SpaceKind::Qhat => panic!("facet space has no volume mass"),
        };
        let w = self.vol_weights();
        let n = tab.nfun;
        let mut m = DMatrix::zeros(n, n);
        for (q, wq) in w.iter().enumerate() {
            for i in 0..n {
                let vi = tab.value(q, i);
                for j in i..n {
                    let vj = tab.value(q, j);
                    let s: f64 = vi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    m[(i, j)] += wq * s;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    /// Facet-wise L2 projection of the normal component (along `+e_axis`) of
    /// `field` onto `P^k(E)`: the velocity facet DOFs of facet `g`.
    pub fn project_normal_trace(&self, g: usize, field: VectorFn) -> Vec<f64> {
        let f = &self.mesh.facets[g];
        let a = f.axis;
        let tab = &self.tabs.proj_qhat_facet[f.owner_local];
        let pq = &self.tabs.proj_quad;
        let pts: Vec<Vec<f64>> = pq.facet_pts[f.owner_local].iter().map(|xi| self.mesh.map_point(f.owner, xi)).collect();
        let nfb = self.spaces.n_facet_basis;
        let norms = self.facet_basis_norms();
        (0..nfb)
            .map(|j| {
                let s: f64 = pts
                    .iter()
                    .enumerate()
                    .map(|(q, x)| pq.facet_w[q] * field(x)[a] * tab.value(q, j)[0])
                    .sum();
                s / norms[j]
            })
            .collect()
    }

    /// Facet-wise L2 projection of the tangential part of `field` onto `Vhat(E)`.
    pub fn project_tangential_trace(&self, g: usize, field: VectorFn) -> Vec<f64> {
        let f = &self.mesh.facets[g];
        let a = f.axis;
        let tab = &self.tabs.proj_qhat_facet[f.owner_local];
        let pq = &self.tabs.proj_quad;
        let pts: Vec<Vec<f64>> = pq.facet_pts[f.owner_local].iter().map(|xi| self.mesh.map_point(f.owner, xi)).collect();
        let nfb = self.spaces.n_facet_basis;
        let norms = self.facet_basis_norms();
        let vals: Vec<[f64; 3]> = pts.iter().map(|x| field(x)).collect();
        let mut out = Vec::with_capacity(self.spaces.n_vhat_per_facet());
        for t in (0..self.dim()).filter(|&t| t != a) {
            for j in 0..nfb {
                let s: f64 =
                    vals.iter().enumerate().map(|(q, v)| pq.facet_w[q] * v[t] * tab.value(q, j)[0]).sum();
                out.push(s / norms[j]);
            }
        }
        out
    }

    /// Reference-facet `L2` norms squared of the scalar facet basis.
    pub fn facet_basis_norms(&self) -> Vec<f64> {
        self.spaces.facet_indices.iter().map(|m| m.iter().map(|&n| legendre_norm_sq(n)).product()).collect()
    }

    /// Commuting projection into `V`: facet-wise `L2` projection of normal
    /// traces plus interior moments against `P^{k-1}^d`. Fields already in
    /// `V` are reproduced, and `div` of the result is the `L2` projection of
    /// `div field` onto `Q`.
    pub fn project_v(&self, field: VectorFn) -> Result<Vec<f64>> {
        let d = self.dim();
        let nfb = self.spaces.n_facet_basis;
        let mut u = vec![0.0; self.dofs.n_v];
        for g in 0..self.mesh.n_facets() {
            let c = self.project_normal_trace(g, field);
            u[g * nfb..(g + 1) * nfb].copy_from_slice(&c);
        }
        let nb = self.spaces.n_v_bubble_local;
        if nb == 0 {
            return Ok(u);
        }
        // interior test functions: e_b L_g, |g| <= k-1
        let tests: Vec<Shape> = (0..d)
            .flat_map(|b| {
                multi_indices(d, self.k() - 1).into_iter().map(move |g| Shape {
                    poly: TensorPoly::legendre(&g),
                    comps: vec![(b, 1.0)],
                    facet: None,
                })
            })
            .collect();
        let ttab = Tab::build(&tests, d, &self.tabs.proj_quad.vol_pts, &self.mesh.h);
        let w = &self.tabs.proj_quad.vol_w;
        let nfl = self.spaces.n_v_facet_local;
        let vtab = &self.tabs.proj_v;
        let mut a = DMatrix::zeros(nb, nb);
        for (q, wq) in w.iter().enumerate() {
            for i in 0..nb {
                let ti = ttab.value(q, i);
                for j in 0..nb {
                    let vj = vtab.value(q, nfl + j);
                    a[(i, j)] += wq * (0..d).map(|c| ti[c] * vj[c]).sum::<f64>();
                }
            }
        }
        let lu = a.lu();
        for e in 0..self.mesh.n_elements() {
            let pts: Vec<Vec<f64>> = self.tabs.proj_quad.vol_pts.iter().map(|xi| self.mesh.map_point(e, xi)).collect();
            let fvals: Vec<[f64; 3]> = pts.iter().map(|x| field(x)).collect();
            let ul = self.gather_v(e, &u);
            let mut rhs = DVector::zeros(nb);
            for (q, wq) in w.iter().enumerate() {
                let mut fac = [0.0; 3];
                for (i, c) in ul.iter().take(nfl).enumerate() {
                    let v = vtab.value(q, i);
                    for cc in 0..d {
                        fac[cc] += c * v[cc];
                    }
                }
                for i in 0..nb {
                    let ti = ttab.value(q, i);
                    rhs[i] += wq * (0..d).map(|c| ti[c] * (fvals[q][c] - fac[c])).sum::<f64>();
                }
            }
            let x = lu.solve(&rhs).ok_or_else(|| Error::SingularElementBlock {
                element: e,
                what: "interior moment matrix of V".into(),
            })?;
            let base = self.dofs.n_v_facet + e * nb;
            u[base..base + nb].copy_from_slice(x.as_slice());
        }
        Ok(u)
    }

    /// Element-wise `L2` projection into a broken volume space
    /// (`Q`, `W`, `Sigma`, `Vdisc`). `field` returns the flat components.
    pub fn project_broken(&self, kind: SpaceKind, field: &(dyn Fn(&[f64]) -> Vec<f64> + Sync)) -> Result<Vec<f64>> {
        let tab = match kind {
            SpaceKind::Q => &self.tabs.q,
            SpaceKind::W => &self.tabs.w,
            SpaceKind::Sigma => &self.tabs.sigma,
            SpaceKind::Vdisc => &self.tabs.v,
            _ => return Err(Error::InvalidParameter(format!("{kind:?} is not a broken volume space"))),
        };
        let n = tab.nfun;
        let chol = self.local_mass(kind).cholesky().ok_or_else(|| Error::SingularElementBlock {
            element: 0,
            what: format!("{kind:?} mass matrix"),
        })?;
        let w = self.vol_weights();
        let mut out = vec![0.0; n * self.mesh.n_elements()];
        for e in 0..self.mesh.n_elements() {
            let pts = self.vol_points(e);
            let mut rhs = DVector::zeros(n);
            for (q, x) in pts.iter().enumerate() {
                let fv = field(x);
                for i in 0..n {
                    let v = tab.value(q, i);
                    rhs[i] += w[q] * v.iter().zip(&fv).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let c = chol.solve(&rhs);
            out[e * n..(e + 1) * n].copy_from_slice(c.as_slice());
        }
        Ok(out)
    }

    /// Projects a field into any of the spaces. `V` uses the commuting
    /// projection [`Self::project_v`]; facet spaces use facet-wise `L2`.
    pub fn l2_project(&self, kind: SpaceKind, field: &(dyn Fn(&[f64]) -> Vec<f64> + Sync)) -> Result<Vec<f64>> {
        let as_vec = |x: &[f64]| {
            let v = field(x);
            let mut o = [0.0; 3];
            for (i, c) in v.iter().take(3).enumerate() {
                o[i] = *c;
            }
            o
        };
        match kind {
            SpaceKind::V => self.project_v(&as_vec),
            SpaceKind::Vhat => {
                let nvh = self.spaces.n_vhat_per_facet();
                let mut out = vec![0.0; self.dofs.n_vhat];
                for g in 0..self.mesh.n_facets() {
                    out[g * nvh..(g + 1) * nvh].copy_from_slice(&self.project_tangential_trace(g, &as_vec));
                }
                Ok(out)
            }
            SpaceKind::Qhat => {
                let nfb = self.spaces.n_facet_basis;
                let mut out = vec![0.0; self.dofs.n_qhat];
                for g in 0..self.mesh.n_facets() {
                    // reuse the normal-trace projector on a field carrying the scalar in every slot
                    let s = |x: &[f64]| {
                        let v = field(x)[0];
                        [v, v, v]
                    };
                    out[g * nfb..(g + 1) * nfb].copy_from_slice(&self.project_normal_trace(g, &s));
                }
                Ok(out)
            }
            _ => self.project_broken(kind, field),
        }
    }

    /// Global element-side neighbor info of a facet: `(element, local facet)` pairs.
    pub fn facet_sides(&self, g: usize) -> Vec<(usize, usize)> {
        let f = &self.mesh.facets[g];
        let mut s = vec![(f.owner, f.owner_local)];
        if let (Neighbor::Element(n), Some(nl)) = (f.neighbor, f.neighbor_local) {
            s.push((n, nl));
        }
        s
    }

    /// Element containing physical point `x` and the reference coordinates there.
    pub fn locate(&self, x: &[f64]) -> (usize, Vec<f64>) {
        let m = &self.mesh;
        let mut idx = Vec::with_capacity(m.dim);
        let mut xi = Vec::with_capacity(m.dim);
        for a in 0..m.dim {
            let t = (x[a] - m.lower[a]) / m.h[a];
            let i = (t.floor().max(0.0) as usize).min(m.cells[a] - 1);
            idx.push(i);
            xi.push(t - i as f64);
        }
        (m.element_id(&idx), xi)
    }

    /// Value of a `V` field at reference point `xi` of element `e`.
    pub fn eval_v_local(&self, e: usize, xi: &[f64], u: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, s) in self.spaces.v.shapes.iter().enumerate() {
            let c = u[self.dofs.v[e][i]];
            if c == 0.0 {
                continue;
            }
            let v = s.poly.eval(xi);
            for &(comp, w) in &s.comps {
                out[comp] += c * w * v;
            }
        }
        out
    }

    /// Divergence of a `V` field at reference point `xi` of element `e`.
    pub fn eval_div_local(&self, e: usize, xi: &[f64], u: &[f64]) -> f64 {
        let h = &self.mesh.h;
        let mut out = 0.0;
        for (i, s) in self.spaces.v.shapes.iter().enumerate() {
            let c = u[self.dofs.v[e][i]];
            if c == 0.0 {
                continue;
            }
            let (_, g) = s.poly.eval_grad(xi);
            for &(comp, w) in &s.comps {
                out += c * w * g[comp] / h[comp];
            }
        }
        out
    }

    /// Value of a `V` field at a physical point.
    pub fn eval_v_point(&self, u: &[f64], x: &[f64]) -> [f64; 3] {
        let (e, xi) = self.locate(x);
        self.eval_v_local(e, &xi, u)
    }

    /// Value of a `Q` field at reference point `xi` of element `e`.
    pub fn eval_q_local(&self, e: usize, xi: &[f64], p: &[f64]) -> f64 {
        let n = self.spaces.q.len();
        self.spaces.q.shapes.iter().enumerate().map(|(i, s)| p[e * n + i] * s.poly.eval(xi)).sum()
    }

    /// Total dimension of each space and the condensed count, for reports.
    pub fn report(&self) -> String {
        let s = &self.spaces;
        let dm = &self.dofs;
        format!(
            "k = {} ({})\nlocal: V {} (facet {}, bubble {}), Vhat {}, Sigma {}, W {}, Q {}, Qhat {}\n\
             global: V {}, Vhat {}, Sigma {}, W {}, Q {}, Qhat {}, Vdisc {}\n\
             condensed momentum unknowns (gDOF): {}",
            s.k,
            s.convention(),
            s.v.len(),
            s.n_v_facet_local,
            s.n_v_bubble_local,
            s.vhat.len(),
            s.sigma.len(),
            s.w.len(),
            s.q.len(),
            s.qhat.len(),
            dm.n_v,
            dm.n_vhat,
            dm.n_sigma,
            dm.n_w,
            dm.n_q,
            dm.n_qhat,
            dm.n_vdisc,
            dm.condensed_count()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, MeshSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(n: usize, k: usize) -> Discretization {
        build_spaces(&build_box_mesh(&MeshSpec::unit_walls(2, n)).unwrap(), k).unwrap()
    }

    #[test]
    fn dimensions_total_degree() {
        let d = disc(1, 1);
        assert_eq!(d.spaces.q.len(), 3);
        assert_eq!(d.spaces.v.len(), 10);
        let d3 = disc(1, 3);
        assert_eq!((d3.spaces.v.len(), d3.spaces.vhat.len(), d3.spaces.sigma.len(), d3.spaces.w.len()), (28, 16, 51, 10));
        for k in 1..=3 {
            let d = disc(2, k);
            assert_eq!(d.dofs.n_vhat, d.mesh.n_facets() * (k + 1));
            assert_eq!(d.dofs.condensed_count(), d.dofs.n_v_facet + d.dofs.n_vhat);
        }
        assert!(matches!(SpaceSet::new(2, 0), Err(Error::UnsupportedOrder(0))));
        assert!(d.report().contains("total-degree"));
    }

    #[test]
    fn space_invariants() {
        for dim in [2, 3] {
            for k in 1..=3 {
                for n in [1, 2] {
                    if dim == 3 && (k == 3 || n == 2) {
                        continue;
                    }
                    let mesh = build_box_mesh(&MeshSpec::unit_walls(dim, n)).unwrap();
                    let dd = build_spaces(&mesh, k).unwrap();
                    check_invariants(&dd);
                }
            }
        }
    }

    fn check_invariants(dd: &Discretization) {
        let d = dd.dim();
        let w = dd.vol_weights();
        let tq = &dd.tabs.q;
        let mq = dd.local_mass(SpaceKind::Q).cholesky().unwrap();
        // div V in Q
        for i in 0..dd.tabs.v.nfun {
            let div: Vec<f64> = (0..tq.npts).map(|q| dd.tabs.v.div(q, i)).collect();
            let mut rhs = DVector::zeros(tq.nfun);
            for q in 0..tq.npts {
                for j in 0..tq.nfun {
                    rhs[j] += w[q] * div[q] * tq.value(q, j)[0];
                }
            }
            let c = mq.solve(&rhs);
            for q in 0..tq.npts {
                let p: f64 = (0..tq.nfun).map(|j| c[j] * tq.value(q, j)[0]).sum();
                assert!((p - div[q]).abs() < 1e-13 * (1.0 + div[q].abs()), "div V not in Q");
            }
        }
        // Sigma trace-free, nt trace of degree <= k
        let norms = dd.facet_basis_norms();
        for i in 0..dd.tabs.sigma.nfun {
            for q in 0..dd.tabs.sigma.npts {
                let v = dd.tabs.sigma.value(q, i);
                let tr: f64 = (0..d).map(|a| v[a * d + a]).sum();
                assert!(tr.abs() < 1e-13);
            }
            for lf in 0..2 * d {
                let a = lf / 2;
                let st = &dd.tabs.sigma_facet[lf];
                let ft = &dd.tabs.qhat_facet[lf];
                for t in (0..d).filter(|&t| t != a) {
                    let vals: Vec<f64> = (0..st.npts).map(|q| st.value(q, i)[t * d + a]).collect();
                    let coef: Vec<f64> = (0..ft.nfun)
                        .map(|j| (0..st.npts).map(|q| dd.quad.facet_w[q] * vals[q] * ft.value(q, j)[0]).sum::<f64>() / norms[j])
                        .collect();
                    let res: f64 = (0..st.npts)
                        .map(|q| {
                            let p: f64 = (0..ft.nfun).map(|j| coef[j] * ft.value(q, j)[0]).sum();
                            dd.quad.facet_w[q] * (p - vals[q]).powi(2)
                        })
                        .sum();
                    assert!(res.sqrt() < 1e-12, "nt trace degree too high");
                }
            }
        }
        // W skew
        for i in 0..dd.tabs.w.nfun {
            for q in 0..dd.tabs.w.npts {
                let v = dd.tabs.w.value(q, i);
                for r in 0..d {
                    for c in 0..d {
                        assert_eq!(v[r * d + c] + v[c * d + r], 0.0);
                    }
                }
            }
        }
        // Vhat tangential
        for lf in 0..2 * d {
            let t = &dd.tabs.vhat_facet[lf];
            for q in 0..t.npts {
                for i in 0..t.nfun {
                    assert_eq!(t.value(q, i)[lf / 2], 0.0);
                }
            }
        }
        for kind in [SpaceKind::V, SpaceKind::Sigma, SpaceKind::W, SpaceKind::Q] {
            assert!(dd.local_mass(kind).cholesky().is_some(), "{kind:?} mass not SPD");
        }
        // conformity of V facet DOFs
        for f in &dd.mesh.facets {
            if let Neighbor::Element(nb) = f.neighbor {
                let nl = f.neighbor_local.unwrap();
                let nfb = dd.spaces.n_facet_basis;
                assert_eq!(
                    dd.dofs.v[f.owner][f.owner_local * nfb..(f.owner_local + 1) * nfb],
                    dd.dofs.v[nb][nl * nfb..(nl + 1) * nfb]
                );
            }
        }
    }

    #[test]
    fn lowest_order_normal_trace() {
        let d = disc(1, 1);
        let pts: Vec<Vec<f64>> = vec![vec![1.0, 0.2], vec![1.0, 0.9]];
        let nt = d.eval_basis(SpaceKind::V, 0, &pts, EvalKind::NormalTrace).unwrap();
        // local facet 1 (x = 1), constant member
        let f1 = d.spaces.n_facet_basis;
        for q in 0..2 {
            assert!((nt[f1][q][0] - 1.0).abs() < 1e-15);
        }
        for lf in [0, 2, 3] {
            let pts: Vec<Vec<f64>> = match lf {
                0 => vec![vec![0.0, 0.4]],
                2 => vec![vec![0.4, 0.0]],
                _ => vec![vec![0.4, 1.0]],
            };
            let nt = d.eval_basis(SpaceKind::V, 0, &pts, EvalKind::NormalTrace).unwrap();
            assert!(nt[f1][0][0].abs() < 1e-15);
        }
        assert!(matches!(
            d.eval_basis(SpaceKind::V, 0, &[vec![0.5, 0.5]], EvalKind::NormalTrace),
            Err(Error::TraceAtInteriorPoint)
        ));
    }

    #[test]
    fn trace_split_identities() {
        let d = disc(1, 2);
        let pts = vec![vec![0.3, 1.0], vec![0.0, 0.7]];
        let val = d.eval_basis(SpaceKind::Sigma, 0, &pts, EvalKind::Value).unwrap();
        let nn = d.eval_basis(SpaceKind::Sigma, 0, &pts, EvalKind::NnTrace).unwrap();
        let nt = d.eval_basis(SpaceKind::Sigma, 0, &pts, EvalKind::NtTrace).unwrap();
        let normals = [[0.0, 1.0], [-1.0, 0.0]];
        for i in 0..val.len() {
            for (q, n) in normals.iter().enumerate() {
                let s = &val[i][q];
                let sn = [s[0] * n[0] + s[1] * n[1], s[2] * n[0] + s[3] * n[1]];
                let snn = sn[0] * n[0] + sn[1] * n[1];
                assert!((snn - nn[i][q][0]).abs() < 1e-14);
                for c in 0..2 {
                    assert!((snn * n[c] + nt[i][q][c] - sn[c]).abs() < 1e-14);
                }
                assert!((nt[i][q][0] * n[0] + nt[i][q][1] * n[1]).abs() < 1e-14);
            }
        }
        let tt = d.eval_basis(SpaceKind::V, 0, &pts, EvalKind::TangentialTrace).unwrap();
        for i in 0..tt.len() {
            assert_eq!(tt[i][0][1], 0.0);
            assert_eq!(tt[i][1][0], 0.0);
        }
        let w = d.eval_basis(SpaceKind::W, 0, &[vec![0.2, 0.6]], EvalKind::Value).unwrap();
        for f in w {
            assert_eq!(f[0][1] + f[0][2], 0.0);
        }
    }

    #[test]
    fn projection_of_constant_and_taylor_green() {
        let d = disc(3, 2);
        let u = d.project_v(&|_x: &[f64]| [0.7, -0.2, 0.0]).unwrap();
        assert!(d.max_divergence(&u) < 1e-13);
        let v = d.eval_v_point(&u, &[0.31, 0.77]);
        assert!((v[0] - 0.7).abs() < 1e-13 && (v[1] + 0.2).abs() < 1e-13);

        let tau = std::f64::consts::TAU;
        let mesh = build_box_mesh(&MeshSpec::periodic_box(2, 8, 0.0, tau)).unwrap();
        let d = build_spaces(&mesh, 2).unwrap();
        let u = d.project_v(&|x: &[f64]| [x[0].sin() * x[1].cos(), -x[0].cos() * x[1].sin(), 0.0]).unwrap();
        assert!(d.max_divergence(&u) <= 1e-11);
    }

    #[test]
    fn projection_reproduces_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=3 {
            let d = disc(2, k);
            let u: Vec<f64> = (0..d.dofs.n_v).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |x: &[f64]| d.eval_v_point(&u, x);
            let p = d.project_v(&f).unwrap();
            for (a, b) in u.iter().zip(&p) {
                assert!((a - b).abs() < 1e-12);
            }
            // degree-k scalar into Q
            let g = |x: &[f64]| vec![x[0].powi(k as i32) - 2.0 * x[1] + 0.5 * x[1].powi(k as i32)];
            let q = d.l2_project(SpaceKind::Q, &g).unwrap();
            for e in 0..d.mesh.n_elements() {
                let xi = [0.13, 0.71];
                let x = d.mesh.map_point(e, &xi);
                assert!((d.eval_q_local(e, &xi, &q) - g(&x)[0]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadrature_is_exact_for_cubic_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 1..=3 {
            let deg = 3 * k + 2;
            let coef: Vec<(f64, usize, usize)> = (0..12)
                .map(|_| {
                    let a = rng.random_range(0..=deg);
                    (rng.random_range(-1.0..1.0), a, rng.random_range(0..=deg - a))
                })
                .collect();
            let f = |x: &[f64]| coef.iter().map(|(c, a, b)| c * x[0].powi(*a as i32) * x[1].powi(*b as i32)).sum::<f64>();
            let q1 = Quadrature::new(2, k);
            let q2 = Quadrature::with_points(2, q1.n1d + 2);
            let i1: f64 = q1.vol_pts.iter().zip(&q1.vol_w).map(|(p, w)| w * f(p)).sum();
            let i2: f64 = q2.vol_pts.iter().zip(&q2.vol_w).map(|(p, w)| w * f(p)).sum();
            assert!((i1 - i2).abs() < 1e-13);
        }
    }
}
