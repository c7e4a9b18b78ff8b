//! One-dimensional polynomials on `[0, 1]`, shifted Legendre polynomials,
//! Gauss-Legendre rules and tensor-product helpers.

/// Polynomial stored by monomial coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly1(pub Vec<f64>);

impl Poly1 {
    pub fn constant(c: f64) -> Self {
        Poly1(vec![c])
    }

    /// `xi` on `[0,1]`.
    pub fn x() -> Self {
        Poly1(vec![0.0, 1.0])
    }

    pub fn one_minus_x() -> Self {
        Poly1(vec![1.0, -1.0])
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_deriv(&self, x: f64) -> f64 {
        let n = self.0.len();
        let mut acc = 0.0;
        for i in (1..n).rev() {
            acc = acc * x + i as f64 * self.0[i];
        }
        acc
    }

    pub fn mul(&self, other: &Poly1) -> Poly1 {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly1(out)
    }
}

/// Shifted Legendre polynomial `L_n(2x - 1)` on `[0,1]`.
pub fn legendre(n: usize) -> Poly1 {
    // Bonnet recursion on t = 2x - 1
    let t = Poly1(vec![-1.0, 2.0]);
    let mut p0 = Poly1::constant(1.0);
    if n == 0 {
        return p0;
    }
    let mut p1 = t.clone();
    for m in 1..n {
        let tp = t.mul(&p1);
        let mut next = vec![0.0; tp.0.len()];
        for (i, c) in tp.0.iter().enumerate() {
            next[i] += (2 * m + 1) as f64 / (m + 1) as f64 * c;
        }
        for (i, c) in p0.0.iter().enumerate() {
            next[i] -= m as f64 / (m + 1) as f64 * c;
        }
        p0 = p1;
        p1 = Poly1(next);
    }
    p1
}

/// `int_0^1 L_n^2 = 1 / (2n + 1)`.
pub fn legendre_norm_sq(n: usize) -> f64 {
    1.0 / (2 * n + 1) as f64
}

/// Gauss-Legendre rule with `n` points on `[0, 1]`; exact to degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for m in 1..n {
                let p2 = ((2 * m + 1) as f64 * t * p1 - m as f64 * p0) / (m + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { t } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pnm1) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (t + 1.0);
        w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// Multi-indices in `nvars` variables with total degree `<= max_total`,
/// ordered by total degree, then lexicographically.
pub fn multi_indices(nvars: usize, max_total: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max_total {
        out.extend(indices_of_total(nvars, total));
    }
    out
}

/// Multi-indices of exactly the given total degree.
pub fn indices_of_total(nvars: usize, total: usize) -> Vec<Vec<usize>> {
    if nvars == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in indices_of_total(nvars - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Tensor-product quadrature on `[0,1]^d`: points (row-major, axis 0 fastest) and weights.
pub fn tensor_rule(d: usize, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let total = n.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    for q in 0..total {
        let mut rem = q;
        let mut p = Vec::with_capacity(d);
        let mut wt = 1.0;
        for _ in 0..d {
            p.push(x[rem % n]);
            wt *= w[rem % n];
            rem /= n;
        }
        pts.push(p);
        wts.push(wt);
    }
    (pts, wts)
}

/// Product of one 1D polynomial per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPoly {
    pub factors: Vec<Poly1>,
}

impl TensorPoly {
    pub fn legendre(index: &[usize]) -> Self {
        TensorPoly { factors: index.iter().map(|&n| legendre(n)).collect() }
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.factors.iter().zip(xi).map(|(f, &x)| f.eval(x)).product()
    }

    /// Value and reference gradient.
    pub fn eval_grad(&self, xi: &[f64]) -> (f64, Vec<f64>) {
        let vals: Vec<f64> = self.factors.iter().zip(xi).map(|(f, &x)| f.eval(x)).collect();
        let ders: Vec<f64> = self.factors.iter().zip(xi).map(|(f, &x)| f.eval_deriv(x)).collect();
        let d = vals.len();
        let grad = (0..d)
            .map(|a| (0..d).map(|b| if a == b { ders[b] } else { vals[b] }).product())
            .collect();
        (vals.iter().product(), grad)
    }

    pub fn total_degree(&self) -> usize {
        self.factors.iter().map(|f| f.degree()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exactness() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for p in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
                let exact = 1.0 / (p + 1) as f64;
                assert!((q - exact).abs() <= 1e-14 * exact.max(1.0), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn legendre_orthogonality() {
        let (x, w) = gauss_legendre(10);
        for m in 0..7 {
            for n in 0..7 {
                let lm = legendre(m);
                let ln = legendre(n);
                let ip: f64 = x.iter().zip(&w).map(|(&xi, wi)| wi * lm.eval(xi) * ln.eval(xi)).sum();
                let exact = if m == n { legendre_norm_sq(n) } else { 0.0 };
                assert!((ip - exact).abs() < 1e-13);
            }
        }
        assert!((legendre(3).eval(1.0) - 1.0).abs() < 1e-14);
        assert!((legendre(3).eval(0.0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 3).len(), 10);
        assert_eq!(multi_indices(3, 2).len(), 10);
        assert_eq!(multi_indices(1, 4).len(), 5);
        assert_eq!(multi_indices(0, 3).len(), 1);
        assert_eq!(indices_of_total(3, 2).len(), 6);
    }

    #[test]
    fn tensor_gradient_matches_difference() {
        let p = TensorPoly::legendre(&[2, 3]);
        let xi = [0.3, 0.7];
        let (_, g) = p.eval_grad(&xi);
        let eps = 1e-6;
        let fd0 = (p.eval(&[0.3 + eps, 0.7]) - p.eval(&[0.3 - eps, 0.7])) / (2.0 * eps);
        assert!((g[0] - fd0).abs() < 1e-7);
    }
}
