//! Legacy ASCII VTK output on an element-subdivided lattice.

use std::fmt::Write as _;
use std::path::Path;

use mcs_core::Discretization;

/// Fields written to a snapshot. `order` holds one value per element
/// (cell data); `p` is the physical pressure on `Q`.
pub struct VtkFields<'a> {
    pub u: &'a [f64],
    pub p: &'a [f64],
    pub order: Option<Vec<f64>>,
    pub time: f64,
}

/// Reference lattice with `k + 1` equispaced points per axis (x fastest).
fn lattice(dim: usize, m: usize) -> Vec<Vec<f64>> {
    let n = m + 1;
    (0..n.pow(dim as u32))
        .map(|mut i| {
            (0..dim)
                .map(|_| {
                    let j = i % n;
                    i /= n;
                    j as f64 / m as f64
                })
                .collect()
        })
        .collect()
}

/// Prints `-0` as `0` so zero fields read back as "0 0 0".
fn num(x: f64) -> f64 {
    x + 0.0
}

/// Renders the file content; see [`write_vtk`].
pub fn render_vtk(disc: &Discretization, fields: &VtkFields) -> String {
    let dim = disc.dim();
    let m = disc.k().max(1);
    let n1 = m + 1;
    let lat = lattice(dim, m);
    let np_el = lat.len();
    let ne = disc.mesh.n_elements();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "mcs snapshot t={} k={}", fields.time, disc.k());
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", ne * np_el);
    let mut vel = Vec::with_capacity(ne * np_el);
    let mut pres = Vec::with_capacity(ne * np_el);
    let mut div = Vec::with_capacity(ne * np_el);
    for e in 0..ne {
        for xi in &lat {
            let x = disc.mesh.map_point(e, xi);
            let z = if dim == 3 { x[2] } else { 0.0 };
            let _ = writeln!(s, "{} {} {}", num(x[0]), num(x[1]), num(z));
            vel.push(disc.eval_v_local(e, xi, fields.u));
            pres.push(disc.eval_q_local(e, xi, fields.p));
            div.push(disc.eval_div_local(e, xi, fields.u));
        }
    }
    let sub = m.pow(dim as u32);
    let nv = if dim == 2 { 4 } else { 8 };
    let _ = writeln!(s, "CELLS {} {}", ne * sub, ne * sub * (nv + 1));
    let id = |i: usize, j: usize, k: usize| i + n1 * (j + n1 * k);
    for e in 0..ne {
        let base = e * np_el;
        for c in 0..sub {
            let (i, j, k) = (c % m, (c / m) % m, c / (m * m));
            if dim == 2 {
                let _ = writeln!(s, "4 {} {} {} {}", base + id(i, j, 0), base + id(i + 1, j, 0), base + id(i + 1, j + 1, 0), base + id(i, j + 1, 0));
            } else {
                let _ = writeln!(
                    s,
                    "8 {} {} {} {} {} {} {} {}",
                    base + id(i, j, k),
                    base + id(i + 1, j, k),
                    base + id(i + 1, j + 1, k),
                    base + id(i, j + 1, k),
                    base + id(i, j, k + 1),
                    base + id(i + 1, j, k + 1),
                    base + id(i + 1, j + 1, k + 1),
                    base + id(i, j + 1, k + 1)
                );
            }
        }
    }
    let _ = writeln!(s, "CELL_TYPES {}", ne * sub);
    let ty = if dim == 2 { "9" } else { "12" };
    for _ in 0..ne * sub {
        s.push_str(ty);
        s.push('\n');
    }
    let _ = writeln!(s, "POINT_DATA {}", ne * np_el);
    s.push_str("VECTORS velocity double\n");
    for v in &vel {
        let _ = writeln!(s, "{} {} {}", num(v[0]), num(v[1]), num(v[2]));
    }
    for (name, vals) in [("pressure", &pres), ("divergence", &div)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals.iter() {
            let _ = writeln!(s, "{}", num(*v));
        }
    }
    if let Some(order) = &fields.order {
        let _ = writeln!(s, "CELL_DATA {}\nSCALARS hopu_order double 1\nLOOKUP_TABLE default", ne * sub);
        for o in order {
            for _ in 0..sub {
                let _ = writeln!(s, "{}", num(*o));
            }
        }
    }
    s
}

/// Writes a legacy ASCII unstructured-grid file with `(k+1)^d` lattice
/// points per element, velocity (zero-padded to 3 components), pressure and
/// divergence as point data, and the local upwind order as cell data.
pub fn write_vtk(disc: &Discretization, fields: &VtkFields, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, render_vtk(disc, fields))
}
