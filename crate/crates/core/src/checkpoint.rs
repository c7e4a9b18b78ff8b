//! Versioned little-endian binary checkpoints. Floating-point data is
//! stored bit-exactly, so a restart reproduces the subsequent steps.
//!
//! Layout: magic `MCSCKPT1`, `u32` version, `u32` k, mesh descriptor
//! (`u32` dim, then per axis `u64` cells, `f64` lower, `f64` upper, `u8`
//! boundary code for each side), `f64` t, `u64` step index, vectors `u`, `p`,
//! optional `u_prev`, and the optional order field (`i64` codes, `i64::MIN`
//! for facets outside the interior set, then `u64` refresh count).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fespace::Discretization;
use crate::hopu::{FacetOrder, OrderField};
use crate::mesh::{BoundaryKind, Mesh};
use crate::splitting::State;

const MAGIC: &[u8; 8] = b"MCSCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshDescriptor {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Per axis and side: 0 periodic, 1 wall, 2 inlet, 3 outlet.
    pub sides: Vec<[u8; 2]>,
}

impl MeshDescriptor {
    pub fn of(mesh: &Mesh) -> Self {
        let code = |k: BoundaryKind| match k {
            BoundaryKind::Wall => 1,
            BoundaryKind::Inlet => 2,
            BoundaryKind::Outlet => 3,
        };
        MeshDescriptor {
            dim: mesh.dim,
            cells: mesh.cells.clone(),
            lower: mesh.lower.clone(),
            upper: mesh.upper.clone(),
            sides: mesh.boundary.iter().map(|b| b.map_or([0, 0], |[l, h]| [code(l), code(h)])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub k: usize,
    pub mesh: MeshDescriptor,
    pub state: State,
    pub order: Option<(Vec<Option<FacetOrder>>, usize)>,
}

impl Checkpoint {
    pub fn check_compatible(&self, disc: &Discretization) -> Result<()> {
        if self.k != disc.k() || self.mesh != MeshDescriptor::of(&disc.mesh) {
            return Err(Error::Checkpoint("checkpoint was written for a different mesh or order".into()));
        }
        if self.state.u.len() != disc.dofs.n_v || self.state.p.len() != disc.dofs.n_q {
            return Err(Error::Checkpoint("coefficient counts do not match the discretization".into()));
        }
        Ok(())
    }

    pub fn order_field(&self, cadence: usize) -> Option<OrderField> {
        self.order.as_ref().map(|(entries, refresh_count)| OrderField { entries: entries.clone(), cadence, refresh_count: *refresh_count })
    }
}

struct W<T: Write>(T);

impl<T: Write> W<T> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn i64(&mut self, v: i64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn vec(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        v.iter().try_for_each(|x| self.f64(*x))
    }
}

struct R<T: Read>(T);

impl<T: Read> R<T> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > 1 << 34 {
            return Err(Error::Checkpoint(format!("implausible vector length {n}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_checkpoint(path: &Path, disc: &Discretization, state: &State, order: Option<&OrderField>) -> Result<()> {
    let mut w = W(BufWriter::new(File::create(path)?));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(disc.k() as u32)?;
    let m = MeshDescriptor::of(&disc.mesh);
    w.u32(m.dim as u32)?;
    for a in 0..m.dim {
        w.u64(m.cells[a] as u64)?;
        w.f64(m.lower[a])?;
        w.f64(m.upper[a])?;
        w.u8(m.sides[a][0])?;
        w.u8(m.sides[a][1])?;
    }
    w.f64(state.t)?;
    w.u64(state.step_index as u64)?;
    w.vec(&state.u)?;
    w.vec(&state.p)?;
    match &state.u_prev {
        Some(v) => {
            w.u8(1)?;
            w.vec(v)?;
        }
        None => w.u8(0)?,
    }
    match order {
        Some(o) => {
            w.u8(1)?;
            w.u64(o.entries.len() as u64)?;
            for e in &o.entries {
                w.i64(e.map_or(i64::MIN, |f| f.code()))?;
            }
            w.u64(o.refresh_count as u64)?;
        }
        None => w.u8(0)?,
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = R(BufReader::new(File::open(path)?));
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Checkpoint(format!("invalid dimension {dim}")));
    }
    let mut mesh = MeshDescriptor { dim, cells: vec![], lower: vec![], upper: vec![], sides: vec![] };
    for _ in 0..dim {
        mesh.cells.push(r.u64()? as usize);
        mesh.lower.push(r.f64()?);
        mesh.upper.push(r.f64()?);
        mesh.sides.push([r.u8()?, r.u8()?]);
    }
    let t = r.f64()?;
    let step_index = r.u64()? as usize;
    let u = r.vec()?;
    let p = r.vec()?;
    let u_prev = if r.u8()? == 1 { Some(r.vec()?) } else { None };
    let order = if r.u8()? == 1 {
        let n = r.u64()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            entries.push(match r.i64()? {
                i64::MIN => None,
                -1 => Some(FacetOrder::StandardUpwind),
                l if l >= 0 => Some(FacetOrder::Projected(l as usize)),
                l => return Err(Error::Checkpoint(format!("invalid facet order code {l}"))),
            });
        }
        Some((entries, r.u64()? as usize))
    } else {
        None
    };
    Ok(Checkpoint { k, mesh, state: State { u, p, t, step_index, u_prev }, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_spaces;
    use crate::mesh::{build_box_mesh, MeshSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let d = build_spaces(&build_box_mesh(&MeshSpec::periodic_box(2, 2, 0.0, 1.0)).unwrap(), 1).unwrap();
        let u: Vec<f64> = (0..d.dofs.n_v).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let mut s = State::new(&d, u);
        s.t = 0.1 + 0.2;
        s.step_index = 7;
        s.u_prev = Some(vec![f64::MIN_POSITIVE; d.dofs.n_v]);
        let mut o = OrderField::uniform(&d, FacetOrder::Projected(1), 10);
        o.entries[0] = Some(FacetOrder::StandardUpwind);
        o.refresh_count = 3;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        write_checkpoint(&path, &d, &s, Some(&o)).unwrap();
        let c = read_checkpoint(&path).unwrap();
        c.check_compatible(&d).unwrap();
        assert_eq!(c.state, s);
        assert_eq!(c.order_field(10).unwrap(), o);
        let d2 = build_spaces(&build_box_mesh(&MeshSpec::periodic_box(2, 2, 0.0, 1.0)).unwrap(), 2).unwrap();
        assert!(c.check_compatible(&d2).is_err());
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
