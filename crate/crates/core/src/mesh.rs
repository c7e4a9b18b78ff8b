//! Structured axis-aligned box meshes with tagged, oriented facets.
//!
//! Elements are numbered lexicographically with axis 0 fastest. Facets are
//! grouped by normal axis, then by plane index, then by the lexicographic
//! index of the tangential cell. An interior facet is owned by the element on
//! its lower side, so its unit normal is `+e_axis`. A periodic axis keeps only
//! the upper boundary plane, owned by the last cell and pointing into the
//! first one.

use crate::error::{Error, Result};

/// Boundary condition attached to a non-periodic box face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Wall,
    Inlet,
    Outlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FacetTag {
    Interior,
    Wall,
    Inlet,
    Outlet,
    Periodic,
}

impl FacetTag {
    /// Facets carrying convective facet integrals: interior, periodic and inlet.
    pub fn in_interior_set(self) -> bool {
        matches!(self, FacetTag::Interior | FacetTag::Periodic | FacetTag::Inlet)
    }

    pub fn is_dirichlet(self) -> bool {
        matches!(self, FacetTag::Wall | FacetTag::Inlet)
    }
}

impl From<BoundaryKind> for FacetTag {
    fn from(b: BoundaryKind) -> Self {
        match b {
            BoundaryKind::Wall => FacetTag::Wall,
            BoundaryKind::Inlet => FacetTag::Inlet,
            BoundaryKind::Outlet => FacetTag::Outlet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Element(usize),
    Boundary(FacetTag),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub owner: usize,
    pub neighbor: Neighbor,
    /// Normal axis.
    pub axis: usize,
    /// Outward from the owner; unused trailing components are zero.
    pub unit_normal: [f64; 3],
    pub measure: f64,
    pub tag: FacetTag,
    pub center: [f64; 3],
    /// Local facet index (`2 * axis + side`) of this facet in the owner.
    pub owner_local: usize,
    /// Local facet index in the neighbor, if any.
    pub neighbor_local: Option<usize>,
}

/// Input description of a box mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `[low, high]` face kinds for each non-periodic axis.
    pub boundary: Vec<Option<[BoundaryKind; 2]>>,
    pub periodic: Vec<bool>,
}

impl MeshSpec {
    pub fn unit_walls(dim: usize, n: usize) -> Self {
        MeshSpec {
            dim,
            cells: vec![n; dim],
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
            boundary: vec![Some([BoundaryKind::Wall; 2]); dim],
            periodic: vec![false; dim],
        }
    }

    pub fn periodic_box(dim: usize, n: usize, lower: f64, upper: f64) -> Self {
        MeshSpec {
            dim,
            cells: vec![n; dim],
            lower: vec![lower; dim],
            upper: vec![upper; dim],
            boundary: vec![None; dim],
            periodic: vec![true; dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Edge lengths of every element (the grid is uniform per axis).
    pub h: Vec<f64>,
    pub periodic: Vec<bool>,
    pub boundary: Vec<Option<[BoundaryKind; 2]>>,
    pub facets: Vec<Facet>,
    /// `element_facets[e][2 * axis + side]` is a global facet id.
    pub element_facets: Vec<Vec<usize>>,
    /// Pairs of (upper-plane facet, geometrically congruent lower-plane image)
    /// recorded as `(facet, axis)` for every periodic facet.
    pub periodic_pairs: Vec<(usize, usize)>,
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    /// Element id of a cell multi-index.
    pub fn element_id(&self, idx: &[usize]) -> usize {
        let mut id = 0;
        for a in (0..self.dim).rev() {
            id = id * self.cells[a] + idx[a];
        }
        id
    }

    pub fn element_index(&self, mut e: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for (a, i) in idx.iter_mut().enumerate() {
            *i = e % self.cells[a];
            e /= self.cells[a];
        }
        idx
    }

    pub fn element_lower(&self, e: usize) -> Vec<f64> {
        self.element_index(e)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lower[a] + i as f64 * self.h[a])
            .collect()
    }

    /// Maps a reference point in `[0,1]^d` of element `e` to physical space.
    pub fn map_point(&self, e: usize, xi: &[f64]) -> Vec<f64> {
        let lo = self.element_lower(e);
        (0..self.dim).map(|a| lo[a] + self.h[a] * xi[a]).collect()
    }

    pub fn element_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    pub fn facet_measure(&self, axis: usize) -> f64 {
        (0..self.dim).filter(|&t| t != axis).map(|t| self.h[t]).product()
    }

    pub fn h_min(&self) -> f64 {
        self.h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Owner, neighbor (or boundary tag) and owner-outward unit normal.
    pub fn facet_neighbors(&self, facet: usize) -> Result<(usize, Neighbor, [f64; 3])> {
        let f = self.facets.get(facet).ok_or(Error::InvalidFacet(facet))?;
        Ok((f.owner, f.neighbor, f.unit_normal))
    }

    pub fn facets_with_tag(&self, tag: FacetTag) -> impl Iterator<Item = usize> + '_ {
        self.facets.iter().enumerate().filter(move |(_, f)| f.tag == tag).map(|(i, _)| i)
    }

    /// Closed-form number of facets of a structured grid.
    pub fn expected_facet_count(cells: &[usize], periodic: &[bool]) -> usize {
        (0..cells.len())
            .map(|a| {
                let planes = if periodic[a] { cells[a] } else { cells[a] + 1 };
                planes * cells.iter().enumerate().filter(|&(t, _)| t != a).map(|(_, &n)| n).product::<usize>()
            })
            .sum()
    }
}

/// Builds a structured box mesh; see the module docs for the numbering.
pub fn build_box_mesh(spec: &MeshSpec) -> Result<Mesh> {
    let d = spec.dim;
    if !(2..=3).contains(&d) {
        return Err(Error::MeshConfig(format!("dimension {d} not in {{2, 3}}")));
    }
    for (name, len) in [
        ("cells", spec.cells.len()),
        ("lower", spec.lower.len()),
        ("upper", spec.upper.len()),
        ("boundary", spec.boundary.len()),
        ("periodic", spec.periodic.len()),
    ] {
        if len != d {
            return Err(Error::MeshConfig(format!("{name} has {len} entries, expected {d}")));
        }
    }
    for a in 0..d {
        if spec.cells[a] == 0 {
            return Err(Error::MeshConfig(format!("zero cells along axis {a}")));
        }
        if !(spec.lower[a] < spec.upper[a]) {
            return Err(Error::MeshConfig(format!("empty extent along axis {a}")));
        }
        match (spec.periodic[a], spec.boundary[a].is_some()) {
            (true, true) => {
                return Err(Error::MeshConfig(format!("axis {a} is periodic and also carries boundary tags")))
            }
            (false, false) => return Err(Error::MeshConfig(format!("axis {a} has no boundary tags"))),
            _ => {}
        }
    }

    let h: Vec<f64> = (0..d).map(|a| (spec.upper[a] - spec.lower[a]) / spec.cells[a] as f64).collect();
    let n_el: usize = spec.cells.iter().product();
    let mut mesh = Mesh {
        dim: d,
        cells: spec.cells.clone(),
        lower: spec.lower.clone(),
        upper: spec.upper.clone(),
        h,
        periodic: spec.periodic.clone(),
        boundary: spec.boundary.clone(),
        facets: Vec::new(),
        element_facets: vec![vec![usize::MAX; 2 * d]; n_el],
        periodic_pairs: Vec::new(),
    };

    for a in 0..d {
        let tang: Vec<usize> = (0..d).filter(|&t| t != a).collect();
        let n_tang: usize = tang.iter().map(|&t| spec.cells[t]).product();
        let n_a = spec.cells[a];
        let planes: Vec<usize> = if spec.periodic[a] { (1..=n_a).collect() } else { (0..=n_a).collect() };
        for &p in &planes {
            for ti in 0..n_tang {
                let mut idx = vec![0usize; d];
                let mut rem = ti;
                for &t in &tang {
                    idx[t] = rem % spec.cells[t];
                    rem /= spec.cells[t];
                }
                let mut center = [0.0; 3];
                for t in 0..d {
                    center[t] = if t == a {
                        spec.lower[a] + p as f64 * mesh.h[a]
                    } else {
                        spec.lower[t] + (idx[t] as f64 + 0.5) * mesh.h[t]
                    };
                }
                let mut normal = [0.0; 3];
                let measure = mesh.facet_measure(a);
                let id = mesh.facets.len();
                let facet = if p == 0 {
                    idx[a] = 0;
                    let owner = mesh.element_id(&idx);
                    normal[a] = -1.0;
                    let tag = FacetTag::from(spec.boundary[a].unwrap()[0]);
                    mesh.element_facets[owner][2 * a] = id;
                    Facet {
                        owner,
                        neighbor: Neighbor::Boundary(tag),
                        axis: a,
                        unit_normal: normal,
                        measure,
                        tag,
                        center,
                        owner_local: 2 * a,
                        neighbor_local: None,
                    }
                } else if p == n_a && !spec.periodic[a] {
                    idx[a] = n_a - 1;
                    let owner = mesh.element_id(&idx);
                    normal[a] = 1.0;
                    let tag = FacetTag::from(spec.boundary[a].unwrap()[1]);
                    mesh.element_facets[owner][2 * a + 1] = id;
                    Facet {
                        owner,
                        neighbor: Neighbor::Boundary(tag),
                        axis: a,
                        unit_normal: normal,
                        measure,
                        tag,
                        center,
                        owner_local: 2 * a + 1,
                        neighbor_local: None,
                    }
                } else {
                    idx[a] = p - 1;
                    let owner = mesh.element_id(&idx);
                    idx[a] = p % n_a;
                    let nb = mesh.element_id(&idx);
                    normal[a] = 1.0;
                    let tag = if p == n_a { FacetTag::Periodic } else { FacetTag::Interior };
                    mesh.element_facets[owner][2 * a + 1] = id;
                    mesh.element_facets[nb][2 * a] = id;
                    if tag == FacetTag::Periodic {
                        mesh.periodic_pairs.push((id, a));
                    }
                    Facet {
                        owner,
                        neighbor: Neighbor::Element(nb),
                        axis: a,
                        unit_normal: normal,
                        measure,
                        tag,
                        center,
                        owner_local: 2 * a + 1,
                        neighbor_local: Some(2 * a),
                    }
                };
                mesh.facets.push(facet);
            }
        }
    }
    debug_assert!(mesh.element_facets.iter().all(|f| f.iter().all(|&g| g != usize::MAX)));
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_spec(dim: usize, cells: Vec<usize>) -> MeshSpec {
        MeshSpec {
            dim,
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
            boundary: vec![None; dim],
            periodic: vec![true; dim],
            cells,
        }
    }

    fn count(mesh: &Mesh, interior: bool) -> usize {
        mesh.facets.iter().filter(|f| matches!(f.neighbor, Neighbor::Element(_)) == interior).count()
    }

    #[test]
    fn single_element_all_walls() {
        let m = build_box_mesh(&MeshSpec::unit_walls(2, 1)).unwrap();
        assert_eq!(m.n_elements(), 1);
        assert_eq!(count(&m, false), 4);
        assert_eq!(count(&m, true), 0);
        for f in 0..4 {
            let (o, nb, n) = m.facet_neighbors(f).unwrap();
            assert_eq!(o, 0);
            assert_eq!(nb, Neighbor::Boundary(FacetTag::Wall));
            let fc = &m.facets[f];
            // outward: normal points away from the element center
            let c = 0.5;
            assert!((fc.center[fc.axis] - c) * n[fc.axis] > 0.0);
        }
    }

    #[test]
    fn two_by_two_periodic() {
        let m = build_box_mesh(&periodic_spec(2, vec![2, 2])).unwrap();
        assert_eq!(m.n_elements(), 4);
        assert_eq!(count(&m, true), 8);
        assert_eq!(m.facets.iter().filter(|f| f.tag == FacetTag::Periodic).count(), 4);
        assert_eq!(m.facets.iter().filter(|f| f.tag == FacetTag::Interior).count(), 4);
    }

    #[test]
    fn three_d_two_cells() {
        let spec = MeshSpec {
            dim: 3,
            cells: vec![2, 1, 1],
            lower: vec![0.0; 3],
            upper: vec![2.0, 1.0, 1.0],
            boundary: vec![Some([BoundaryKind::Wall; 2]); 3],
            periodic: vec![false; 3],
        };
        let m = build_box_mesh(&spec).unwrap();
        assert_eq!(count(&m, true), 1);
        assert_eq!(count(&m, false), 10);
        assert_eq!(m.n_facets(), Mesh::expected_facet_count(&spec.cells, &spec.periodic));
    }

    #[test]
    fn middle_facet_orientation() {
        let mut spec = MeshSpec::unit_walls(2, 1);
        spec.cells = vec![2, 1];
        let m = build_box_mesh(&spec).unwrap();
        let mid = m.facets.iter().position(|f| f.tag == FacetTag::Interior).unwrap();
        let (o, nb, n) = m.facet_neighbors(mid).unwrap();
        assert_eq!(o, 0);
        assert_eq!(nb, Neighbor::Element(1));
        assert_eq!(n, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn periodic_self_pairing() {
        let spec = MeshSpec {
            dim: 2,
            cells: vec![1, 1],
            lower: vec![0.0; 2],
            upper: vec![1.0; 2],
            boundary: vec![None, Some([BoundaryKind::Wall; 2])],
            periodic: vec![true, false],
        };
        let m = build_box_mesh(&spec).unwrap();
        let f = m.facets.iter().position(|f| f.tag == FacetTag::Periodic).unwrap();
        let fc = &m.facets[f];
        assert_eq!(fc.owner, 0);
        assert_eq!(fc.neighbor, Neighbor::Element(0));
        assert_ne!(Some(fc.owner_local), fc.neighbor_local);
    }

    #[test]
    fn config_errors() {
        let mut spec = MeshSpec::unit_walls(2, 2);
        spec.periodic[0] = true;
        assert!(matches!(build_box_mesh(&spec), Err(Error::MeshConfig(_))));
        let mut spec = MeshSpec::unit_walls(2, 2);
        spec.cells[1] = 0;
        assert!(build_box_mesh(&spec).is_err());
        assert!(matches!(
            build_box_mesh(&MeshSpec::unit_walls(2, 1)).unwrap().facet_neighbors(9),
            Err(Error::InvalidFacet(9))
        ));
    }

    #[test]
    fn mesh_invariants() {
        for spec in [
            MeshSpec::unit_walls(2, 3),
            periodic_spec(2, vec![3, 2]),
            periodic_spec(3, vec![2, 1, 3]),
            MeshSpec::unit_walls(3, 2),
        ] {
            let m = build_box_mesh(&spec).unwrap();
            assert_eq!(m.n_facets(), Mesh::expected_facet_count(&spec.cells, &spec.periodic));
            // each element sees every local facet exactly once, and facet measures sum to the surface
            let surface: f64 = (0..m.dim).map(|a| 2.0 * m.facet_measure(a)).sum();
            for e in 0..m.n_elements() {
                let s: f64 = m.element_facets[e].iter().map(|&g| m.facets[g].measure).sum();
                assert!((s - surface).abs() <= 1e-14 * surface);
            }
            // partition of facet classes
            let (mut ni, mut nw, mut nn) = (0, 0, 0);
            for f in &m.facets {
                let norm: f64 = f.unit_normal.iter().map(|x| x * x).sum();
                assert_eq!(norm, 1.0);
                match f.tag {
                    FacetTag::Interior | FacetTag::Periodic | FacetTag::Inlet => ni += 1,
                    FacetTag::Wall => nw += 1,
                    FacetTag::Outlet => nn += 1,
                }
                if f.tag == FacetTag::Interior {
                    let Neighbor::Element(nb) = f.neighbor else { panic!() };
                    assert_ne!(nb, f.owner);
                }
            }
            assert_eq!(ni + nw + nn, m.n_facets());
        }
    }
}
