//! Honeycomb lattice with matter spins on vertices and gauge spins on links.
//!
//! The lattice is stored as a sheared brick wall. Cell `(x, y)` owns an `A`
//! and a `B` vertex and three links:
//!
//! ```text
//!   Intra:    A(x, y) - B(x, y)
//!   Zigzag:   B(x, y) - A(x + 1, y)
//!   Vertical: B(x, y) - A(x, y + 1)
//! ```
//!
//! Each zigzag row `y` holds `2 * n_cells_x` vertices. In the Euclidean
//! embedding (unit bond length) vertex `A(x, y)` sits at
//! `(sqrt(3)/2 * (2x + y), 1.5 y)` and `B(x, y)` at
//! `(sqrt(3)/2 * (2x + 1 + y), 1.5 y + 0.5)`, so every vertical bond is
//! upright and each physical column `X = (2x + s + y) mod 2 n_cells_x`
//! holds exactly one vertex per row.
//!
//! Spin indices: matter sites first (`0..n_matter`), then links
//! (`n_matter..n_matter + n_links`), both row-major in `(y, x, sublattice)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Vertical distance between the center lines of two adjacent zigzag rows.
pub const ROW_SPACING: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
}

impl Sublattice {
    fn offset(self) -> usize {
        match self {
            Sublattice::A => 0,
            Sublattice::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Intra,
    Zigzag,
    Vertical,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Intra, LinkKind::Zigzag, LinkKind::Vertical];

    /// Bond vector from the first endpoint to the second.
    fn bond(self) -> [f64; 2] {
        match self {
            LinkKind::Intra => [SQRT3_2, 0.5],
            LinkKind::Zigzag => [SQRT3_2, -0.5],
            LinkKind::Vertical => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatterSite {
    pub cell_x: usize,
    pub row: usize,
    pub sublattice: Sublattice,
    /// Physical column in `0..2 * n_cells_x`.
    pub column: usize,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSite {
    pub cell_x: usize,
    pub row: usize,
    pub kind: LinkKind,
    /// Matter indices of the two endpoints.
    pub endpoints: [usize; 2],
    pub midpoint: [f64; 2],
}

/// `(matter i, link <i,j>, matter j)`; matter and link indices, not spin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondTriple {
    pub matter_a: usize,
    pub link: usize,
    pub matter_b: usize,
}

/// Two links meeting at `vertex`; a nearest-neighbour pair of the dual Kagome lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KagomePair {
    pub a: usize,
    pub b: usize,
    pub vertex: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinLattice {
    pub n_cells_x: usize,
    pub n_cells_y: usize,
    pub boundary_x: Boundary,
    pub boundary_y: Boundary,
    pub matter_sites: Vec<MatterSite>,
    pub link_sites: Vec<LinkSite>,
    /// Link indices adjacent to each matter site.
    pub vertex_links: Vec<Vec<usize>>,
    pub bond_triples: Vec<BondTriple>,
    pub kagome_pairs: Vec<KagomePair>,
    /// Link indices around each hexagonal plaquette.
    pub plaquettes: Vec<[usize; 6]>,
    link_lookup: Vec<[Option<usize>; 3]>,
}

/// Builds a honeycomb lattice of `n_cells_x * n_cells_y` plaquettes.
///
/// Only X-periodic lattices are supported; Y may be periodic or open.
pub fn build_honeycomb(
    n_cells_x: usize,
    n_cells_y: usize,
    boundary_x: Boundary,
    boundary_y: Boundary,
) -> Result<SpinLattice> {
    if n_cells_x == 0 {
        return Err(Error::invalid("n_cells_x", "must be at least 1"));
    }
    if n_cells_y == 0 {
        return Err(Error::invalid("n_cells_y", "must be at least 1"));
    }
    if boundary_x != Boundary::Periodic {
        return Err(Error::invalid(
            "boundary_x",
            "open boundaries are only supported along Y",
        ));
    }
    if boundary_y == Boundary::Open && n_cells_y < 2 {
        return Err(Error::invalid(
            "n_cells_y",
            "an open-Y lattice needs at least 2 rows",
        ));
    }

    let n_cols = 2 * n_cells_x;
    let mut matter_sites = Vec::with_capacity(2 * n_cells_x * n_cells_y);
    for y in 0..n_cells_y {
        for x in 0..n_cells_x {
            for sublattice in [Sublattice::A, Sublattice::B] {
                let s = sublattice.offset();
                let position = [
                    SQRT3_2 * (2 * x + s + y) as f64,
                    ROW_SPACING * y as f64 + 0.5 * s as f64,
                ];
                matter_sites.push(MatterSite {
                    cell_x: x,
                    row: y,
                    sublattice,
                    column: (2 * x + s + y) % n_cols,
                    position,
                });
            }
        }
    }

    let matter = |x: usize, y: usize, s: Sublattice| (y * n_cells_x + x) * 2 + s.offset();

    let mut link_sites = Vec::with_capacity(3 * n_cells_x * n_cells_y);
    let mut link_lookup = vec![[None; 3]; n_cells_x * n_cells_y];
    for y in 0..n_cells_y {
        for x in 0..n_cells_x {
            for (k, kind) in LinkKind::ALL.into_iter().enumerate() {
                let endpoints = match kind {
                    LinkKind::Intra => [matter(x, y, Sublattice::A), matter(x, y, Sublattice::B)],
                    LinkKind::Zigzag => [
                        matter(x, y, Sublattice::B),
                        matter((x + 1) % n_cells_x, y, Sublattice::A),
                    ],
                    LinkKind::Vertical => {
                        if y + 1 == n_cells_y && boundary_y == Boundary::Open {
                            continue;
                        }
                        [
                            matter(x, y, Sublattice::B),
                            matter(x, (y + 1) % n_cells_y, Sublattice::A),
                        ]
                    }
                };
                let start = matter_sites[endpoints[0]].position;
                let bond = kind.bond();
                link_lookup[y * n_cells_x + x][k] = Some(link_sites.len());
                link_sites.push(LinkSite {
                    cell_x: x,
                    row: y,
                    kind,
                    endpoints,
                    midpoint: [start[0] + 0.5 * bond[0], start[1] + 0.5 * bond[1]],
                });
            }
        }
    }

    let mut vertex_links = vec![Vec::with_capacity(3); matter_sites.len()];
    let mut bond_triples = Vec::with_capacity(link_sites.len());
    for (l, link) in link_sites.iter().enumerate() {
        let [a, b] = link.endpoints;
        vertex_links[a].push(l);
        vertex_links[b].push(l);
        bond_triples.push(BondTriple {
            matter_a: a,
            link: l,
            matter_b: b,
        });
    }

    let kagome_pairs = dual_kagome_from(&vertex_links);

    let mut plaquettes = Vec::with_capacity(n_cells_x * n_cells_y);
    let lookup = |x: usize, y: usize, kind: LinkKind| -> Option<usize> {
        link_lookup[y * n_cells_x + x][kind as usize]
    };
    for y in 0..n_cells_y {
        if boundary_y == Boundary::Open && y + 1 == n_cells_y {
            break;
        }
        let yu = (y + 1) % n_cells_y;
        for x in 0..n_cells_x {
            let xr = (x + 1) % n_cells_x;
            let ring = [
                lookup(x, y, LinkKind::Zigzag),
                lookup(xr, y, LinkKind::Intra),
                lookup(xr, y, LinkKind::Vertical),
                lookup(x, yu, LinkKind::Zigzag),
                lookup(x, yu, LinkKind::Intra),
                lookup(x, y, LinkKind::Vertical),
            ];
            let mut hexagon = [0; 6];
            for (slot, l) in hexagon.iter_mut().zip(ring) {
                *slot = l.expect("bulk plaquette links exist");
            }
            plaquettes.push(hexagon);
        }
    }

    Ok(SpinLattice {
        n_cells_x,
        n_cells_y,
        boundary_x,
        boundary_y,
        matter_sites,
        link_sites,
        vertex_links,
        bond_triples,
        kagome_pairs,
        plaquettes,
        link_lookup,
    })
}

fn dual_kagome_from(vertex_links: &[Vec<usize>]) -> Vec<KagomePair> {
    let mut pairs = Vec::with_capacity(3 * vertex_links.len());
    for (vertex, links) in vertex_links.iter().enumerate() {
        for (i, &a) in links.iter().enumerate() {
            for &b in &links[i + 1..] {
                pairs.push(KagomePair { a, b, vertex });
            }
        }
    }
    pairs
}

/// Nearest-neighbour pairs of the Kagome lattice formed by the links.
///
/// Pairs are keyed by the vertex they meet at, so the two links of a pair are
/// always distinct and every vertex of degree `d` contributes `d(d-1)/2` pairs.
pub fn dual_kagome(lattice: &SpinLattice) -> Vec<KagomePair> {
    dual_kagome_from(&lattice.vertex_links)
}

impl SpinLattice {
    pub fn n_matter(&self) -> usize {
        self.matter_sites.len()
    }

    pub fn n_links(&self) -> usize {
        self.link_sites.len()
    }

    pub fn n_spins(&self) -> usize {
        self.n_matter() + self.n_links()
    }

    /// Spin index of link `l`.
    #[inline]
    pub fn link_spin(&self, l: usize) -> usize {
        self.n_matter() + l
    }

    /// Number of physical columns, the linear surface dimension `L`.
    pub fn n_columns(&self) -> usize {
        2 * self.n_cells_x
    }

    pub fn matter_index(&self, x: usize, y: usize, sublattice: Sublattice) -> usize {
        (y * self.n_cells_x + x) * 2 + sublattice.offset()
    }

    pub fn link_index(&self, x: usize, y: usize, kind: LinkKind) -> Option<usize> {
        self.link_lookup[y * self.n_cells_x + x][kind as usize]
    }

    pub fn row_vertices(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_matter()).filter(move |&j| self.matter_sites[j].row == row)
    }

    /// Vertices sharing a link with `vertex` (with multiplicity on tiny tori).
    pub fn vertex_neighbours(&self, vertex: usize) -> impl Iterator<Item = usize> + '_ {
        self.vertex_links[vertex].iter().map(move |&l| {
            let [a, b] = self.link_sites[l].endpoints;
            if a == vertex {
                b
            } else {
                a
            }
        })
    }

    /// Height of a row's center line above row 0.
    pub fn row_height(&self, row: usize) -> f64 {
        ROW_SPACING * row as f64
    }

    /// Euclidean extent of the row center lines along Y.
    pub fn height_extent(&self) -> f64 {
        self.row_height(self.n_cells_y - 1)
    }

    pub fn summary(&self) -> LatticeSummary {
        LatticeSummary {
            n_cells_x: self.n_cells_x,
            n_cells_y: self.n_cells_y,
            boundary_x: self.boundary_x,
            boundary_y: self.boundary_y,
            n_matter: self.n_matter(),
            n_links: self.n_links(),
            n_spins: self.n_spins(),
            n_kagome_pairs: self.kagome_pairs.len(),
            n_plaquettes: self.plaquettes.len(),
            vertex_links: self.vertex_links.clone(),
            link_endpoints: self.link_sites.iter().map(|l| l.endpoints).collect(),
        }
    }
}

/// Counts and adjacency of a lattice, exportable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSummary {
    pub n_cells_x: usize,
    pub n_cells_y: usize,
    pub boundary_x: Boundary,
    pub boundary_y: Boundary,
    pub n_matter: usize,
    pub n_links: usize,
    pub n_spins: usize,
    pub n_kagome_pairs: usize,
    pub n_plaquettes: usize,
    pub vertex_links: Vec<Vec<usize>>,
    pub link_endpoints: Vec<[usize; 2]>,
}

impl LatticeSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary is serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn periodic(nx: usize, ny: usize) -> SpinLattice {
        build_honeycomb(nx, ny, Boundary::Periodic, Boundary::Periodic).unwrap()
    }

    #[test]
    fn counts_small_tori() {
        let l = periodic(2, 2);
        assert_eq!((l.n_matter(), l.n_links(), l.n_spins()), (8, 12, 20));
        let l = periodic(20, 20);
        assert_eq!((l.n_matter(), l.n_spins()), (800, 2000));
    }

    #[test]
    fn single_cell_links_join_both_vertices() {
        let l = periodic(1, 1);
        assert_eq!((l.n_matter(), l.n_links()), (2, 3));
        for link in &l.link_sites {
            let ends: HashSet<_> = link.endpoints.iter().copied().collect();
            assert_eq!(ends, HashSet::from([0, 1]));
        }
        assert_eq!(l.kagome_pairs.len(), 6);
    }

    #[test]
    fn bond_lengths_are_unit() {
        let l = periodic(3, 4);
        for link in &l.link_sites {
            let p = l.matter_sites[link.endpoints[0]].position;
            let bond = link.kind.bond();
            let q = [link.midpoint[0] - p[0], link.midpoint[1] - p[1]];
            assert!(((2.0 * q[0]).hypot(2.0 * q[1]) - 1.0).abs() < 1e-12);
            assert!((bond[0].hypot(bond[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn columns_hold_one_vertex_per_row() {
        let l = build_honeycomb(4, 5, Boundary::Periodic, Boundary::Open).unwrap();
        for row in 0..5 {
            let cols: HashSet<_> = l
                .row_vertices(row)
                .map(|j| l.matter_sites[j].column)
                .collect();
            assert_eq!(cols.len(), l.n_columns());
        }
    }

    #[test]
    fn rows_increase_in_height() {
        let l = build_honeycomb(3, 4, Boundary::Periodic, Boundary::Open).unwrap();
        for a in &l.matter_sites {
            for b in &l.matter_sites {
                if a.row < b.row && a.column == b.column {
                    assert!(a.position[1] < b.position[1]);
                }
            }
        }
    }

    #[test]
    fn open_y_drops_boundary_links() {
        let l = build_honeycomb(3, 4, Boundary::Periodic, Boundary::Open).unwrap();
        assert_eq!(l.n_links(), 3 * 3 * 4 - 3);
        for j in 0..l.n_matter() {
            let site = &l.matter_sites[j];
            let edge = (site.row == 0 && site.sublattice == Sublattice::A)
                || (site.row == 3 && site.sublattice == Sublattice::B);
            assert_eq!(l.vertex_links[j].len(), if edge { 2 } else { 3 });
        }
        assert_eq!(l.plaquettes.len(), 3 * 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_honeycomb(0, 2, Boundary::Periodic, Boundary::Periodic).is_err());
        assert!(build_honeycomb(2, 0, Boundary::Periodic, Boundary::Periodic).is_err());
        assert!(build_honeycomb(2, 2, Boundary::Open, Boundary::Periodic).is_err());
        assert!(build_honeycomb(2, 2, Boundary::Open, Boundary::Open).is_err());
    }

    #[test]
    fn plaquette_touches_each_vertex_twice() {
        let l = periodic(3, 3);
        for hex in &l.plaquettes {
            let mut count = vec![0; l.n_matter()];
            for &link in hex {
                for &v in &l.link_sites[link].endpoints {
                    count[v] += 1;
                }
            }
            assert_eq!(count.iter().filter(|&&c| c == 2).count(), 6);
            assert!(count.iter().all(|&c| c == 0 || c == 2));
        }
    }
}
