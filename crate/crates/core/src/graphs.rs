//! Base graphs `V_N` and the lazy simple random walk kernel `P_N`.
//!
//! All provided constructors yield vertex-transitive graphs; transitivity is
//! guaranteed by construction, not verified algorithmically. Graphs built
//! from raw adjacency lists via [`BaseGraph::from_adjacency`] are only checked
//! for regularity, symmetry and connectivity and are marked non-transitive.

use crate::error::{Error, Result};
use num_rational::Ratio;

/// Graph family tag, used for canonical scalings, snapshot headers and
/// geometry export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Family {
    Cycle { n: usize },
    Torus { n: usize, dim: usize },
    Petersen { n: usize, k: usize },
    Complete { n: usize },
    Hypercube { dim: usize },
    Custom,
}

impl Family {
    /// Space-separated form used in snapshot headers, e.g. `cycle 8`.
    pub fn header_token(&self) -> String {
        match self {
            Family::Cycle { n } => format!("cycle {n}"),
            Family::Torus { n, dim } => format!("torus {n} {dim}"),
            Family::Petersen { n, k } => format!("petersen {n} {k}"),
            Family::Complete { n } => format!("complete {n}"),
            Family::Hypercube { dim } => format!("hypercube {dim}"),
            Family::Custom => "custom".to_string(),
        }
    }
}

/// A finite regular connected graph, the horizontal world of the cylinder.
///
/// Vertex ids are dense integers `0..N-1`; torus vertices are encoded in
/// mixed radix with coordinate 0 fastest, so neighbor arithmetic is O(1) and
/// labels are stable across runs.
#[derive(Debug, Clone)]
pub struct BaseGraph {
    label: String,
    family: Family,
    n_vertices: usize,
    degree: usize,
    adjacency: Vec<Vec<usize>>,
    transitive: bool,
}

/// One row of the lazy kernel `P_N`: self-probability 1/2, each neighbor
/// 1/(2d), stored as exact rationals.
#[derive(Debug, Clone)]
pub struct KernelRow {
    pub source: usize,
    /// `(vertex, probability)` pairs sorted by vertex id; includes the
    /// self-entry.
    pub entries: Vec<(usize, Ratio<u64>)>,
}

impl KernelRow {
    pub fn prob(&self, target: usize) -> Ratio<u64> {
        self.entries
            .iter()
            .find(|(v, _)| *v == target)
            .map(|(_, p)| *p)
            .unwrap_or_else(|| Ratio::new(0, 1))
    }

    pub fn sum(&self) -> Ratio<u64> {
        self.entries
            .iter()
            .map(|(_, p)| *p)
            .fold(Ratio::new(0, 1), |acc, p| acc + p)
    }
}

/// Outcome of the structural checks run by [`validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub regularity: std::result::Result<(), String>,
    pub symmetry: std::result::Result<(), String>,
    pub connectivity: std::result::Result<(), String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.regularity.is_ok() && self.symmetry.is_ok() && self.connectivity.is_ok()
    }

    pub fn failures(&self) -> Vec<String> {
        [&self.regularity, &self.symmetry, &self.connectivity]
            .iter()
            .filter_map(|r| r.as_ref().err().cloned())
            .collect()
    }
}

impl BaseGraph {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn n(&self) -> usize {
        self.n_vertices
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn neighbors(&self, x: usize) -> &[usize] {
        &self.adjacency[x]
    }

    /// True when transitivity is guaranteed by the constructor.
    pub fn is_transitive(&self) -> bool {
        self.transitive
    }

    /// Build from explicit adjacency lists. Checks regularity, symmetry and
    /// connectivity, but cannot certify vertex-transitivity; the result is
    /// marked non-transitive.
    pub fn from_adjacency(label: impl Into<String>, adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::invalid("graph must have at least one vertex"));
        }
        let degree = adjacency[0].len();
        let mut g = BaseGraph {
            label: label.into(),
            family: Family::Custom,
            n_vertices: n,
            degree,
            adjacency,
            transitive: false,
        };
        for row in &mut g.adjacency {
            row.sort_unstable();
        }
        let report = validate(&g);
        if !report.all_passed() {
            return Err(Error::Validation(report.failures().join("; ")));
        }
        Ok(g)
    }

    /// Canonical planar/em bedding coordinates per vertex, used when exporting
    /// cluster geometry: cycle and complete graphs map to the unit circle,
    /// tori to grid coordinates, generalized Petersen graphs to the two-ring
    /// layout, hypercubes to their 0/1 coordinates.
    pub fn embedding(&self, x: usize) -> Vec<f64> {
        match &self.family {
            Family::Cycle { n } | Family::Complete { n } => {
                let theta = 2.0 * std::f64::consts::PI * x as f64 / *n as f64;
                vec![theta.cos(), theta.sin()]
            }
            Family::Torus { n, dim } => {
                let mut coords = Vec::with_capacity(*dim);
                let mut rest = x;
                for _ in 0..*dim {
                    coords.push((rest % n) as f64);
                    rest /= n;
                }
                coords
            }
            Family::Petersen { n, .. } => {
                let (ring, i) = if x < *n { (1.0, x) } else { (0.5, x - n) };
                let theta = 2.0 * std::f64::consts::PI * i as f64 / *n as f64;
                vec![ring * theta.cos(), ring * theta.sin()]
            }
            Family::Hypercube { dim } => (0..*dim).map(|b| ((x >> b) & 1) as f64).collect(),
            Family::Custom => {
                let theta = 2.0 * std::f64::consts::PI * x as f64 / self.n_vertices as f64;
                vec![theta.cos(), theta.sin()]
            }
        }
    }
}

/// Cycle `Z_N`, 2-regular; vertex `i` adjacent to `i +- 1 mod N`.
pub fn build_cycle(n: usize) -> Result<BaseGraph> {
    if n < 3 {
        return Err(Error::invalid(format!(
            "cycle needs N >= 3 to stay a simple graph, got {n}"
        )));
    }
    let adjacency = (0..n)
        .map(|i| {
            let mut row = vec![(i + n - 1) % n, (i + 1) % n];
            row.sort_unstable();
            row
        })
        .collect();
    Ok(BaseGraph {
        label: format!("cycle({n})"),
        family: Family::Cycle { n },
        n_vertices: n,
        degree: 2,
        adjacency,
        transitive: true,
    })
}

/// Square torus `Z_n^dim` on `n^dim` vertices, `2*dim`-regular. Vertices are
/// digit vectors in base `n`, coordinate 0 fastest.
pub fn build_torus(n: usize, dim: usize) -> Result<BaseGraph> {
    if n < 3 {
        return Err(Error::invalid(format!("torus needs n >= 3, got {n}")));
    }
    if dim < 1 {
        return Err(Error::invalid("torus needs dim >= 1"));
    }
    let mut n_vertices: usize = 1;
    for _ in 0..dim {
        n_vertices = n_vertices
            .checked_mul(n)
            .filter(|&v| v <= 1 << 26)
            .ok_or_else(|| Error::invalid(format!("torus size n^dim overflows: n={n} dim={dim}")))?;
    }
    let mut strides = Vec::with_capacity(dim);
    let mut s = 1usize;
    for _ in 0..dim {
        strides.push(s);
        s *= n;
    }
    let adjacency = (0..n_vertices)
        .map(|v| {
            let mut row = Vec::with_capacity(2 * dim);
            for (axis, &stride) in strides.iter().enumerate() {
                let digit = (v / stride) % n;
                let up = v - digit * stride + ((digit + 1) % n) * stride;
                let down = v - digit * stride + ((digit + n - 1) % n) * stride;
                let _ = axis;
                row.push(up);
                row.push(down);
            }
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    Ok(BaseGraph {
        label: format!("torus({n}^{dim})"),
        family: Family::Torus { n, dim },
        n_vertices,
        degree: 2 * dim,
        adjacency,
        transitive: true,
    })
}

/// Generalized Petersen graph `GP(n, k)`: outer cycle `u_i`, inner star
/// polygon `v_i ~ v_{i+k}`, spokes `u_i ~ v_i`. 3-regular on `2n` vertices.
///
/// Rejects parameter pairs with `k^2 != +-1 (mod n)`: those graphs are not
/// vertex-transitive, and silently accepting them would poison every
/// downstream statistic that leans on transitivity.
pub fn build_generalized_petersen(n: usize, k: usize) -> Result<BaseGraph> {
    if n < 3 {
        return Err(Error::invalid(format!("GP(n,k) needs n >= 3, got n={n}")));
    }
    if k < 1 || 2 * k >= n {
        return Err(Error::invalid(format!(
            "GP(n,k) needs 1 <= k < n/2, got n={n} k={k}"
        )));
    }
    let k2 = (k * k) % n;
    if k2 != 1 % n && k2 != (n - 1) % n {
        return Err(Error::NotVertexTransitive(format!(
            "GP({n},{k}): k^2 = {k2} (mod {n}), need k^2 = +-1 (mod n)"
        )));
    }
    let outer = |i: usize| i;
    let inner = |i: usize| n + i;
    let mut adjacency = vec![Vec::with_capacity(3); 2 * n];
    for i in 0..n {
        adjacency[outer(i)] = vec![outer((i + 1) % n), outer((i + n - 1) % n), inner(i)];
        adjacency[inner(i)] = vec![inner((i + k) % n), inner((i + n - k) % n), outer(i)];
        adjacency[outer(i)].sort_unstable();
        adjacency[inner(i)].sort_unstable();
    }
    Ok(BaseGraph {
        label: format!("GP({n},{k})"),
        family: Family::Petersen { n, k },
        n_vertices: 2 * n,
        degree: 3,
        adjacency,
        transitive: true,
    })
}

/// Complete graph `K_N`, `(N-1)`-regular.
pub fn build_complete(n: usize) -> Result<BaseGraph> {
    if n < 2 {
        return Err(Error::invalid(format!("complete graph needs N >= 2, got {n}")));
    }
    let adjacency = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).collect())
        .collect();
    Ok(BaseGraph {
        label: format!("complete({n})"),
        family: Family::Complete { n },
        n_vertices: n,
        degree: n - 1,
        adjacency,
        transitive: true,
    })
}

/// Hypercube `{0,1}^dim`, `dim`-regular on `2^dim` vertices.
pub fn build_hypercube(dim: usize) -> Result<BaseGraph> {
    if dim < 1 {
        return Err(Error::invalid("hypercube needs dim >= 1"));
    }
    if dim > 22 {
        return Err(Error::invalid(format!("hypercube dim {dim} too large")));
    }
    let n = 1usize << dim;
    let adjacency = (0..n)
        .map(|v| {
            let mut row: Vec<usize> = (0..dim).map(|b| v ^ (1 << b)).collect();
            row.sort_unstable();
            row
        })
        .collect();
    Ok(BaseGraph {
        label: format!("hypercube({dim})"),
        family: Family::Hypercube { dim },
        n_vertices: n,
        degree: dim,
        adjacency,
        transitive: true,
    })
}

/// One row of `P_N` at vertex `x`, in exact rationals.
pub fn kernel_row(g: &BaseGraph, x: usize) -> Result<KernelRow> {
    if x >= g.n() {
        return Err(Error::invalid(format!(
            "vertex {x} out of range for graph on {} vertices",
            g.n()
        )));
    }
    let d = g.degree() as u64;
    let mut entries: Vec<(usize, Ratio<u64>)> = g
        .neighbors(x)
        .iter()
        .map(|&v| (v, Ratio::new(1, 2 * d)))
        .collect();
    entries.push((x, Ratio::new(1, 2)));
    entries.sort_unstable_by_key(|(v, _)| *v);
    Ok(KernelRow { source: x, entries })
}

/// Structural checks: regularity, adjacency symmetry and irreflexivity,
/// connectivity by traversal. Failures are reported, not panicked.
pub fn validate(g: &BaseGraph) -> ValidationReport {
    let n = g.n();
    let mut regularity = Ok(());
    for (v, row) in g.adjacency.iter().enumerate() {
        if row.len() != g.degree() {
            regularity = Err(format!(
                "vertex {v} has {} neighbors, expected degree {}",
                row.len(),
                g.degree()
            ));
            break;
        }
        if row.windows(2).any(|w| w[0] == w[1]) {
            regularity = Err(format!("vertex {v} lists a repeated neighbor"));
            break;
        }
    }

    let mut symmetry = Ok(());
    'sym: for (v, row) in g.adjacency.iter().enumerate() {
        for &w in row {
            if w >= n {
                symmetry = Err(format!("vertex {v} lists out-of-range neighbor {w}"));
                break 'sym;
            }
            if w == v {
                symmetry = Err(format!("vertex {v} lists itself as a neighbor"));
                break 'sym;
            }
            if g.adjacency[w].binary_search(&v).is_err() {
                symmetry = Err(format!("edge {v}->{w} has no reverse {w}->{v}"));
                break 'sym;
            }
        }
    }

    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1usize;
    while let Some(v) = stack.pop() {
        for &w in g.neighbors(v) {
            if w < n && !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    let connectivity = if count == n {
        Ok(())
    } else {
        Err(format!("graph has {count} reachable vertices out of {n}"))
    };

    ValidationReport {
        regularity,
        symmetry,
        connectivity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_construction() {
        let g = build_cycle(3).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.degree(), 2);
        assert!(validate(&g).all_passed());

        let g = build_cycle(64).unwrap();
        for i in 0..64 {
            let mut expect = vec![(i + 63) % 64, (i + 1) % 64];
            expect.sort_unstable();
            assert_eq!(g.neighbors(i), &expect[..]);
        }

        assert!(matches!(build_cycle(2), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn torus_construction() {
        let g = build_torus(3, 2).unwrap();
        assert_eq!(g.n(), 9);
        assert_eq!(g.degree(), 4);
        assert!(validate(&g).all_passed());

        assert_eq!(build_torus(9, 2).unwrap().n(), 81);
        assert_eq!(build_torus(15, 2).unwrap().n(), 225);
        assert!(build_torus(3, 40).is_err());
    }

    #[test]
    fn cycle_equals_one_dimensional_torus() {
        for n in [3usize, 4, 7, 16] {
            let c = build_cycle(n).unwrap();
            let t = build_torus(n, 1).unwrap();
            for v in 0..n {
                assert_eq!(c.neighbors(v), t.neighbors(v), "n={n} v={v}");
            }
        }
    }

    #[test]
    fn petersen_construction() {
        let nauru = build_generalized_petersen(12, 5).unwrap();
        assert_eq!(nauru.n(), 24);
        assert_eq!(nauru.degree(), 3);
        assert!(validate(&nauru).all_passed());

        let petersen = build_generalized_petersen(5, 2).unwrap();
        assert_eq!(petersen.n(), 10);
        assert_eq!(petersen.degree(), 3);
        assert!(validate(&petersen).all_passed());

        assert!(matches!(
            build_generalized_petersen(7, 2),
            Err(Error::NotVertexTransitive(_))
        ));
    }

    #[test]
    fn complete_and_hypercube() {
        let k4 = build_complete(4).unwrap();
        assert_eq!(k4.degree(), 3);
        assert!(validate(&k4).all_passed());

        let h3 = build_hypercube(3).unwrap();
        assert_eq!(h3.n(), 8);
        assert_eq!(h3.degree(), 3);
        assert!(validate(&h3).all_passed());

        let h1 = build_hypercube(1).unwrap();
        assert_eq!(h1.n(), 2);
        assert_eq!(h1.degree(), 1);
        assert!(validate(&h1).all_passed());
    }

    #[test]
    fn kernel_rows_are_exact() {
        let g = build_cycle(4).unwrap();
        let row = kernel_row(&g, 0).unwrap();
        assert_eq!(row.prob(0), Ratio::new(1, 2));
        assert_eq!(row.prob(1), Ratio::new(1, 4));
        assert_eq!(row.prob(3), Ratio::new(1, 4));
        assert_eq!(row.prob(2), Ratio::new(0, 1));
        assert_eq!(row.sum(), Ratio::new(1, 1));

        let g = build_complete(3).unwrap();
        let row = kernel_row(&g, 0).unwrap();
        assert_eq!(row.prob(0), Ratio::new(1, 2));
        assert_eq!(row.prob(1), Ratio::new(1, 4));
        assert_eq!(row.prob(2), Ratio::new(1, 4));
        assert_eq!(row.sum(), Ratio::new(1, 1));

        let g = build_generalized_petersen(12, 5).unwrap();
        for x in 0..g.n() {
            let row = kernel_row(&g, x).unwrap();
            assert_eq!(row.prob(x), Ratio::new(1, 2));
            for &v in g.neighbors(x) {
                assert_eq!(row.prob(v), Ratio::new(1, 6));
            }
            assert_eq!(row.sum(), Ratio::new(1, 1));
        }

        assert!(kernel_row(&build_cycle(4).unwrap(), 4).is_err());
    }

    #[test]
    fn kernel_preserves_uniform_exactly() {
        // Pushing the uniform law through one lazy step stays uniform:
        // sum_x (1/N) P(x, y) = 1/N, in exact rationals.
        for g in [
            build_cycle(5).unwrap(),
            build_torus(3, 2).unwrap(),
            build_generalized_petersen(5, 2).unwrap(),
            build_hypercube(3).unwrap(),
        ] {
            let n = g.n() as u64;
            for y in 0..g.n() {
                let mut mass = Ratio::new(0u64, 1u64);
                for x in 0..g.n() {
                    let row = kernel_row(&g, x).unwrap();
                    mass += Ratio::new(1, n) * row.prob(y);
                }
                assert_eq!(mass, Ratio::new(1, n));
            }
        }
    }

    #[test]
    fn validate_reports_failures() {
        // Asymmetric adjacency: 0 lists 1 but 1 does not list 0.
        let g = BaseGraph {
            label: "broken".into(),
            family: Family::Custom,
            n_vertices: 3,
            degree: 1,
            adjacency: vec![vec![1], vec![2], vec![1]],
            transitive: false,
        };
        let report = validate(&g);
        assert!(report.symmetry.is_err());

        // Two disjoint triangles.
        let adj = vec![
            vec![1, 2],
            vec![0, 2],
            vec![0, 1],
            vec![4, 5],
            vec![3, 5],
            vec![3, 4],
        ];
        let g = BaseGraph {
            label: "disjoint".into(),
            family: Family::Custom,
            n_vertices: 6,
            degree: 2,
            adjacency: adj,
            transitive: false,
        };
        let report = validate(&g);
        assert!(report.regularity.is_ok());
        assert!(report.symmetry.is_ok());
        assert!(report.connectivity.is_err());
        assert!(!report.all_passed());
    }

    #[test]
    fn from_adjacency_rejects_broken_graphs() {
        assert!(BaseGraph::from_adjacency("bad", vec![vec![1], vec![0], vec![0]]).is_err());
        let ok = BaseGraph::from_adjacency(
            "path-cycle",
            vec![vec![1, 2], vec![0, 2], vec![0, 1]],
        )
        .unwrap();
        assert!(!ok.is_transitive());
        assert_eq!(ok.degree(), 2);
    }

    #[test]
    fn constructors_pass_validation() {
        for g in [
            build_cycle(8).unwrap(),
            build_torus(4, 2).unwrap(),
            build_generalized_petersen(12, 5).unwrap(),
            build_complete(5).unwrap(),
            build_hypercube(4).unwrap(),
        ] {
            assert!(validate(&g).all_passed(), "{}", g.label());
            assert!(g.is_transitive());
            for x in 0..g.n() {
                assert_eq!(kernel_row(&g, x).unwrap().sum(), Ratio::new(1, 1));
            }
        }
    }
}
