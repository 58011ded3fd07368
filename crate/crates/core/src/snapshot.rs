//! Versioned cluster snapshot format.
//!
//! ```text
//! idla-snapshot v1
//! graph cycle 8
//! N 8 T 16
//! 3 1
//! 5 1
//! ...
//! ```
//!
//! One `x y` pair per occupied site above level 0, sorted by `(y, x)`.
//! The round trip text -> cluster -> text is bit-exact.

use crate::error::{Error, Result};
use crate::graphs::{BaseGraph, Family};
use crate::idla::Cluster;
use sha2::{Digest, Sha256};

pub const SNAPSHOT_MAGIC: &str = "idla-snapshot v1";

/// Parsed snapshot header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotHeader {
    /// Family token and parameters, e.g. `cycle 8`.
    pub graph: String,
    pub n: usize,
    pub t: u64,
}

/// Render a cluster as snapshot text.
pub fn write_snapshot(cluster: &Cluster, g: &BaseGraph) -> String {
    let mut out = String::new();
    out.push_str(SNAPSHOT_MAGIC);
    out.push('\n');
    out.push_str(&format!("graph {}\n", g.family().header_token()));
    out.push_str(&format!("N {} T {}\n", cluster.n(), cluster.particles()));
    for (x, y) in cluster.sites_sorted() {
        out.push_str(&format!("{x} {y}\n"));
    }
    out
}

/// Parse snapshot text back into a header and cluster.
pub fn parse_snapshot(text: &str) -> Result<(SnapshotHeader, Cluster)> {
    let mut lines = text.lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::Parse("empty snapshot".into()))?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::Parse(format!("unknown snapshot header `{magic}`")));
    }
    let graph_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing graph line".into()))?;
    let graph = graph_line
        .strip_prefix("graph ")
        .ok_or_else(|| Error::Parse(format!("malformed graph line `{graph_line}`")))?
        .to_string();
    let size_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing size line".into()))?;
    let parts: Vec<&str> = size_line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "N" || parts[2] != "T" {
        return Err(Error::Parse(format!("malformed size line `{size_line}`")));
    }
    let n: usize = parts[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad N `{}`", parts[1])))?;
    let t: u64 = parts[3]
        .parse()
        .map_err(|_| Error::Parse(format!("bad T `{}`", parts[3])))?;

    let mut cluster = Cluster::new_flat(n);
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let x: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad site line `{line}`")))?;
        let y: i64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad site line `{line}`")))?;
        if it.next().is_some() {
            return Err(Error::Parse(format!("trailing tokens on `{line}`")));
        }
        if x >= n || y < 1 {
            return Err(Error::Parse(format!("site ({x}, {y}) out of range")));
        }
        if !cluster.insert_site(x, y) {
            return Err(Error::Parse(format!("duplicate site ({x}, {y})")));
        }
    }
    cluster.set_particles(t);
    let header = SnapshotHeader { graph, n, t };
    Ok((header, cluster))
}

/// Rebuild the base graph named by a snapshot header token.
pub fn graph_from_header(token: &str) -> Result<BaseGraph> {
    let parts: Vec<&str> = token.split_whitespace().collect();
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Parse(format!("bad graph parameter `{s}`")))
    };
    match parts.as_slice() {
        ["cycle", n] => crate::graphs::build_cycle(parse(n)?),
        ["torus", n, dim] => crate::graphs::build_torus(parse(n)?, parse(dim)?),
        ["petersen", n, k] => crate::graphs::build_generalized_petersen(parse(n)?, parse(k)?),
        ["complete", n] => crate::graphs::build_complete(parse(n)?),
        ["hypercube", dim] => crate::graphs::build_hypercube(parse(dim)?),
        _ => Err(Error::Parse(format!("unknown graph token `{token}`"))),
    }
}

/// Hex SHA-256 of arbitrary text; used for config echoes and snapshot
/// identity in the permutation tests.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// True when the header token names the same family as `g`.
pub fn header_matches(header: &SnapshotHeader, g: &BaseGraph) -> bool {
    header.graph == g.family().header_token() && header.n == g.n()
}

impl Family {
    /// Inverse of [`Family::header_token`] for the known families.
    pub fn from_header_token(token: &str) -> Result<Family> {
        let g = graph_from_header(token)?;
        Ok(g.family().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_cycle;
    use crate::idla::{run, WalkConfig};
    use crate::spectral::closed_form_cycle;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = build_cycle(8).unwrap();
        let s = closed_form_cycle(8).unwrap();
        let (cluster, _) = run(&g, &s, 16, 5, 0, WalkConfig::default(), false).unwrap();
        let text = write_snapshot(&cluster, &g);
        let (header, parsed) = parse_snapshot(&text).unwrap();
        assert_eq!(header.graph, "cycle 8");
        assert_eq!(header.n, 8);
        assert_eq!(header.t, 16);
        assert_eq!(cluster.symmetric_difference(&parsed), 0);
        assert_eq!(write_snapshot(&parsed, &g), text);
        assert!(header_matches(&header, &g));
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_snapshot("").is_err());
        assert!(parse_snapshot("bogus v9\ngraph cycle 8\nN 8 T 0\n").is_err());
        assert!(parse_snapshot("idla-snapshot v1\ngraph cycle 8\nN 8 T 1\n9 1\n").is_err());
        assert!(parse_snapshot("idla-snapshot v1\ngraph cycle 8\nN 8 T 1\n0 0\n").is_err());
        assert!(parse_snapshot("idla-snapshot v1\ngraph cycle 8\nN 8 T 2\n0 1\n0 1\n").is_err());
    }

    #[test]
    fn header_graph_rebuild() {
        for token in ["cycle 8", "torus 3 2", "petersen 12 5", "complete 4", "hypercube 3"] {
            let g = graph_from_header(token).unwrap();
            assert_eq!(g.family().header_token(), token);
        }
        assert!(graph_from_header("moebius 7").is_err());
    }

    #[test]
    fn hash_is_stable() {
        // SHA-256 of the empty string, a fixed external reference value.
        assert_eq!(
            content_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_ne!(content_hash("a"), content_hash("b"));
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_clusters(
            n in 2usize..40,
            sites in proptest::collection::btree_set((0usize..40, 1i64..30), 0..80)
        ) {
            let g = build_cycle(n.max(3)).unwrap();
            let mut cluster = crate::idla::Cluster::new_flat(g.n());
            for (x, y) in sites {
                if x < g.n() {
                    cluster.insert_site(x, y);
                }
            }
            let text = write_snapshot(&cluster, &g);
            let (_, parsed) = parse_snapshot(&text).unwrap();
            prop_assert_eq!(cluster.symmetric_difference(&parsed), 0);
            prop_assert_eq!(write_snapshot(&parsed, &g), text);
        }
    }
}
