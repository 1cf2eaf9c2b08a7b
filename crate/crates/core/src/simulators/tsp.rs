use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{format_value, node_label, Feedback};
use crate::error::{Error, Result};

/// Largest instance the exhaustive oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    pub nodes: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_tour: Option<Vec<usize>>,
}

impl TspInstance {
    pub fn new(nodes: Vec<[f64; 2]>) -> Result<Self> {
        let inst = TspInstance {
            nodes,
            oracle_length: None,
            oracle_tour: None,
        };
        inst.check()?;
        Ok(inst)
    }

    /// `n` nodes uniform on [0, 100)².
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (0..n)
            .map(|_| [rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0])
            .collect();
        TspInstance::new(nodes)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.nodes.len() < 3 {
            return Err(Error::Contract(format!(
                "a tour instance needs at least 3 nodes, got {}",
                self.nodes.len()
            )));
        }
        if let Some(i) = self.nodes.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Contract(format!("node {i} has a non-finite coordinate")));
        }
        if let Some(t) = &self.oracle_tour {
            let v = self.tour_violations(t);
            if !v.is_empty() {
                return Err(Error::Contract(format!(
                    "oracle_tour is not a permutation: {}",
                    v.join(", ")
                )));
            }
        }
        if let Some(l) = self.oracle_length {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Contract(format!("oracle_length must be positive, got {l}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.nodes[i], self.nodes[j]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    pub fn tour_length(&self, tour: &[usize]) -> f64 {
        let n = tour.len();
        (0..n).map(|k| self.distance(tour[k], tour[(k + 1) % n])).sum()
    }

    /// Empty when `tour` visits every node exactly once.
    pub fn tour_violations(&self, tour: &[usize]) -> Vec<String> {
        let n = self.nodes.len();
        let mut seen = vec![0usize; n];
        let mut issues = Vec::new();
        for &v in tour {
            if v >= n {
                issues.push(format!("node {v} out of range"));
            } else {
                seen[v] += 1;
            }
        }
        for (v, c) in seen.iter().enumerate() {
            if *c > 1 {
                issues.push(format!("node {v} repeated"));
            }
        }
        for (v, c) in seen.iter().enumerate() {
            if *c == 0 {
                issues.push(format!("node {v} missing"));
            }
        }
        issues
    }

    pub(crate) fn feedback(&self, tour: &[usize]) -> Feedback {
        let n = tour.len();
        let edges: Vec<(usize, usize, f64)> = (0..n)
            .map(|k| {
                let (a, b) = (tour[k], tour[(k + 1) % n]);
                (a, b, self.distance(a, b))
            })
            .collect();
        let mut longest = edges[0];
        let mut shortest = edges[0];
        for e in &edges[1..] {
            if e.2 > longest.2 {
                longest = *e;
            }
            if e.2 < shortest.2 {
                shortest = *e;
            }
        }
        let pair = |e: (usize, usize, f64)| format!("{},{}", node_label(e.0), node_label(e.1));
        let cmp = if longest.2 > shortest.2 { ">" } else { "=" };
        let mut fb = Feedback::new(self.tour_length(tour));
        fb.statements
            .push(format!("distance({}) = {}", pair(longest), format_value(longest.2)));
        fb.statements.push(format!(
            "distance({}) {cmp} distance({})",
            pair(longest),
            pair(shortest)
        ));
        fb
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Exhaustive search over the (n-1)!/2 distinct tours starting at node 0.
/// Ties keep the lexicographically first tour.
pub fn brute_force_tsp(instance: &TspInstance) -> Result<(Vec<usize>, f64)> {
    let n = instance.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit {
            nodes: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n < 3 {
        return Err(Error::Contract(format!("need at least 3 nodes, got {n}")));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = instance.distance(i, j);
        }
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best_len = f64::INFINITY;
    let mut best_rest = rest.clone();
    loop {
        // Each undirected tour appears twice; keep the orientation whose
        // second node is smaller than its last.
        if rest[0] < rest[rest.len() - 1] {
            let mut len = dist[rest[0]] + dist[rest[rest.len() - 1] * n];
            for w in rest.windows(2) {
                len += dist[w[0] * n + w[1]];
            }
            if len < best_len {
                best_len = len;
                best_rest.copy_from_slice(&rest);
            }
        }
        if !next_permutation(&mut rest) {
            break;
        }
    }
    let mut tour = Vec::with_capacity(n);
    tour.push(0);
    tour.extend(best_rest);
    let len = instance.tour_length(&tour);
    Ok((tour, len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TspInstance {
        TspInstance::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap()
    }

    #[test]
    fn perimeter_of_unit_square() {
        assert_eq!(square().tour_length(&[0, 1, 2, 3]), 4.0);
    }

    #[test]
    fn brute_force_unit_square() {
        // The three distinct 4-node tours: the perimeter (4) and two crossing
        // tours (2 + 2*sqrt(2)).
        let inst = square();
        let all = [[0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3]];
        let lens: Vec<f64> = all.iter().map(|t| inst.tour_length(t)).collect();
        assert_eq!(lens[0], 4.0);
        assert!((lens[1] - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((lens[2] - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        let (tour, len) = brute_force_tsp(&inst).unwrap();
        assert_eq!(len, 4.0);
        assert_eq!(tour, vec![0, 1, 2, 3]);
    }

    #[test]
    fn brute_force_triangles() {
        let tri = TspInstance::new(vec![[0.0, 0.0], [5.0, 1.0], [2.0, 7.0]]).unwrap();
        let (tour, len) = brute_force_tsp(&tri).unwrap();
        assert_eq!(tour, vec![0, 1, 2]);
        assert_eq!(len, tri.tour_length(&[0, 1, 2]));
        let h = 3f64.sqrt() / 2.0;
        let eq = TspInstance::new(vec![[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap();
        assert!((brute_force_tsp(&eq).unwrap().1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_size_limit() {
        let big = TspInstance::random(11, 1).unwrap();
        assert!(matches!(brute_force_tsp(&big), Err(Error::SizeLimit { nodes: 11, .. })));
    }

    #[test]
    fn violations_name_repeats_and_gaps() {
        let inst = square();
        assert!(inst.tour_violations(&[0, 1, 2, 3]).is_empty());
        assert_eq!(
            inst.tour_violations(&[0, 1, 1, 3]).join(", "),
            "node 1 repeated, node 2 missing"
        );
        assert_eq!(inst.tour_violations(&[0, 1, 2]), vec!["node 3 missing"]);
        assert_eq!(
            inst.tour_violations(&[0, 1, 2, 9]),
            vec!["node 9 out of range", "node 3 missing"]
        );
    }

    #[test]
    fn feedback_statements_use_templates() {
        let inst = TspInstance::new(vec![[0.0, 0.0], [0.0, 1.0], [3.0, 1.0], [3.0, 0.0]]).unwrap();
        let fb = inst.feedback(&[0, 1, 2, 3]);
        assert_eq!(fb.objective, 8.0);
        assert_eq!(
            fb.statements,
            vec!["distance(v2,v3) = 3", "distance(v2,v3) > distance(v1,v2)"]
        );
    }

    #[test]
    fn rejects_degenerate_instances() {
        assert!(TspInstance::new(vec![[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(TspInstance::new(vec![[0.0, 0.0], [1.0, f64::NAN], [2.0, 2.0]]).is_err());
    }
}
