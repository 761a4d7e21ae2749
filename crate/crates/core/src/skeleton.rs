//! Human body graph: joints, bones, limb chains and normalized adjacency.
//!
//! Joint indexing for the 17-joint layout:
//!
//! | id | joint       | ldof | id | joint       | ldof |
//! |----|-------------|------|----|-------------|------|
//! | 0  | pelvis      | 0    | 9  | neck/nose   | 0    |
//! | 1  | r_hip       | 1    | 10 | head        | 0    |
//! | 2  | r_knee      | 2    | 11 | l_shoulder  | 1    |
//! | 3  | r_ankle     | 3    | 12 | l_elbow     | 2    |
//! | 4  | l_hip       | 1    | 13 | l_wrist     | 3    |
//! | 5  | l_knee      | 2    | 14 | r_shoulder  | 1    |
//! | 6  | l_ankle     | 3    | 15 | r_elbow     | 2    |
//! | 7  | spine       | 0    | 16 | r_wrist     | 3    |
//! | 8  | thorax      | 0    |    |             |      |
//!
//! Limb chains (proximal → distal) are stored in the fixed order
//! right leg, left leg, left arm, right arm.

use crate::error::{contract_err, Result};
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub ldof: Vec<u8>,
    pub limbs: Vec<[usize; 3]>,
    pub flip_pairs: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    /// Builds and validates a topology.
    pub fn new(
        names: Vec<String>,
        edges: Vec<(usize, usize)>,
        ldof: Vec<u8>,
        limbs: Vec<[usize; 3]>,
        flip_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let topo = SkeletonTopology {
            names,
            edges,
            ldof,
            limbs,
            flip_pairs,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn h36m17() -> Self {
        let names = [
            "pelvis",
            "r_hip",
            "r_knee",
            "r_ankle",
            "l_hip",
            "l_knee",
            "l_ankle",
            "spine",
            "thorax",
            "neck",
            "head",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
        ];
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (0, 4),
            (4, 5),
            (5, 6),
            (0, 7),
            (7, 8),
            (8, 9),
            (9, 10),
            (8, 11),
            (11, 12),
            (12, 13),
            (8, 14),
            (14, 15),
            (15, 16),
        ];
        let ldof = vec![0, 1, 2, 3, 1, 2, 3, 0, 0, 0, 0, 1, 2, 3, 1, 2, 3];
        let limbs = vec![[1, 2, 3], [4, 5, 6], [11, 12, 13], [14, 15, 16]];
        let flip_pairs = vec![(1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            edges,
            ldof,
            limbs,
            flip_pairs,
        )
        .expect("built-in topology is valid")
    }

    pub fn joints(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints();
        if n == 0 {
            return Err(contract_err!("topology has no joints"));
        }
        if self.ldof.len() != n {
            return Err(contract_err!(
                "ldof has {} entries for {} joints",
                self.ldof.len(),
                n
            ));
        }
        if self.edges.len() != n - 1 {
            return Err(contract_err!(
                "a tree on {} joints needs {} edges",
                n,
                n - 1
            ));
        }
        let adj = self.neighbours()?;
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(j) = stack.pop() {
            for &k in &adj[j] {
                if !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(contract_err!("skeleton graph is not connected"));
        }
        for limb in &self.limbs {
            for w in limb.windows(2) {
                if !adj[w[0]].contains(&w[1]) {
                    return Err(contract_err!("limb {:?} is not a path", limb));
                }
            }
            for (i, &j) in limb.iter().enumerate() {
                if self.ldof[j] as usize != i + 1 {
                    return Err(contract_err!(
                        "joint {} at limb position {} has ldof {}",
                        j,
                        i,
                        self.ldof[j]
                    ));
                }
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for &(a, b) in &self.flip_pairs {
            if a >= n || b >= n || a == b {
                return Err(contract_err!("bad flip pair ({}, {})", a, b));
            }
            if perm[a] != a || perm[b] != b {
                return Err(contract_err!("joint listed in two flip pairs"));
            }
            perm.swap(a, b);
        }
        Ok(())
    }

    fn neighbours(&self) -> Result<Vec<Vec<usize>>> {
        let n = self.joints();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(contract_err!("edge ({}, {}) outside {} joints", a, b, n));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        Ok(adj)
    }

    /// Left/right swap as a permutation: `perm[j]` is the partner of `j`.
    /// The joint that is nobody's child.
    pub fn root(&self) -> usize {
        (0..self.joints())
            .find(|j| self.edges.iter().all(|&(_, c)| c != *j))
            .unwrap_or(0)
    }

    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.joints()).collect();
        for &(a, b) in &self.flip_pairs {
            perm.swap(a, b);
        }
        perm
    }

    /// Joints with the given LDoF, one per limb, limb-major.
    pub fn limb_joints_at(&self, ldof: u8) -> Vec<usize> {
        self.limbs.iter().map(|l| l[(ldof - 1) as usize]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn adjacency(&self) -> Result<NormalizedAdjacency> {
        NormalizedAdjacency::from_edges(&self.edges, self.joints())
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` as a dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    matrix: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_edges(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(contract_err!("adjacency over zero nodes"));
        }
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(contract_err!(
                    "edge ({}, {}) out of range for {} nodes",
                    u,
                    v,
                    n
                ));
            }
            a[u * n + v] = 1.0;
            a[v * n + u] = 1.0;
        }
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
        Ok(NormalizedAdjacency { n, matrix: a })
    }

    /// Path graph `0–1–…–(n−1)` over consecutive tokens.
    pub fn temporal_path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(&edges, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::from_f64(&[self.n, self.n], &self.matrix).expect("square matrix")
    }

    /// Number of non-zero entries, used by the FLOP accounting.
    pub fn nnz(&self) -> usize {
        self.matrix.iter().filter(|&&v| v != 0.0).count()
    }
}
