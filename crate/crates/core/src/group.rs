//! Discrete roto-reflection groups: D4, D4h, O, Oh, plus the trivial group.
//!
//! Elements are signed permutation matrices acting on (x, y, z) column
//! vectors. Groups are enumerated by breadth-first closure from the identity
//! over a fixed generator list, which fixes a canonical element ordering that
//! every downstream channel layout depends on. The Cayley table, inverses,
//! and the orientation-channel permutations `rho(h)` are all derived from
//! that ordering.

use crate::error::{CoreError, Result};
use std::fmt;

/// One rotation or reflection: a 3x3 signed permutation matrix with entries
/// in {-1, 0, +1}, acting on (x, y, z) column vectors.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    pub matrix: [[i32; 3]; 3],
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement {
        matrix: [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    };

    pub fn new(matrix: [[i32; 3]; 3]) -> Self {
        GroupElement { matrix }
    }

    /// Matrix product `self * rhs` (apply `rhs` first, then `self`).
    pub fn compose(&self, rhs: &GroupElement) -> GroupElement {
        let mut out = [[0i32; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0;
                for k in 0..3 {
                    acc += self.matrix[r][k] * rhs.matrix[k][c];
                }
                out[r][c] = acc;
            }
        }
        GroupElement { matrix: out }
    }

    /// Inverse, which for an orthogonal integer matrix is the transpose.
    pub fn inverse(&self) -> GroupElement {
        let mut out = [[0i32; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = self.matrix[c][r];
            }
        }
        GroupElement { matrix: out }
    }

    /// Apply to an (x, y, z) vector.
    pub fn apply(&self, v: [i32; 3]) -> [i32; 3] {
        let m = &self.matrix;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn determinant(&self) -> i32 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// True when the matrix is a signed permutation: exactly one nonzero
    /// entry of magnitude 1 per row and per column.
    pub fn is_signed_permutation(&self) -> bool {
        let mut col_counts = [0usize; 3];
        for r in 0..3 {
            let mut row_count = 0;
            for c in 0..3 {
                match self.matrix[r][c] {
                    0 => {}
                    1 | -1 => {
                        row_count += 1;
                        col_counts[c] += 1;
                    }
                    _ => return false,
                }
            }
            if row_count != 1 {
                return false;
            }
        }
        col_counts == [1, 1, 1]
    }

    /// True when the element maps the z-axis to itself up to sign.
    pub fn fixes_z_axis(&self) -> bool {
        self.matrix[2][0] == 0 && self.matrix[2][1] == 0 && self.matrix[2][2].abs() == 1
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{:?} {:?} {:?}]",
            self.matrix[0], self.matrix[1], self.matrix[2]
        )
    }
}

/// The five supported symmetry groups.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum GroupName {
    /// Trivial group: translations only, the plain-CNN baseline.
    Z3Trivial,
    /// Orientation-preserving symmetries of a square-based cuboid (order 8).
    D4,
    /// All symmetries of a square-based cuboid (order 16).
    D4h,
    /// Orientation-preserving symmetries of a cube (order 24).
    O,
    /// All symmetries of a cube (order 48).
    Oh,
}

impl GroupName {
    pub const ALL: [GroupName; 5] = [
        GroupName::Z3Trivial,
        GroupName::D4,
        GroupName::D4h,
        GroupName::O,
        GroupName::Oh,
    ];

    pub const NONTRIVIAL: [GroupName; 4] =
        [GroupName::D4, GroupName::D4h, GroupName::O, GroupName::Oh];

    /// Expected group order.
    pub fn order(&self) -> usize {
        match self {
            GroupName::Z3Trivial => 1,
            GroupName::D4 => 8,
            GroupName::D4h => 16,
            GroupName::O => 24,
            GroupName::Oh => 48,
        }
    }

    /// True when the group only makes sense on cubic kernels (kz = ky = kx).
    /// D4/D4h elements map the z-axis to itself up to sign, so they tolerate
    /// kz != kx as long as ky = kx.
    pub fn requires_cubic(&self) -> bool {
        matches!(self, GroupName::O | GroupName::Oh)
    }

    pub fn parse(s: &str) -> Result<GroupName> {
        match s.to_ascii_lowercase().as_str() {
            "z3" | "trivial" | "z3_trivial" => Ok(GroupName::Z3Trivial),
            "d4" => Ok(GroupName::D4),
            "d4h" => Ok(GroupName::D4h),
            "o" => Ok(GroupName::O),
            "oh" => Ok(GroupName::Oh),
            other => Err(CoreError::UnknownGroup(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupName::Z3Trivial => "trivial",
            GroupName::D4 => "d4",
            GroupName::D4h => "d4h",
            GroupName::O => "o",
            GroupName::Oh => "oh",
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 90-degree rotation around the z-axis: (x, y, z) -> (-y, x, z).
pub const ROT_Z_90: GroupElement = GroupElement {
    matrix: [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
};

/// 180-degree rotation around the y-axis: (x, y, z) -> (-x, y, -z).
pub const ROT_Y_180: GroupElement = GroupElement {
    matrix: [[-1, 0, 0], [0, 1, 0], [0, 0, -1]],
};

/// Reflection in the z-plane: (x, y, z) -> (x, y, -z).
pub const MIRROR_Z: GroupElement = GroupElement {
    matrix: [[1, 0, 0], [0, 1, 0], [0, 0, -1]],
};

/// 120-degree rotation around the (1,1,1) diagonal: (x, y, z) -> (y, z, x).
pub const ROT_DIAG_120: GroupElement = GroupElement {
    matrix: [[0, 1, 0], [0, 0, 1], [1, 0, 0]],
};

/// Central inversion: (x, y, z) -> (-x, -y, -z).
pub const INVERSION: GroupElement = GroupElement {
    matrix: [[-1, 0, 0], [0, -1, 0], [0, 0, -1]],
};

/// Fixed generator set per group. The closure of these sets defines both the
/// group and its canonical element ordering.
pub fn generators(name: GroupName) -> Vec<GroupElement> {
    match name {
        GroupName::Z3Trivial => vec![],
        GroupName::D4 => vec![ROT_Z_90, ROT_Y_180],
        GroupName::D4h => vec![ROT_Z_90, ROT_Y_180, MIRROR_Z],
        GroupName::O => vec![ROT_Z_90, ROT_DIAG_120],
        GroupName::Oh => vec![ROT_Z_90, ROT_DIAG_120, INVERSION],
    }
}

/// The regular-representation channel permutations.
///
/// `perms[h][idx(g)] = idx(h^-1 * g)`: a feature map with orientation
/// channels, stored in canonical element order, transforms under `h` by
/// gathering channel `perms[h][i]` into slot `i` (after its voxels are
/// rotated by `h`).
#[derive(Clone, Debug)]
pub struct PermutationRep {
    pub group_name: GroupName,
    pub perms: Vec<Vec<usize>>,
}

/// A fully-built symmetry group: canonical element list, Cayley table,
/// inverse table, and the channel permutations. Immutable after construction.
#[derive(Clone, Debug)]
pub struct SymmetryGroup {
    pub name: GroupName,
    pub elements: Vec<GroupElement>,
    /// `cayley[i][j]` = index of `elements[i] * elements[j]`.
    pub cayley: Vec<Vec<usize>>,
    /// `cayley[i][inverse[i]] = 0`.
    pub inverse: Vec<usize>,
    pub rho: PermutationRep,
}

const MAX_ORDER: usize = 48;

impl SymmetryGroup {
    /// Enumerate the group by breadth-first closure from the identity,
    /// multiplying each discovered element on the right by each generator in
    /// order. FIFO discipline makes the element ordering deterministic.
    pub fn build(name: GroupName) -> Result<SymmetryGroup> {
        let gens = generators(name);
        let mut elements = vec![GroupElement::IDENTITY];
        let mut head = 0;
        while head < elements.len() {
            let current = elements[head];
            head += 1;
            for g in &gens {
                let candidate = current.compose(g);
                if !elements.contains(&candidate) {
                    elements.push(candidate);
                    if elements.len() > MAX_ORDER {
                        return Err(CoreError::ClosureOverflow { limit: MAX_ORDER });
                    }
                }
            }
        }

        let n = elements.len();
        let index_of = |e: &GroupElement| -> Result<usize> {
            elements
                .iter()
                .position(|x| x == e)
                .ok_or(CoreError::ClosureOverflow { limit: MAX_ORDER })
        };

        let mut cayley = vec![vec![0usize; n]; n];
        for i in 0..n {
            for j in 0..n {
                cayley[i][j] = index_of(&elements[i].compose(&elements[j]))?;
            }
        }

        let mut inverse = vec![0usize; n];
        for i in 0..n {
            inverse[i] = index_of(&elements[i].inverse())?;
        }

        let rho = derive_rho_from_tables(name, &cayley, &inverse);
        Ok(SymmetryGroup {
            name,
            elements,
            cayley,
            inverse,
            rho,
        })
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn index_of(&self, e: &GroupElement) -> Option<usize> {
        self.elements.iter().position(|x| x == e)
    }
}

fn derive_rho_from_tables(
    group_name: GroupName,
    cayley: &[Vec<usize>],
    inverse: &[usize],
) -> PermutationRep {
    let n = cayley.len();
    let perms = (0..n)
        .map(|h| {
            let hinv = inverse[h];
            (0..n).map(|g| cayley[hinv][g]).collect()
        })
        .collect();
    PermutationRep { group_name, perms }
}

/// Orientation-channel permutations under the left regular action:
/// a filter with channels indexed by group elements transforms under `h` as
/// `[h . psi](g) = psi(h^-1 g)`.
pub fn derive_rho(group: &SymmetryGroup) -> PermutationRep {
    derive_rho_from_tables(group.name, &group.cayley, &group.inverse)
}

/// Compose two gather maps: `gather(gather(x, inner), outer)` equals
/// `gather(x, compose_gather(outer, inner))`. Under this convention
/// `rho.perms[cayley[i][j]] == compose_gather(&perms[i], &perms[j])`.
pub fn compose_gather(outer: &[usize], inner: &[usize]) -> Vec<usize> {
    outer.iter().map(|&o| inner[o]).collect()
}

/// All 48 signed permutation matrices, the brute-force oracle for Oh.
pub fn all_signed_permutations() -> Vec<GroupElement> {
    const AXES: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::with_capacity(48);
    for perm in AXES {
        for signs in 0..8u32 {
            let mut m = [[0i32; 3]; 3];
            for (r, &c) in perm.iter().enumerate() {
                m[r][c] = if signs >> r & 1 == 1 { -1 } else { 1 };
            }
            out.push(GroupElement::new(m));
        }
    }
    out
}
