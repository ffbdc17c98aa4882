//! Decomposition of 2×2 real blocks in the basis
//! σ₀ = I, σ₁ = [[0,1],[1,0]], σ₂ = [[0,-1],[1,0]], σ₃ = [[1,0],[0,-1]].
//!
//! Tied blocks `[[a, b], [-b, a]]` live in span{σ₀, σ₂} (scaling and
//! rotation); σ₁ and σ₃ (reflections) are orthogonal to it.

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub type Block = [[f64; 2]; 2];

pub const SIGMA: [Block; 4] = [
    [[1.0, 0.0], [0.0, 1.0]],
    [[0.0, 1.0], [1.0, 0.0]],
    [[0.0, -1.0], [1.0, 0.0]],
    [[1.0, 0.0], [0.0, -1.0]],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

pub fn pauli_decompose(m: Block) -> PauliCoeffs {
    let [[p, q], [r, s]] = m;
    PauliCoeffs {
        c0: (p + s) / 2.0,
        c1: (q + r) / 2.0,
        c2: (r - q) / 2.0,
        c3: (p - s) / 2.0,
    }
}

pub fn reconstruct(c: PauliCoeffs) -> Block {
    let coeffs = [c.c0, c.c1, c.c2, c.c3];
    let mut out = [[0.0; 2]; 2];
    for (k, sigma) in SIGMA.iter().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += coeffs[k] * sigma[i][j];
            }
        }
    }
    out
}

/// Block `[[a, b], [-b, a]]`.
pub fn tied_block(a: f64, b: f64) -> Block {
    [[a, b], [-b, a]]
}

/// Frobenius-nearest tied block and the distance to it. The projection onto
/// span{σ₀, σ₂} keeps `c0` and `c2`, i.e. `a = c0`, `b = -c2`.
pub fn nearest_tied(m: Block) -> (Block, f64) {
    let c = pauli_decompose(m);
    let t = tied_block(c.c0, -c.c2);
    let mut d2: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            d2 += (m[i][j] - t[i][j]).powi(2);
        }
    }
    (t, d2.sqrt())
}
