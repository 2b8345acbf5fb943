//! Dense solves for the tiny systems that show up in curve fitting.

use crate::scalar::Scalar;

/// Solves `m · x = rhs` by Gaussian elimination with partial pivoting.
///
/// Returns the solution together with the ratio of the smallest to largest
/// pivot magnitude, a cheap conditioning indicator. `None` when a pivot is
/// exactly zero.
pub fn solve<T: Scalar, const N: usize>(mut m: [[T; N]; N], mut rhs: [T; N]) -> Option<([T; N], T)> {
    let mut min_pivot = T::infinity();
    let mut max_pivot = T::zero();
    for col in 0..N {
        let pivot_row = (col..N).max_by(|&a, &b| {
            m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap_or(std::cmp::Ordering::Equal)
        })?;
        let pivot = m[pivot_row][col];
        if pivot == T::zero() || !pivot.is_finite() {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        min_pivot = min_pivot.min(pivot.abs());
        max_pivot = max_pivot.max(pivot.abs());
        for row in col + 1..N {
            let f = m[row][col] / pivot;
            if f == T::zero() {
                continue;
            }
            for k in col..N {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            let r = rhs[col];
            rhs[row] -= f * r;
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let mut acc = rhs[row];
        for k in row + 1..N {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some((x, min_pivot / max_pivot))
}
