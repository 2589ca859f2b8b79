//! Dense LU factorisation with partial pivoting.

use num_traits::Float;

/// Solves `a · x = b` in place (`a` is row-major `n × n`, overwritten by its
/// factors; `b` is overwritten by `x`). Returns `false` when a pivot vanishes.
pub fn lu_solve_in_place<T: Float>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > T::zero()) || !best.is_finite() {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == T::zero() {
                continue;
            }
            a[r * n + col] = f;
            for c in col + 1..n {
                let v = a[col * n + c];
                a[r * n + c] = a[r * n + c] - f * v;
            }
            b[r] = b[r] - f * b[col];
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s = s - a[r * n + c] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
    true
}
