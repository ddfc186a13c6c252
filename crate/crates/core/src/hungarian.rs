//! Maximum-weight one-to-one assignment (Kuhn–Munkres with potentials).

use std::ops::{Add, Neg, Sub};

/// Scalar weight usable by [`max_weight_assignment`].
pub trait Weight: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> {
    fn zero() -> Self;
}

impl Weight for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl Weight for i64 {
    fn zero() -> Self {
        0
    }
}

/// Optimal alignment of a rectangular weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    /// Sum of the matched weights, added in row order.
    pub total: T,
    /// Column matched to each row; `None` for rows matched to padding.
    pub row_to_col: Vec<Option<usize>>,
}

/// Maximize the summed weight of a one-to-one row/column matching. The
/// matrix is padded with zeros to a square. Runs in `O(n³)`.
pub fn max_weight_assignment<T: Weight>(weights: &[Vec<T>]) -> Assignment<T> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    assert!(weights.iter().all(|r| r.len() == cols), "ragged weight matrix");
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> T {
        if i < rows && j < cols {
            -weights[i][j]
        } else {
            T::zero()
        }
    };

    // 1-based potentials; p[j] is the row matched to column j
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv: Vec<Option<T>> = vec![None; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta: Option<T> = None;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if minv[j].is_none_or(|m| cur < m) {
                    minv[j] = Some(cur);
                    way[j] = j0;
                }
                let mj = minv[j].expect("set above");
                if delta.is_none_or(|d| mj < d) {
                    delta = Some(mj);
                    j1 = j;
                }
            }
            let delta = delta.expect("an unused column remains");
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else if let Some(m) = minv[j] {
                    minv[j] = Some(m - delta);
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    for (j, &i) in p.iter().enumerate().skip(1) {
        if i >= 1 && i <= rows && j <= cols {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    let mut total = T::zero();
    for (i, c) in row_to_col.iter().enumerate() {
        if let Some(j) = c {
            total = total + weights[i][*j];
        }
    }
    Assignment { total, row_to_col }
}
