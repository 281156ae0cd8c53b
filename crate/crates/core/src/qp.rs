//! Direction-finding subproblem of the norm-relaxed feasible-direction method:
//!
//! ```text
//! max  z − γ/2 hᵀQh
//! s.t. −gᵀh + z ≤ 0
//!      λ − λ̄ + h + z ≤ 0
//!      λ̲ − λ − h + z ≤ 0
//! ```
//!
//! Solved as `min γ/2 hᵀQh − z` by a primal active-set method in `(h, z)`.
//! Every constraint has coefficient 1 on `z`, so any non-empty working set
//! pins `z` and the equality subproblems stay well posed; the multipliers sum
//! to one, so the working set never empties.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub h: Vec<f64>,
    pub z: f64,
    /// Multipliers of the constraint rows, ordered (gradient row, upper rows, lower rows).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Constraint rows `a_j·(h, z) ≤ b_j`.
pub(crate) fn constraint_rows(
    lambda: &[f64],
    g: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = lambda.len();
    let mut a = DMatrix::zeros(2 * n + 1, n + 1);
    let mut b = DVector::zeros(2 * n + 1);
    for i in 0..n {
        a[(0, i)] = -g[i];
        a[(1 + i, i)] = 1.0;
        a[(1 + n + i, i)] = -1.0;
        b[1 + i] = upper[i] - lambda[i];
        b[1 + n + i] = lambda[i] - lower[i];
    }
    a.column_mut(n).fill(1.0);
    (a, b)
}

/// Solves the equality-constrained subproblem on `rows`; returns `(v, y)`
/// with `H v + c + A_Wᵀ y = 0` and `A_W v = b_W`.
pub(crate) fn equality_qp(
    hess: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rows: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let nv = hess.nrows();
    let m = rows.len();
    let mut k = DMatrix::zeros(nv + m, nv + m);
    k.view_mut((0, 0), (nv, nv)).copy_from(hess);
    let mut rhs = DVector::zeros(nv + m);
    rhs[nv - 1] = 1.0; // −c with c = (0, …, 0, −1)
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..nv {
            k[(nv + i, j)] = a[(r, j)];
            k[(j, nv + i)] = a[(r, j)];
        }
        rhs[nv + i] = b[r];
    }
    let sol = k.full_piv_lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, nv).into_owned(), sol.rows(nv, m).into_owned()))
}

fn independent(a: &DMatrix<f64>, rows: &[usize], cand: usize) -> bool {
    let mut m = DMatrix::zeros(rows.len() + 1, a.ncols());
    for (i, &r) in rows.iter().chain(std::iter::once(&cand)).enumerate() {
        m.row_mut(i).copy_from(&a.row(r));
    }
    let sv = m.singular_values();
    sv.min() > 1e-10 * sv.max().max(1.0)
}

/// Feasible ascent direction for prices `lambda` with profit gradient `g`.
pub fn feasible_direction(
    lambda: &[f64],
    g: &[f64],
    lower: &[f64],
    upper: &[f64],
    gamma: f64,
    q: &DMatrix<f64>,
) -> Result<Direction> {
    let n = lambda.len();
    if g.len() != n || lower.len() != n || upper.len() != n || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "direction QP with {n} prices, gradient {}, bounds {}/{}, Q {:?}",
            g.len(),
            lower.len(),
            upper.len(),
            q.shape()
        )));
    }
    let (a, b) = constraint_rows(lambda, g, lower, upper);
    let mut hess = DMatrix::zeros(n + 1, n + 1);
    hess.view_mut((0, 0), (n, n)).copy_from(&(q * gamma));
    let scale = b.amax().max(1.0);
    let tol = 1e-12 * scale;

    let mut v = DVector::<f64>::zeros(n + 1);
    let mut work: Vec<usize> = Vec::new();
    for r in 0..a.nrows() {
        if b[r].abs() <= tol && independent(&a, &work, r) {
            work.push(r);
        }
    }
    let max_iter = 50 * (2 * n + 2);
    for it in 0..max_iter {
        let (target, y) = equality_qp(&hess, &a, &b, &work).ok_or(Error::MaxQpIterations(it))?;
        let p = &target - &v;
        if p.amax() <= 1e-12 * (1.0 + v.amax()) {
            // stationary on the working set
            let (k, &ymin) = y
                .iter()
                .enumerate()
                .min_by(|x, z| x.1.total_cmp(z.1))
                .expect("working set is never empty");
            if ymin >= -1e-12 {
                let mut multipliers = vec![0.0; a.nrows()];
                for (i, &r) in work.iter().enumerate() {
                    multipliers[r] = y[i].max(0.0);
                }
                return Ok(Direction {
                    h: target.rows(0, n).iter().copied().collect(),
                    z: target[n],
                    multipliers,
                    iterations: it + 1,
                });
            }
            work.remove(k);
            continue;
        }
        // longest feasible fraction of the step
        let mut t = 1.0;
        let mut block = None;
        for r in 0..a.nrows() {
            if work.contains(&r) {
                continue;
            }
            let ap = a.row(r).dot(&p.transpose());
            if ap > 1e-14 {
                let slack = b[r] - a.row(r).dot(&v.transpose());
                let tr = (slack.max(0.0)) / ap;
                if tr < t {
                    t = tr;
                    block = Some(r);
                }
            }
        }
        v += &p * t;
        if let Some(r) = block {
            work.push(r);
        }
    }
    Err(Error::MaxQpIterations(max_iter))
}
