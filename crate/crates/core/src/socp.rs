//! Dense primal-dual interior-point method for conic linear programs
//!
//! ```text
//! min cᵀx  s.t.  Ax = b,  Gx + s = h,  s ∈ K
//! ```
//!
//! with `K` a product of a nonnegative orthant and second-order cones
//! `{(u₀, u₁) : u₀ ≥ ‖u₁‖}`. Nesterov–Todd scaling with a Mehrotra
//! predictor-corrector; the full KKT system is factored densely every
//! iteration, which is fine for the few dozen variables of a radial feeder.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ConeDims {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl ConeDims {
    fn total(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    /// `(offset, len)` of every second-order block.
    fn soc_blocks(&self) -> Vec<(usize, usize)> {
        let mut off = self.nonneg;
        self.soc
            .iter()
            .map(|&q| {
                let b = (off, q);
                off += q;
                b
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ConeProgram {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub dims: ConeDims,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ConeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConeSolution {
    pub x: DVector<f64>,
    /// Multipliers of `Ax = b`.
    pub y: DVector<f64>,
    /// Multipliers of the cone constraints.
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
}

/// Nesterov–Todd scaling point: `W z = W⁻¹ s = λ`, `W` symmetric.
struct Scaling {
    d: Vec<f64>,
    soc: Vec<(f64, DVector<f64>)>,
}

fn jnorm2(u: &[f64]) -> f64 {
    u[0] * u[0] - u[1..].iter().map(|v| v * v).sum::<f64>()
}

impl Scaling {
    fn new(dims: &ConeDims, s: &DVector<f64>, z: &DVector<f64>) -> Self {
        let d = (0..dims.nonneg).map(|i| (s[i] / z[i]).sqrt()).collect();
        let soc = dims
            .soc_blocks()
            .into_iter()
            .map(|(o, q)| {
                let sb = s.as_slice()[o..o + q].to_vec();
                let zb = z.as_slice()[o..o + q].to_vec();
                let js = jnorm2(&sb).sqrt();
                let jz = jnorm2(&zb).sqrt();
                let sn: Vec<f64> = sb.iter().map(|v| v / js).collect();
                let zn: Vec<f64> = zb.iter().map(|v| v / jz).collect();
                let dot: f64 = sn.iter().zip(&zn).map(|(a, b)| a * b).sum();
                let gamma = ((1.0 + dot) / 2.0).sqrt();
                let mut w = DVector::zeros(q);
                w[0] = (sn[0] + zn[0]) / (2.0 * gamma);
                for k in 1..q {
                    w[k] = (sn[k] - zn[k]) / (2.0 * gamma);
                }
                ((js / jz).sqrt(), w)
            })
            .collect();
        Self { d, soc }
    }

    /// Dense `W` (or `W⁻¹` when `inverse`).
    fn matrix(&self, dims: &ConeDims, inverse: bool) -> DMatrix<f64> {
        let m = dims.total();
        let mut w = DMatrix::zeros(m, m);
        for (i, &d) in self.d.iter().enumerate() {
            w[(i, i)] = if inverse { 1.0 / d } else { d };
        }
        for ((o, q), (eta, wb)) in dims.soc_blocks().into_iter().zip(&self.soc) {
            let sign = if inverse { -1.0 } else { 1.0 };
            let scale = if inverse { 1.0 / eta } else { *eta };
            let mut blk = DMatrix::zeros(q, q);
            blk[(0, 0)] = wb[0];
            for k in 1..q {
                blk[(0, k)] = sign * wb[k];
                blk[(k, 0)] = sign * wb[k];
                blk[(k, k)] = 1.0;
                for l in 1..q {
                    blk[(k, l)] += wb[k] * wb[l] / (1.0 + wb[0]);
                }
            }
            w.view_mut((o, o), (q, q)).copy_from(&(blk * scale));
        }
        w
    }
}

struct Kkt {
    k: DMatrix<f64>,
    lu: nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Kkt {
    /// LU solve with two rounds of iterative refinement; late iterations
    /// are badly conditioned and the plain solve loses the residual.
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.lu.solve(rhs)?;
        for _ in 0..2 {
            let r = rhs - &self.k * &x;
            x += self.lu.solve(&r)?;
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Jordan product `u ∘ v`.
fn jprod(dims: &ConeDims, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut r = DVector::zeros(u.len());
    for i in 0..dims.nonneg {
        r[i] = u[i] * v[i];
    }
    for (o, q) in dims.soc_blocks() {
        r[o] = (0..q).map(|k| u[o + k] * v[o + k]).sum();
        for k in 1..q {
            r[o + k] = u[o] * v[o + k] + v[o] * u[o + k];
        }
    }
    r
}

/// Solves `l ∘ u = d` for `u`.
fn jdiv(dims: &ConeDims, l: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let mut u = DVector::zeros(l.len());
    for i in 0..dims.nonneg {
        u[i] = d[i] / l[i];
    }
    for (o, q) in dims.soc_blocks() {
        let lb = &l.as_slice()[o..o + q];
        let cross: f64 = (1..q).map(|k| l[o + k] * d[o + k]).sum();
        u[o] = (l[o] * d[o] - cross) / jnorm2(lb);
        for k in 1..q {
            u[o + k] = (d[o + k] - u[o] * l[o + k]) / l[o];
        }
    }
    u
}

fn identity(dims: &ConeDims) -> DVector<f64> {
    let mut e = DVector::zeros(dims.total());
    for i in 0..dims.nonneg {
        e[i] = 1.0;
    }
    for (o, _) in dims.soc_blocks() {
        e[o] = 1.0;
    }
    e
}

/// Smallest eigenvalue over all blocks.
fn min_eig(dims: &ConeDims, u: &DVector<f64>) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..dims.nonneg {
        m = m.min(u[i]);
    }
    for (o, q) in dims.soc_blocks() {
        let tail = (1..q).map(|k| u[o + k] * u[o + k]).sum::<f64>().sqrt();
        m = m.min(u[o] - tail);
    }
    m
}

/// Largest `α ≤ cap` with `u + α du` in the cone.
fn max_step(dims: &ConeDims, u: &DVector<f64>, du: &DVector<f64>, cap: f64) -> f64 {
    let mut a = cap;
    for i in 0..dims.nonneg {
        if du[i] < 0.0 {
            a = a.min(-u[i] / du[i]);
        }
    }
    for (o, q) in dims.soc_blocks() {
        let ub = &u.as_slice()[o..o + q];
        let db = &du.as_slice()[o..o + q];
        let qa = jnorm2(db);
        let qb = 2.0 * (ub[0] * db[0] - (1..q).map(|k| ub[k] * db[k]).sum::<f64>());
        let qc = jnorm2(ub).max(0.0);
        let mut roots = Vec::new();
        if qa.abs() < 1e-300 {
            if qb < 0.0 {
                roots.push(-qc / qb);
            }
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let t = -0.5 * (qb + qb.signum() * disc.sqrt());
                if t != 0.0 {
                    roots.push(t / qa);
                    roots.push(qc / t);
                }
            }
        }
        for r in roots {
            if r > 0.0 {
                a = a.min(r);
            }
        }
        if db[0] < 0.0 {
            a = a.min(-ub[0] / db[0]);
        }
    }
    a
}

/// Accuracy accepted when the iteration stalls before reaching `tol`.
pub const FALLBACK_TOL: f64 = 1e-8;

pub fn solve_cone(p: &ConeProgram, opts: &ConeOptions) -> Result<ConeSolution> {
    let n = p.c.len();
    let neq = p.a.nrows();
    let m = p.dims.total();
    if p.a.ncols() != n || p.b.len() != neq || p.g.shape() != (m, n) || p.h.len() != m || m == 0 {
        return Err(Error::DimensionMismatch(format!(
            "cone program: c {n}, A {:?}, b {}, G {:?}, h {}, cone size {m}",
            p.a.shape(),
            p.b.len(),
            p.g.shape(),
            p.h.len()
        )));
    }
    if p.dims.soc.iter().any(|&q| q < 2) {
        return Err(Error::InvalidParams("second-order blocks need at least 2 entries".into()));
    }
    let dims = &p.dims;
    let e = identity(dims);
    let deg = dims.degree() as f64;

    let kkt = |h: &DMatrix<f64>| {
        let mut k = DMatrix::zeros(n + neq + m, n + neq + m);
        k.view_mut((0, n), (n, neq)).copy_from(&p.a.transpose());
        k.view_mut((0, n + neq), (n, m)).copy_from(&p.g.transpose());
        k.view_mut((n, 0), (neq, n)).copy_from(&p.a);
        k.view_mut((n + neq, 0), (m, n)).copy_from(&p.g);
        k.view_mut((n + neq, n + neq), (m, m)).copy_from(&(-h));
        let lu = k.clone().full_piv_lu();
        Kkt { k, lu }
    };
    let split = |v: DVector<f64>| {
        (
            v.rows(0, n).into_owned(),
            v.rows(n, neq).into_owned(),
            v.rows(n + neq, m).into_owned(),
        )
    };
    let stack = |a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>| {
        let mut v = DVector::zeros(n + neq + m);
        v.rows_mut(0, n).copy_from(a);
        v.rows_mut(n, neq).copy_from(b);
        v.rows_mut(n + neq, m).copy_from(c);
        v
    };
    let singular = || Error::ConeSolver("singular KKT system; check that [A; G] has full column rank".into());

    // starting point from two least-squares problems
    let lu = kkt(&DMatrix::identity(m, m));
    let (mut x, _, zt) = split(lu.solve(&stack(&DVector::zeros(n), &p.b, &p.h)).ok_or_else(singular)?);
    let mut s = -zt;
    let (_, mut y, mut z) = split(lu.solve(&stack(&(-&p.c), &DVector::zeros(neq), &DVector::zeros(m))).ok_or_else(singular)?);
    for v in [&mut s, &mut z] {
        let shift = -min_eig(dims, v);
        if shift >= -1e-8 * v.norm().max(1.0) {
            *v += &e * (1.0 + shift);
        }
    }

    let bnorm = p.b.norm().max(p.h.norm()).max(1.0);
    let cnorm = p.c.norm().max(1.0);
    // last iterate within the fallback tolerance, returned if the
    // iteration breaks down numerically before reaching `tol`
    let mut usable: Option<ConeSolution> = None;
    let fallback = opts.tol.max(FALLBACK_TOL);
    for it in 0..=opts.max_iter {
        let rx = &p.c + p.a.transpose() * &y + p.g.transpose() * &z;
        let ry = &p.a * &x - &p.b;
        let rz = &p.g * &x + &s - &p.h;
        let gap = s.dot(&z);
        let pobj = p.c.dot(&x);
        let dobj = -p.b.dot(&y) - p.h.dot(&z);
        let pres = ry.norm().max(rz.norm()) / bnorm;
        let dres = rx.norm() / cnorm;
        let within = |t: f64| pres <= t && dres <= t && (gap <= t || gap / pobj.abs().max(1.0) <= t);
        let current = || ConeSolution {
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
            s: s.clone(),
            primal_obj: pobj,
            dual_obj: dobj,
            primal_res: pres,
            dual_res: dres,
            iterations: it,
        };
        if within(opts.tol) {
            return Ok(current());
        }
        if within(fallback) {
            usable = Some(current());
        }
        let failure = |why: String| match &usable {
            Some(u) => Ok(u.clone()),
            None => Err(Error::ConeSolver(format!(
                "{why} after {it} iterations: primal residual {pres:.2e}, dual residual {dres:.2e}, gap {gap:.2e}"
            ))),
        };
        if it == opts.max_iter {
            return failure("no convergence".into());
        }
        if min_eig(dims, &s) <= 0.0 || min_eig(dims, &z) <= 0.0 {
            return failure("iterate reached the cone boundary".into());
        }
        let mu = gap / deg;
        let sc = Scaling::new(dims, &s, &z);
        let w = sc.matrix(dims, false);
        let winv = sc.matrix(dims, true);
        let lambda = &w * &z;
        let lu = kkt(&(&w * &w));
        let newton = |ds_rhs: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = jdiv(dims, &lambda, ds_rhs);
            let sol = lu.solve(&stack(&(-&rx), &(-&ry), &(-&rz - &w * &t)))?;
            let (dx, dy, dz) = split(sol);
            let ds = &w * (&t - &w * &dz);
            Some((dx, dy, dz, ds))
        };

        let ll = jprod(dims, &lambda, &lambda);
        let Some((_, _, dza, dsa)) = newton(&(-&ll)) else {
            return failure("singular KKT system".into());
        };
        let aa = max_step(dims, &s, &dsa, 1.0).min(max_step(dims, &z, &dza, 1.0));
        let mu_aff = (&s + &dsa * aa).dot(&(&z + &dza * aa)) / deg;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr = jprod(dims, &(&winv * &dsa), &(&w * &dza));
        let Some((dx, dy, dz, ds)) = newton(&(-&ll - corr + &e * (sigma * mu))) else {
            return failure("singular KKT system".into());
        };
        let amax = max_step(dims, &s, &ds, f64::INFINITY).min(max_step(dims, &z, &dz, f64::INFINITY));
        let alpha = (0.99 * amax).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn program(c: &[f64], a: &[&[f64]], b: &[f64], g: &[&[f64]], h: &[f64], dims: ConeDims) -> ConeProgram {
        let n = c.len();
        ConeProgram {
            c: DVector::from_column_slice(c),
            a: DMatrix::from_fn(a.len(), n, |i, j| a[i][j]),
            b: DVector::from_column_slice(b),
            g: DMatrix::from_fn(g.len(), n, |i, j| g[i][j]),
            h: DVector::from_column_slice(h),
            dims,
        }
    }

    #[test]
    fn scaling_identities() {
        let dims = ConeDims { nonneg: 2, soc: vec![3] };
        let s = DVector::from_vec(vec![0.5, 2.0, 3.0, 1.0, -2.0]);
        let z = DVector::from_vec(vec![4.0, 0.1, 2.0, -0.5, 0.3]);
        let sc = Scaling::new(&dims, &s, &z);
        let w = sc.matrix(&dims, false);
        let wi = sc.matrix(&dims, true);
        assert!((&w * &wi - DMatrix::identity(5, 5)).amax() < 1e-12);
        assert!((&w * &z - &wi * &s).amax() < 1e-12);
        let l = &w * &z;
        let d = DVector::from_vec(vec![1.0, -1.0, 0.3, 0.2, 0.7]);
        assert!((jprod(&dims, &l, &jdiv(&dims, &l, &d)) - d).amax() < 1e-12);
    }

    #[test]
    fn small_lp() {
        // min −x₁ − x₂  s.t. x₁ + 2x₂ ≤ 4, 3x₁ + x₂ ≤ 6, x ≥ 0  → (1.6, 1.2)
        let p = program(
            &[-1.0, -1.0],
            &[],
            &[],
            &[&[1.0, 2.0], &[3.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]],
            &[4.0, 6.0, 0.0, 0.0],
            ConeDims { nonneg: 4, soc: vec![] },
        );
        let r = solve_cone(&p, &ConeOptions::default()).unwrap();
        assert!((r.x[0] - 1.6).abs() < 1e-7 && (r.x[1] - 1.2).abs() < 1e-7);
        assert!((r.primal_obj - r.dual_obj).abs() < 1e-7);
    }

    #[test]
    fn norm_ball() {
        // min x₁ + x₂  s.t. ‖x‖ ≤ 1, with an equality x₁ − x₂ = 0 → x = −(1/√2, 1/√2)
        let p = program(
            &[1.0, 1.0],
            &[&[1.0, -1.0]],
            &[0.0],
            &[&[0.0, 0.0], &[-1.0, 0.0], &[0.0, -1.0]],
            &[1.0, 0.0, 0.0],
            ConeDims { nonneg: 0, soc: vec![3] },
        );
        let r = solve_cone(&p, &ConeOptions::default()).unwrap();
        let v = -1.0 / 2f64.sqrt();
        assert!((r.x[0] - v).abs() < 1e-7 && (r.x[1] - v).abs() < 1e-7, "{}", r.x);
        // the ball constraint multiplier equals the derivative of the optimum in its radius
        assert!((r.z[0] - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_epigraph() {
        // min t + x  s.t. t ≥ x²  (‖(2x, t − 1)‖ ≤ t + 1) → x = −1/2, t = 1/4
        let p = program(
            &[1.0, 1.0],
            &[],
            &[],
            &[&[-1.0, 0.0], &[0.0, -2.0], &[-1.0, 0.0]],
            &[1.0, 0.0, -1.0],
            ConeDims { nonneg: 0, soc: vec![3] },
        );
        let r = solve_cone(&p, &ConeOptions::default()).unwrap();
        // the objective is quadratic near the optimum, so x is only accurate to √gap
        assert!((r.primal_obj + 0.25).abs() < 1e-8);
        assert!((r.x[0] - 0.25).abs() < 1e-4 && (r.x[1] + 0.5).abs() < 1e-4, "{}", r.x);
    }

    #[test]
    fn dimension_mismatch() {
        let mut p = program(&[1.0], &[], &[], &[&[-1.0]], &[0.0], ConeDims { nonneg: 1, soc: vec![] });
        p.h = DVector::zeros(2);
        assert!(matches!(solve_cone(&p, &ConeOptions::default()), Err(Error::DimensionMismatch(_))));
    }
}
