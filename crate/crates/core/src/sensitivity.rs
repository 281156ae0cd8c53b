//! Sensitivity of equilibrium charging flows with respect to owned prices.
//!
//! Paths costlier than their OD minimum are dropped (they stay unused under
//! small price changes), the remaining columns of `[Δ; Λ]` are thinned to a
//! linearly independent subset, and the implicit function theorem is applied
//! to the reduced KKT system
//!
//! ```text
//! Δ̂ᵀ c(Δ̂ f̂) − Λ̂ᵀ μ = 0,    Λ̂ f̂ = D.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::network::VehicleClass;
use crate::scenario::Scenario;
use crate::ue::{CostModel, UeSolution};

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityOptions {
    /// A path is non-equilibrated when its cost exceeds `μ_w (1 + cost_eps)`.
    pub cost_eps: f64,
    pub flow_eps: f64,
    /// Columns whose orthogonal residual is below `rank_tol` times the largest
    /// column norm count as dependent.
    pub rank_tol: f64,
    /// Floor on the cost-derivative diagonal.
    pub reg_eps: f64,
    /// Smallest acceptable reciprocal condition number of the KKT Jacobian.
    pub min_rcond: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            cost_eps: 1e-4,
            flow_eps: 1e-6,
            rank_tol: 1e-8,
            reg_eps: 1e-6,
            min_rcond: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EquilibratedSets {
    pub ep: Vec<usize>,
    pub nep: Vec<usize>,
    /// Independent subset of `ep`, in the order the scan accepted them.
    pub eli: Vec<usize>,
    pub eld: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityResult {
    /// `∂x^fcs / ∂λ`: one row per station, one column per owned price.
    #[serde(serialize_with = "rows")]
    pub grad: DMatrix<f64>,
    /// `∂f̂ / ∂λ` over the ELI paths.
    #[serde(serialize_with = "rows")]
    pub path_grad: DMatrix<f64>,
    #[serde(serialize_with = "rows")]
    pub mu_grad: DMatrix<f64>,
    pub sets: EquilibratedSets,
    /// Reciprocal 2-norm condition number of the KKT Jacobian.
    pub rcond: f64,
    /// ELI paths whose flow is below `flow_eps`; their derivatives are
    /// one-sided at best.
    pub small_flow_eli: Vec<usize>,
}

fn rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let v: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    v.serialize(s)
}

impl SensitivityResult {
    /// Rows of `grad` belonging to the given stations.
    pub fn station_rows(&self, stations: &[usize]) -> DMatrix<f64> {
        self.grad.select_rows(stations)
    }
}

/// Diagonal of `∂c^garc / ∂x` at the solution, floored at `reg_eps`.
pub fn cost_jacobian_diag(scn: &Scenario, sol: &UeSolution, reg_eps: f64) -> Result<Vec<f64>> {
    let model = CostModel::new(scn, &sol.prices)?;
    Ok(sol
        .generalized_flows()
        .iter()
        .enumerate()
        .map(|(g, &x)| model.derivative(g, x).max(reg_eps))
        .collect())
}

/// Splits paths into equilibrated and non-equilibrated ones.
pub fn classify_paths(
    scn: &Scenario,
    sol: &UeSolution,
    cost_eps: f64,
    flow_eps: f64,
) -> Result<EquilibratedSets> {
    let mut sets = EquilibratedSets::default();
    for (p, path) in scn.paths.paths().iter().enumerate() {
        let mu = sol.od_min_costs[path.od];
        if sol.path_costs[p] > mu + cost_eps * mu.abs() {
            if sol.path_flows[p] > flow_eps {
                return Err(Error::NepCarriesFlow {
                    path: p,
                    flow: sol.path_flows[p],
                });
            }
            sets.nep.push(p);
        } else {
            sets.ep.push(p);
        }
    }
    Ok(sets)
}

/// Column `p` of `[Δ; Λ]`.
fn stacked_column(scn: &Scenario, p: usize) -> DVector<f64> {
    let ps = &scn.paths;
    let g = ps.num_generalized();
    let mut v = DVector::zeros(g + ps.num_ods());
    for r in ps.generalized_rows(p) {
        v[r] = 1.0;
    }
    v[g + ps.paths()[p].od] = 1.0;
    v
}

/// Greedy maximal independent subset of the EP columns of `[Δ; Λ]`,
/// scanning `order` (a permutation of `sets.ep`; `None` means ascending).
pub fn select_eli(
    scn: &Scenario,
    sets: &EquilibratedSets,
    order: Option<&[usize]>,
    rank_tol: f64,
) -> EquilibratedSets {
    let scan: Vec<usize> = order.map_or_else(|| sets.ep.clone(), |o| o.to_vec());
    let cols: Vec<DVector<f64>> = scan.iter().map(|&p| stacked_column(scn, p)).collect();
    let scale = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut eli = Vec::new();
    let mut eld = Vec::new();
    for (&p, col) in scan.iter().zip(&cols) {
        let mut r = col.clone();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&r);
                r.axpy(-d, q, 1.0);
            }
        }
        let n = r.norm();
        if n > rank_tol * scale {
            basis.push(r / n);
            eli.push(p);
        } else {
            eld.push(p);
        }
    }
    EquilibratedSets {
        ep: sets.ep.clone(),
        nep: sets.nep.clone(),
        eli,
        eld,
    }
}

/// `Δ̂ᵀ diag Δ̂` restricted to rows `a` and columns `b` (path index lists).
fn path_hessian(scn: &Scenario, diag: &[f64], a: &[usize], b: &[usize]) -> DMatrix<f64> {
    let ps = &scn.paths;
    let mut m = DMatrix::zeros(a.len(), b.len());
    let mut mark = vec![false; diag.len()];
    for (i, &p) in a.iter().enumerate() {
        for g in ps.generalized_rows(p) {
            mark[g] = true;
        }
        for (j, &q) in b.iter().enumerate() {
            m[(i, j)] = ps.generalized_rows(q).filter(|&g| mark[g]).map(|g| diag[g]).sum();
        }
        for g in ps.generalized_rows(p) {
            mark[g] = false;
        }
    }
    m
}

/// `Λ̂` restricted to columns `paths` and rows `ods`.
fn od_block(scn: &Scenario, ods: &[usize], paths: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(ods.len(), paths.len(), |i, j| {
        if scn.paths.paths()[paths[j]].od == ods[i] {
            1.0
        } else {
            0.0
        }
    })
}

/// `∂ĉ/∂λ` for the given paths: `E` where the path charges at owned station `k`.
fn price_block(scn: &Scenario, paths: &[usize], owned: &[usize]) -> DMatrix<f64> {
    let e = scn.params.charge_energy;
    DMatrix::from_fn(paths.len(), owned.len(), |i, k| {
        if scn.paths.paths()[paths[i]].station == Some(owned[k]) {
            e
        } else {
            0.0
        }
    })
}

/// `(J, J_λ)` of the reduced KKT system over the ELI paths, unknowns ordered
/// `(f̂, μ)`.
pub fn assemble_jacobians(
    scn: &Scenario,
    sets: &EquilibratedSets,
    diag: &[f64],
    owned: &[usize],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sets.eli.len();
    let w = scn.paths.num_ods();
    let ods: Vec<usize> = (0..w).collect();
    let lam = od_block(scn, &ods, &sets.eli);
    let mut j = DMatrix::zeros(n + w, n + w);
    j.view_mut((0, 0), (n, n))
        .copy_from(&path_hessian(scn, diag, &sets.eli, &sets.eli));
    j.view_mut((0, n), (n, w)).copy_from(&(-lam.transpose()));
    j.view_mut((n, 0), (w, n)).copy_from(&lam);
    let mut jl = DMatrix::zeros(n + w, owned.len());
    jl.view_mut((0, 0), (n, owned.len()))
        .copy_from(&price_block(scn, &sets.eli, owned));
    (j, jl)
}

fn rcond(j: &DMatrix<f64>) -> f64 {
    if j.is_empty() {
        return 1.0;
    }
    let sv = j.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

fn solve(j: &DMatrix<f64>, jl: &DMatrix<f64>, min_rcond: f64) -> Result<(DMatrix<f64>, f64)> {
    let rc = rcond(j);
    if !(rc >= min_rcond) {
        return Err(Error::SingularJacobian { rcond: rc });
    }
    let lu = j.clone().full_piv_lu();
    let x = lu
        .solve(&(-jl))
        .ok_or(Error::SingularJacobian { rcond: rc })?;
    Ok((x, rc))
}

/// `Δ̂^fcs ∂f̂/∂λ` for all stations.
fn station_gradient(scn: &Scenario, eli: &[usize], path_grad: &DMatrix<f64>) -> DMatrix<f64> {
    let m = scn.net.num_stations();
    let mut g = DMatrix::zeros(m, path_grad.ncols());
    for (i, &p) in eli.iter().enumerate() {
        if let Some(s) = scn.paths.paths()[p].station {
            let mut row = g.row_mut(s);
            row += path_grad.row(i);
        }
    }
    g
}

fn small_flows(sol: &UeSolution, eli: &[usize], flow_eps: f64) -> Vec<usize> {
    eli.iter()
        .copied()
        .filter(|&p| sol.path_flows[p] < flow_eps)
        .collect()
}

/// Solves `J [∂f̂; ∂μ] = −J_λ` and maps the path derivatives to stations.
pub fn gradient(
    scn: &Scenario,
    sol: &UeSolution,
    sets: EquilibratedSets,
    j: &DMatrix<f64>,
    jl: &DMatrix<f64>,
    opts: &SensitivityOptions,
) -> Result<SensitivityResult> {
    let n = sets.eli.len();
    let (x, rc) = solve(j, jl, opts.min_rcond)?;
    let path_grad = x.rows(0, n).into_owned();
    let mu_grad = x.rows(n, x.nrows() - n).into_owned();
    Ok(SensitivityResult {
        grad: station_gradient(scn, &sets.eli, &path_grad),
        small_flow_eli: small_flows(sol, &sets.eli, opts.flow_eps),
        path_grad,
        mu_grad,
        sets,
        rcond: rc,
    })
}

/// Full pipeline: classify, select ELI in ascending path order, assemble, solve.
pub fn sensitivity(
    scn: &Scenario,
    sol: &UeSolution,
    owned: &[usize],
    opts: &SensitivityOptions,
) -> Result<SensitivityResult> {
    sensitivity_with_order(scn, sol, owned, None, opts)
}

/// As [`sensitivity`] with an explicit ELI scan order over the EP paths.
pub fn sensitivity_with_order(
    scn: &Scenario,
    sol: &UeSolution,
    owned: &[usize],
    order: Option<&[usize]>,
    opts: &SensitivityOptions,
) -> Result<SensitivityResult> {
    let diag = cost_jacobian_diag(scn, sol, opts.reg_eps)?;
    let sets = classify_paths(scn, sol, opts.cost_eps, opts.flow_eps)?;
    let sets = select_eli(scn, &sets, order, opts.rank_tol);
    let (j, jl) = assemble_jacobians(scn, &sets, &diag, owned);
    gradient(scn, sol, sets, &j, &jl, opts)
}

/// Two-class variant with the unknowns ordered `(f̂^ev, f̂^gv, μ^ev, μ^gv)`
/// and the Jacobian assembled block by block. The GV blocks share only road
/// arcs with the EV blocks.
pub fn gradient_mixed(
    scn: &Scenario,
    sol: &UeSolution,
    owned: &[usize],
    opts: &SensitivityOptions,
) -> Result<SensitivityResult> {
    let ps = &scn.paths;
    let diag = cost_jacobian_diag(scn, sol, opts.reg_eps)?;
    let sets = classify_paths(scn, sol, opts.cost_eps, opts.flow_eps)?;
    let class_of = |p: usize| ps.od_class(ps.paths()[p].od);
    // EV columns are scanned first so the EV block keeps its own basis.
    let order: Vec<usize> = sets
        .ep
        .iter()
        .copied()
        .filter(|&p| class_of(p) == VehicleClass::Ev)
        .chain(sets.ep.iter().copied().filter(|&p| class_of(p) == VehicleClass::Gv))
        .collect();
    let sets = select_eli(scn, &sets, Some(&order), opts.rank_tol);
    let (ev, gv): (Vec<usize>, Vec<usize>) =
        sets.eli.iter().partition(|&&p| class_of(p) == VehicleClass::Ev);
    let (ev_ods, gv_ods): (Vec<usize>, Vec<usize>) =
        (0..ps.num_ods()).partition(|&w| ps.od_class(w) == VehicleClass::Ev);

    let (ne, ng, we, wg) = (ev.len(), gv.len(), ev_ods.len(), gv_ods.len());
    let size = ne + ng + we + wg;
    let mut j = DMatrix::zeros(size, size);
    let (fe, fg, me, mg) = (0, ne, ne + ng, ne + ng + we);
    j.view_mut((fe, fe), (ne, ne)).copy_from(&path_hessian(scn, &diag, &ev, &ev));
    j.view_mut((fe, fg), (ne, ng)).copy_from(&path_hessian(scn, &diag, &ev, &gv));
    j.view_mut((fg, fe), (ng, ne)).copy_from(&path_hessian(scn, &diag, &gv, &ev));
    j.view_mut((fg, fg), (ng, ng)).copy_from(&path_hessian(scn, &diag, &gv, &gv));
    let lam_e = od_block(scn, &ev_ods, &ev);
    let lam_g = od_block(scn, &gv_ods, &gv);
    j.view_mut((fe, me), (ne, we)).copy_from(&(-lam_e.transpose()));
    j.view_mut((fg, mg), (ng, wg)).copy_from(&(-lam_g.transpose()));
    j.view_mut((me, fe), (we, ne)).copy_from(&lam_e);
    j.view_mut((mg, fg), (wg, ng)).copy_from(&lam_g);
    let mut jl = DMatrix::zeros(size, owned.len());
    jl.view_mut((fe, 0), (ne, owned.len()))
        .copy_from(&price_block(scn, &ev, owned));

    let (x, rc) = solve(&j, &jl, opts.min_rcond)?;
    // back to ELI order so the result reads like `gradient`'s
    let mut path_grad = DMatrix::zeros(sets.eli.len(), owned.len());
    for (i, &p) in sets.eli.iter().enumerate() {
        let r = ev
            .iter()
            .position(|&q| q == p)
            .unwrap_or_else(|| ne + gv.iter().position(|&q| q == p).unwrap());
        path_grad.row_mut(i).copy_from(&x.row(r));
    }
    let mut mu_grad = DMatrix::zeros(ps.num_ods(), owned.len());
    for (i, &w) in ev_ods.iter().chain(&gv_ods).enumerate() {
        mu_grad.row_mut(w).copy_from(&x.row(me + i));
    }
    Ok(SensitivityResult {
        grad: station_gradient(scn, &sets.eli, &path_grad),
        small_flow_eli: small_flows(sol, &sets.eli, opts.flow_eps),
        path_grad,
        mu_grad,
        sets,
        rcond: rc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ue::{solve_ue, UeOptions};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn illustrative_solution() -> (Scenario, UeSolution) {
        let s = fixtures::illustrative();
        let sol = solve_ue(&s, &s.net.base_prices(), &UeOptions::with_tol(1e-12)).unwrap();
        (s, sol)
    }

    #[test]
    fn illustrative_jacobians() {
        let (s, sol) = illustrative_solution();
        let opts = SensitivityOptions::default();
        let diag = cost_jacobian_diag(&s, &sol, opts.reg_eps).unwrap();
        assert!(diag.iter().all(|&d| d == 1.0));
        let sets = classify_paths(&s, &sol, opts.cost_eps, opts.flow_eps).unwrap();
        assert_eq!(sets.ep, vec![0, 1, 2, 3]);
        assert!(sets.nep.is_empty());
        let sets = select_eli(&s, &sets, None, opts.rank_tol);
        assert_eq!(sets.eli.len(), 4);
        assert!(sets.eld.is_empty());
        let (j, jl) = assemble_jacobians(&s, &sets, &diag, &s.net.owned_stations());
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(6, 6, &[
            3., 0., 2., 0., -1., 0.,
            0., 3., 0., 2., -1., 0.,
            2., 0., 3., 0., 0., -1.,
            0., 2., 0., 3., 0., -1.,
            1., 1., 0., 0., 0., 0.,
            0., 0., 1., 1., 0., 0.,
        ]);
        assert_eq!(j, expect);
        assert_eq!(jl, DMatrix::from_column_slice(6, 1, &[1., 0., 1., 0., 0., 0.]));
        let r = gradient(&s, &sol, sets, &j, &jl, &opts).unwrap();
        assert!((r.grad[(0, 0)] + 0.2).abs() < 1e-8);
        assert!((r.grad[(1, 0)] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn no_owned_station_gives_zero() {
        let (s, sol) = illustrative_solution();
        let r = sensitivity(&s, &sol, &[], &SensitivityOptions::default()).unwrap();
        assert_eq!(r.grad.shape(), (2, 0));
        let (_, jl) = assemble_jacobians(&s, &r.sets, &[1.0; 8], &[]);
        assert_eq!(jl.ncols(), 0);
    }

    #[test]
    fn single_path_block_is_path_sum() {
        let s = fixtures::single_linear_arc(1.0);
        let sol = solve_ue(&s, &[], &UeOptions::default()).unwrap();
        let sets = classify_paths(&s, &sol, 1e-4, 1e-6).unwrap();
        let sets = select_eli(&s, &sets, None, 1e-8);
        let (j, _) = assemble_jacobians(&s, &sets, &[2.5], &[]);
        assert_eq!(j[(0, 0)], 2.5);
    }

    #[test]
    fn costlier_path_is_nep() {
        let (s, mut sol) = illustrative_solution();
        sol.path_costs[1] = sol.od_min_costs[0] + 1.0;
        sol.path_flows[1] = 0.0;
        let sets = classify_paths(&s, &sol, 1e-4, 1e-6).unwrap();
        assert_eq!(sets.nep, vec![1]);
        let sets = classify_paths(&s, &sol, f64::INFINITY, 1e-6).unwrap();
        assert_eq!(sets.ep.len(), 4);
        sol.path_flows[1] = 0.5;
        assert!(matches!(
            classify_paths(&s, &sol, 1e-4, 1e-6),
            Err(Error::NepCarriesFlow { path: 1, .. })
        ));
    }

    #[test]
    fn duplicated_column_goes_to_eld() {
        let (s, sol) = illustrative_solution();
        let mut paths = s.paths.paths().to_vec();
        paths.insert(2, paths[1].clone());
        let ps = crate::paths::PathStructure::from_paths(&s.net, &s.demand, paths).unwrap();
        let s2 = Scenario::with_paths(s.net.clone(), s.demand.clone(), s.params.clone(), ps).unwrap();
        let sets = EquilibratedSets {
            ep: (0..5).collect(),
            ..Default::default()
        };
        let sets = select_eli(&s2, &sets, None, 1e-8);
        assert_eq!(sets.eld, vec![2]);
        let _ = sol;
    }

    #[test]
    fn eli_count_matches_rank_oracle() {
        let s = fixtures::nguyen_dupuis();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut ep: Vec<usize> = (0..s.paths.len()).filter(|_| rng.random_bool(0.6)).collect();
            ep.shuffle(&mut rng);
            let sets = EquilibratedSets {
                ep: ep.clone(),
                ..Default::default()
            };
            let got = select_eli(&s, &sets, Some(&ep), 1e-8);
            // independent oracle: Gaussian elimination with partial pivoting on rows
            let mut m: Vec<Vec<f64>> = ep
                .iter()
                .map(|&p| stacked_column(&s, p).iter().copied().collect())
                .collect();
            let cols = m.first().map_or(0, |r| r.len());
            let mut rank = 0;
            for c in 0..cols {
                let Some(piv) = (rank..m.len()).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())) else {
                    break;
                };
                if m[piv][c].abs() < 1e-8 {
                    continue;
                }
                m.swap(rank, piv);
                for r in rank + 1..m.len() {
                    let f = m[r][c] / m[rank][c];
                    for k in c..cols {
                        m[r][k] -= f * m[rank][k];
                    }
                }
                rank += 1;
            }
            assert_eq!(got.eli.len(), rank);
            assert_eq!(got.eli.len() + got.eld.len(), ep.len());
        }
    }

    #[test]
    fn diag_matches_finite_differences() {
        let s = fixtures::nguyen_dupuis();
        let prices = s.full_prices(&s.net.owned_stations(), &[210.0, 220.0]).unwrap();
        let sol = solve_ue(&s, &prices, &UeOptions::default()).unwrap();
        let diag = cost_jacobian_diag(&s, &sol, 0.0).unwrap();
        let model = CostModel::new(&s, &prices).unwrap();
        for (g, &x) in sol.generalized_flows().iter().enumerate() {
            if x < 1e-3 {
                continue;
            }
            let h = 1e-4 * x;
            let fd = (model.cost(g, x + h) - model.cost(g, x - h)) / (2.0 * h);
            assert!((fd - diag[g]).abs() <= 1e-6 * diag[g].abs() + 1e-9, "{g}: {fd} vs {}", diag[g]);
        }
    }

    #[test]
    fn zero_flow_bpr_is_floored() {
        let s = fixtures::nguyen_dupuis();
        let prices = s.net.base_prices();
        let mut sol = solve_ue(&s, &prices, &UeOptions::default()).unwrap();
        sol.arc_flows.iter_mut().for_each(|x| *x = 0.0);
        sol.charge_flows.iter_mut().for_each(|x| *x = 0.0);
        let diag = cost_jacobian_diag(&s, &sol, 1e-6).unwrap();
        assert!(diag.iter().all(|&d| d == 1e-6));
    }

    #[test]
    fn path_hessian_positive_definite() {
        let s = fixtures::nguyen_dupuis();
        let prices = s.net.base_prices();
        let sol = solve_ue(&s, &prices, &UeOptions::default()).unwrap();
        let r = sensitivity(&s, &sol, &s.net.owned_stations(), &Default::default()).unwrap();
        let diag = cost_jacobian_diag(&s, &sol, 1e-6).unwrap();
        let h = path_hessian(&s, &diag, &r.sets.eli, &r.sets.eli);
        assert_eq!(h, h.transpose());
        let eig = h.symmetric_eigenvalues();
        assert!(eig.min() > 0.0, "{eig}");
        assert!(r.rcond > 1e-12);
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let s = fixtures::nguyen_dupuis();
        let prices = s.full_prices(&s.net.owned_stations(), &[212.0, 219.0]).unwrap();
        let sol = solve_ue(&s, &prices, &UeOptions::default()).unwrap();
        let r = sensitivity(&s, &sol, &s.net.owned_stations(), &Default::default()).unwrap();
        for c in r.grad.column_iter() {
            assert!(c.sum().abs() < 1e-8, "{}", c.sum());
        }
    }

    #[test]
    fn mixed_matches_single_class_system() {
        let s = fixtures::mixed_toy();
        let sol = solve_ue(&s, &s.net.base_prices(), &UeOptions::with_tol(1e-12)).unwrap();
        let owned = s.net.owned_stations();
        let a = gradient_mixed(&s, &sol, &owned, &Default::default()).unwrap();
        let b = sensitivity(&s, &sol, &owned, &Default::default()).unwrap();
        assert!((a.grad.clone() - b.grad.clone()).amax() < 1e-10, "{} vs {}", a.grad, b.grad);
    }
}
