use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::abstraction::build_symbolic;
use crate::blackbox::{room_domains, room_subsystem, RoomNetworkConfig, SubsystemOracle};
use crate::gridding::{build_grid, AxisBox};
use crate::sampling::{collect, DatasetMeta, SamplePair, SamplingStrategy};

/// One sample at distance 1 from the only representative, zero disturbance gap.
fn toy() -> (Dataset, SymbolicModel, BasisSpec) {
    let xb = AxisBox::new(vec![-1.0], vec![1.0]).unwrap();
    let wb = AxisBox::new(vec![-1.0], vec![1.0]).unwrap();
    let oracle = SubsystemOracle::from_fn(1, 1, vec![vec![0.0]], |x, _, _, o| o[0] = x[0]).unwrap();
    let sm = build_symbolic(&oracle, &build_grid(xb.clone(), &[1]).unwrap(), &build_grid(wb.clone(), &[1]).unwrap()).unwrap();
    let ds = Dataset {
        meta: DatasetMeta {
            subsystem_id: 0,
            seed: 0,
            strategy: SamplingStrategy::Grid,
            x_box: xb,
            w_box: wb,
            n_inputs: 1,
        },
        pairs: vec![SamplePair {
            x: vec![1.0],
            u_index: 0,
            w: vec![0.0],
            x_next: vec![1.0],
        }],
    };
    let basis = BasisSpec::new(vec![Term::Difference { exponents: vec![0] }]).unwrap();
    (ds, sm, basis)
}

fn toy_cfg(gamma: f64) -> SopConfig {
    SopConfig {
        gamma_grid: vec![gamma],
        alpha_max: 1.0,
        psi_max: 0.5,
        ..SopConfig::default()
    }
}

fn solver() -> DenseSimplex {
    DenseSimplex::default()
}

#[test]
fn toy_rows_have_the_expected_form() {
    let (ds, sm, basis) = toy();
    let sel = TupleSelection::all(&ds, &sm);
    let prog = assemble_sop(&ds, &sm, &basis, 0.9, &sel, &toy_cfg(0.9)).unwrap();
    assert_eq!(prog.lp.rows.len(), 4);
    // [q, α, ρ, ψ, μ, ϖ]
    assert_eq!(prog.lp.rows[0].coeffs, vec![-1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
    assert_eq!(prog.lp.rows[1].coeffs, vec![-1.0, 1.0, 0.0, 0.0, -1.0, 0.0]);
    let dec = &prog.lp.rows[2].coeffs;
    assert!((dec[0] - 0.1).abs() < 1e-15);
    assert_eq!(&dec[1..], &[0.0, 0.0, -1.0, -1.0, 0.0]);
    assert_eq!(prog.lp.rows[3].coeffs, vec![0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
}

fn toy_brute_force(gamma: f64, cfg: &SopConfig) -> f64 {
    let mut best = f64::INFINITY;
    let nq = 20_000;
    for iq in 0..=nq {
        let q = -cfg.q_bound + 2.0 * cfg.q_bound * iq as f64 / nq as f64;
        for ia in 0..=10 {
            let alpha = cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * ia as f64 / 10.0;
            for ip in 0..=10 {
                let psi = cfg.psi_min + (cfg.psi_max - cfg.psi_min) * ip as f64 / 10.0;
                let mu = (-q).max(alpha - q).max((1.0 - gamma) * q - psi);
                best = best.min(mu + cfg.varpi_min);
            }
        }
    }
    best
}

#[test]
fn toy_optimum_matches_brute_force_and_closed_form() {
    let (ds, sm, basis) = toy();
    let cfg = toy_cfg(0.9);
    let sol = solve_sop(&ds, &sm, &basis, &cfg, &solver()).unwrap();
    let lp_obj = sol.diagnostics.as_ref().unwrap().gamma_scan[0].objective.unwrap();
    let brute = toy_brute_force(0.9, &cfg);
    assert!((lp_obj - brute).abs() < 1e-4, "{lp_obj} vs {brute}");
    let q = (0.01 + 0.5) / 1.1;
    assert!((sol.mu - (0.01 - q)).abs() < 1e-8);
    assert!(sol.mu < 0.0);
    assert!(sol.feasibility_residual <= 1e-8);
}

#[test]
fn lp_optimum_beats_random_feasible_points() {
    let (ds, sm, basis) = toy();
    let cfg = toy_cfg(0.9);
    let prog = assemble_sop(&ds, &sm, &basis, 0.9, &TupleSelection::all(&ds, &sm), &cfg).unwrap();
    let out = solver().solve(&prog.lp).unwrap();
    assert!(prog.lp.max_violation(&out.x) <= 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut found = 0;
    while found < 10_000 {
        let y: Vec<f64> = (0..prog.lp.n_vars())
            .map(|k| {
                let hi = prog.lp.upper[k].min(1.0);
                rng.gen_range(prog.lp.lower[k]..=hi)
            })
            .collect();
        if prog.lp.max_violation(&y) <= 0.0 {
            found += 1;
            assert!(prog.lp.objective_value(&y) >= out.objective - 1e-12);
        }
    }
}

#[test]
fn toy_scales_with_the_coefficient_bounds() {
    let (ds, sm, basis) = toy();
    let base = solve_sop(&ds, &sm, &basis, &toy_cfg(0.9), &solver()).unwrap();
    for c in [0.5, 2.0, 3.0] {
        let mut cfg = toy_cfg(0.9);
        cfg.q_bound *= c;
        cfg.psi_min *= c;
        cfg.psi_max *= c;
        cfg.alpha_min *= c;
        cfg.alpha_max *= c;
        let scaled = solve_sop(&ds, &sm, &basis, &cfg, &solver()).unwrap();
        assert!((scaled.mu - c * base.mu).abs() < 1e-8, "c={c}: {} vs {}", scaled.mu, c * base.mu);
    }
}

#[test]
fn phase_one_optimum_is_monotone_in_gamma() {
    let (ds, sm, basis) = toy();
    let mut last = f64::INFINITY;
    for gamma in [0.5, 0.9, 0.95, 0.975, 0.985, 0.99, 0.995] {
        let sol = solve_sop(&ds, &sm, &basis, &toy_cfg(gamma), &solver()).unwrap();
        let obj = sol.diagnostics.unwrap().gamma_scan[0].objective.unwrap();
        assert!(obj <= last + 1e-12);
        last = obj;
    }
}

#[test]
fn assembly_errors() {
    let (mut ds, sm, basis) = toy();
    let cfg = toy_cfg(0.9);
    let empty = TupleSelection {
        per_sample: vec![Vec::new()],
    };
    assert!(matches!(assemble_sop(&ds, &sm, &basis, 0.9, &empty, &cfg), Err(Error::Assembly(_))));
    assert!(assemble_sop(&ds, &sm, &basis, 1.0, &TupleSelection::all(&ds, &sm), &cfg).is_err());
    ds.pairs[0].u_index = 3;
    assert!(matches!(
        assemble_sop(&ds, &sm, &basis, 0.9, &TupleSelection::all(&ds, &sm), &cfg),
        Err(Error::Assembly(_))
    ));
}

#[test]
fn infeasible_programs_report_the_worst_row() {
    let (ds, sm, basis) = toy();
    // alpha >= 0.5 with V <= 0.1 forces mu >= 0.4 through the lower-bound row
    let cfg = SopConfig {
        gamma_grid: vec![0.9, 0.95],
        q_bound: 0.1,
        alpha_min: 0.5,
        alpha_max: 1.0,
        mu_bound: 1.0,
        ..SopConfig::default()
    };
    let mut c2 = cfg.clone();
    c2.mu_bound = 1e-3;
    match solve_sop(&ds, &sm, &basis, &c2, &solver()) {
        Err(Error::Infeasible { row, violation }) => {
            assert!(violation > 0.0);
            assert!(row.contains("sample 0"), "{row}");
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
    assert!(solve_sop(&ds, &sm, &basis, &cfg, &solver()).is_ok());
}

fn room_problem(n: usize) -> (Dataset, SymbolicModel, BasisSpec) {
    let oracle = room_subsystem(&RoomNetworkConfig::new(3)).unwrap();
    let (xb, wb) = room_domains();
    let sm = build_symbolic(&oracle, &build_grid(xb.clone(), &[10]).unwrap(), &build_grid(wb.clone(), &[8]).unwrap()).unwrap();
    let ds = collect(&oracle, &xb, &wb, n, SamplingStrategy::LowDiscrepancy, 3).unwrap();
    (ds, sm, BasisSpec::even_difference(1, 6, false).unwrap())
}

#[test]
fn row_count_is_four_per_tuple() {
    let (ds, sm, basis) = room_problem(5);
    let sel = TupleSelection::subsample(&ds, &sm, 7, 1);
    let prog = assemble_sop(&ds, &sm, &basis, 0.9, &sel, &SopConfig::default()).unwrap();
    let sinks: usize = sel
        .per_sample
        .iter()
        .enumerate()
        .map(|(z, ts)| {
            ts.iter()
                .filter(|&&t| {
                    let (s, j) = (t as usize / sm.n_dists(), t as usize % sm.n_dists());
                    sm.successors(s, ds.pairs[z].u_index)[j] == SINK
                })
                .count()
        })
        .sum();
    assert_eq!(sel.len(), 10 * 7);
    assert_eq!(prog.lp.rows.len(), 4 * sel.len() - sinks);
}

fn naive_residuals(sol: &AsbfSolution, ds: &Dataset, sm: &SymbolicModel) -> [f64; 4] {
    let mut r = [f64::NEG_INFINITY; 4];
    let v = |a: &[f64], b: &[f64]| {
        let mut acc = 0.0;
        for (q, t) in sol.q.iter().zip(&sol.basis.terms) {
            acc += q * t.eval(a, b);
        }
        acc
    };
    for p in &ds.pairs {
        for s in 0..sm.n_states() {
            let xh = sm.state_grid().representative(s);
            let d2: f64 = p.x.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum();
            r[0] = r[0].max(-v(&p.x, &xh) - sol.mu);
            r[1] = r[1].max(sol.alpha * d2 - v(&p.x, &xh) - sol.mu);
            for j in 0..sm.n_dists() {
                let wh = sm.dist_grid().representative(j);
                let wd = p.w.iter().zip(&wh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                r[3] = r[3].max(sol.rho * wd - sol.varpi);
                let t = sm.abstract_step(s as u32, p.u_index, j).unwrap();
                if t != SINK {
                    let xt = sm.state_grid().representative(t as usize);
                    r[2] = r[2].max(v(&p.x_next, &xt) - sol.gamma * v(&p.x, &xh) - sol.rho * wd - sol.psi - sol.mu);
                }
            }
        }
    }
    r
}

#[test]
fn room_solution_is_feasible_on_every_tuple() {
    let (ds, sm, basis) = room_problem(40);
    let cfg = SopConfig {
        initial_tuples: 4,
        cuts_per_round: 200,
        ..SopConfig::default()
    };
    let sol = solve_sop(&ds, &sm, &basis, &cfg, &solver()).unwrap();
    let res = residuals(&sol, &ds, &sm).unwrap();
    assert!(res.max() <= 1e-8, "{res:?}");
    assert!(sol.mu < 0.0);
    assert!(sol.alpha >= cfg.alpha_min && sol.psi >= cfg.psi_min);

    let naive = naive_residuals(&sol, &ds, &sm);
    assert_eq!([res.non_negative, res.lower_bound, res.decrease, res.disturbance], naive);

    // the full program agrees with the scan
    let full = assemble_sop(&ds, &sm, &basis, sol.gamma, &TupleSelection::all(&ds, &sm), &cfg).unwrap();
    let y = sol.decision_vector();
    assert!(full.lp.max_violation(&y) <= 1e-8);
    let rows_max = full
        .lp
        .rows
        .iter()
        .map(|r| lp::dot(&r.coeffs, &y) - r.rhs)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((rows_max - res.max()).abs() < 1e-12);

    let mut worse = sol.clone();
    worse.mu -= 1.0;
    let r = residuals(&worse, &ds, &sm).unwrap();
    assert!((r.max() - res.max() - 1.0).abs() < 1e-9);
    assert!((r.non_negative.max(r.lower_bound).max(r.decrease) - 1.0).abs() < 1e-6);
}

#[test]
fn same_data_same_solution() {
    let (ds, sm, basis) = room_problem(10);
    let cfg = SopConfig {
        gamma_grid: vec![0.95, 0.99],
        initial_tuples: 4,
        ..SopConfig::default()
    };
    let a = solve_sop(&ds, &sm, &basis, &cfg, &solver()).unwrap();
    let b = solve_sop(&ds, &sm, &basis, &cfg, &solver()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn room_template_values() {
    let basis = BasisSpec::even_difference(1, 6, false).unwrap();
    let sol = AsbfSolution {
        basis,
        q: vec![0.4949, -0.25, 0.001, 0.8],
        alpha: 0.01,
        gamma: 0.985,
        rho: 0.0,
        psi: 1e-6,
        mu: -0.0496,
        varpi: 1e-6,
        feasibility_residual: 0.0,
        dataset_digest: String::new(),
        diagnostics: None,
    };
    assert!((sol.evaluate(&[0.3], &[0.3]).unwrap() - 0.8).abs() < 1e-15);
    let at_one = sol.evaluate(&[1.2], &[0.2]).unwrap();
    let by_hand = 0.4949 * 1.0f64.powi(6) + (-0.25) * 1.0f64.powi(4) + 0.001 * 1.0 + 0.8;
    assert!((at_one - 1.0459).abs() < 1e-12 && (at_one - by_hand).abs() < 1e-12);
    let zero = AsbfSolution { q: vec![0.0; 4], ..sol.clone() };
    assert_eq!(zero.evaluate(&[0.7], &[-0.1]).unwrap(), 0.0);
    assert!(sol.evaluate(&[0.0, 1.0], &[0.0]).is_err());
}

#[test]
fn solution_json_has_the_documented_fields() {
    let (ds, sm, basis) = toy();
    let sol = solve_sop(&ds, &sm, &basis, &toy_cfg(0.9), &solver()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&sol).unwrap();
    for f in ["basis", "q", "alpha", "gamma", "rho", "psi", "mu", "varpi", "feasibility_residual", "dataset_digest"] {
        assert!(v.get(f).is_some(), "missing {f}");
    }
    let back: AsbfSolution = serde_json::from_value(v).unwrap();
    assert_eq!(back, sol);
}
