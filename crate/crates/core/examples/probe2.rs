use monotube::models::{build_cstr, CstrParams};
use monotube::nlp::{solve, SolverOptions};
use monotube::ocp::{build_ol_nlp, RobustOcp};
use monotube::partition::PartitionSpec;

fn main() {
    let pr = CstrParams::default();
    let m = build_cstr(1, &pr);
    let horizon: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let mode = std::env::args().nth(2).unwrap_or_else(|| "ol".into());
    if mode == "nom" {
        let nlp = monotube::ocp::build_nominal_nlp(&m, &m.p_nominal, horizon, &m.x0).unwrap();
        let start = nlp.cold_start(&m, &m.p_nominal);
        let mut opts = SolverOptions::default();
        opts.max_iter = 300;
        match std::env::args().nth(3).as_deref() {
            Some("bfgs") => opts.hessian = monotube::nlp::HessianMode::DampedBfgs,
            Some("gn") => opts.hessian = monotube::nlp::HessianMode::GaussNewton,
            _ => {}
        }
        let sol = solve(&nlp.problem, &start, &opts);
        println!(
            "status {:?} iters {} kkt {:.3e} viol {:.3e} obj {:.4} detail '{}'",
            sol.status, sol.iterations, sol.kkt, sol.violation, sol.objective, sol.detail
        );
        for r in sol.log.iter().filter(|r| r.iter % 10 == 0 || r.iter + 10 > sol.iterations) {
            println!(
                "  it {} obj {:.9} kkt {:.3e} viol {:.3e} step {:.3e} act {}",
                r.iter, r.objective, r.kkt, r.violation, r.step, r.active
            );
        }
        return;
    }
    let part = if mode == "cl" {
        PartitionSpec::chain(5, 3, 2)
    } else {
        PartitionSpec::single(5)
    };
    let ocp = RobustOcp::new(m.clone(), horizon, part).unwrap();
    let nlp = if mode == "cl" {
        monotube::ocp::build_cl_nlp(&ocp, &m.x0).unwrap()
    } else {
        build_ol_nlp(&ocp, &m.x0).unwrap()
    };
    let start = nlp.cold_start(&ocp);
    println!("cold start violation {:.3e}", nlp.problem.violation(&start).unwrap());
    // Worst rows at the cold start.
    let ci = nlp.problem.c_ineq(&start).unwrap();
    let mut idx: Vec<usize> = (0..ci.len()).collect();
    idx.sort_by(|a, b| ci[*b].partial_cmp(&ci[*a]).unwrap());
    for &i in idx.iter().take(10) {
        if ci[i] > 1e-9 {
            println!("  cold viol {} = {:.4e}", nlp.problem.ineq_tags[i], ci[i]);
        }
    }
    let mut opts = SolverOptions::default();
    opts.max_iter = 300;
    if std::env::args().nth(3).as_deref() == Some("gn") {
        opts.hessian = monotube::nlp::HessianMode::GaussNewton;
    }
    let sol = solve(&nlp.problem, &start, &opts);
    println!(
        "status {:?} iters {} kkt {:.3e} viol {:.3e} obj {:.4} detail '{}'",
        sol.status, sol.iterations, sol.kkt, sol.violation, sol.objective, sol.detail
    );
    for r in sol.log.iter().filter(|r| r.iter % 10 == 0 || r.iter + 20 > sol.iterations) {
        println!(
            "  it {} obj {:.9} kkt {:.3e} viol {:.3e} step {:.3e} act {}",
            r.iter, r.objective, r.kkt, r.violation, r.step, r.active
        );
    }
    {
        use monotube::nlp::{kkt_residual, refine_multipliers};
        let grad = nalgebra::DVector::from_vec(nlp.problem.gradient(&sol.z).unwrap());
        let ci = nlp.problem.c_ineq(&sol.z).unwrap();
        let a_eq = nlp.problem.jacobian_eq(&sol.z).unwrap();
        let a_ineq = nlp.problem.jacobian_ineq(&sol.z).unwrap();
        println!("grad norm {:.3e}", grad.amax());
        for act_tol in [1e-8, 1e-6, 1e-4, 1e-2] {
            match refine_multipliers(&nlp.problem, &sol.z, &grad, &ci, &a_eq, &a_ineq, act_tol) {
                Some((l2, mi2, mlo2, mhi2)) => {
                    let r = kkt_residual(&nlp.problem, &sol.z, &l2, &mi2, &mlo2, &mhi2).unwrap();
                    let n = sol.z.len();
                    let mut stat = grad.clone();
                    for (i, m) in mi2.iter().enumerate() {
                        if *m != 0.0 {
                            stat += a_ineq.row(i).transpose() * *m;
                        }
                    }
                    for j in 0..n {
                        stat[j] += mhi2[j] - mlo2[j];
                    }
                    let comp = ci
                        .iter()
                        .zip(&mi2)
                        .fold(0.0f64, |a, (c, m)| a.max((c * m).abs()));
                    println!(
                        "refit act_tol {:.0e}: kkt {:.3e} stat {:.3e} comp {:.3e}",
                        act_tol,
                        r,
                        stat.amax(),
                        comp
                    );
                }
                None => println!("refit act_tol {:.0e}: None", act_tol),
            }
        }
        // Sign-unconstrained stationarity fit over near-active columns.
        for act_tol in [1e-6, 1e-4, 1e-2] {
            let n = sol.z.len();
            let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
            for (j, c) in ci.iter().enumerate() {
                if *c >= -act_tol {
                    cols.push(a_ineq.row(j).transpose());
                }
            }
            for i in 0..n {
                let lo = nlp.problem.z_lo[i];
                let hi = nlp.problem.z_hi[i];
                if lo.is_finite() && sol.z[i] - lo <= act_tol {
                    let mut e = nalgebra::DVector::zeros(n);
                    e[i] = -1.0;
                    cols.push(e);
                }
                if hi.is_finite() && hi - sol.z[i] <= act_tol {
                    let mut e = nalgebra::DVector::zeros(n);
                    e[i] = 1.0;
                    cols.push(e);
                }
            }
            let mut a = nalgebra::DMatrix::zeros(n, cols.len());
            for (k, col) in cols.iter().enumerate() {
                a.column_mut(k).copy_from(col);
            }
            let svd = a.clone().svd(true, true);
            let c = svd.solve(&(-&grad), 1e-10).unwrap();
            let resid = (&grad + &a * &c).amax();
            let neg = c.iter().filter(|v| **v < -1e-9).count();
            println!(
                "free fit act_tol {:.0e}: cols {} resid {:.3e} neg {}",
                act_tol,
                cols.len(),
                resid,
                neg
            );
        }
    }
    let ci = nlp.problem.c_ineq(&sol.z).unwrap();
    let mut idx: Vec<usize> = (0..ci.len()).collect();
    idx.sort_by(|a, b| ci[*b].partial_cmp(&ci[*a]).unwrap());
    for &i in idx.iter().take(15) {
        if ci[i] > 1e-9 {
            println!("  final viol {} = {:.4e}", nlp.problem.ineq_tags[i], ci[i]);
        }
    }
    for (k, b) in nlp.boxes(&sol.z).iter().enumerate() {
        println!(
            "box k{}: lo {:?}",
            k + 1,
            b.lo().iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()
        );
        println!(
            "        hi {:?}",
            b.hi().iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()
        );
    }
}
