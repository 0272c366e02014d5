use std::time::Instant;

use monotube::models::{build_cstr, build_double_integrator, CstrParams};
use monotube::ocp::TerminalMode;
use monotube::partition::PartitionSpec;
use monotube::sim::{closed_loop_run, ControllerKind, RunOpts, UncertaintyScenario};

fn report(tag: &str, log: &monotube::sim::ClosedLoopLog, t_hi: Option<(usize, f64)>) {
    let statuses: Vec<_> = log
        .steps
        .iter()
        .filter(|s| s.status != monotube::nlp::Status::Optimal)
        .map(|s| (s.t, s.status, s.kkt))
        .collect();
    let max_t = t_hi.map(|(idx, _)| {
        log.steps
            .iter()
            .map(|s| s.x[idx])
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let max_kkt = log
        .steps
        .iter()
        .filter(|s| s.status == monotube::nlp::Status::Optimal)
        .map(|s| s.kkt)
        .fold(0.0f64, f64::max);
    println!(
        "{tag}: maxkkt {max_kkt:.2e} cost {:.3} infeas0={} rfviol={} meanms={:.1} nonopt={:?} maxT={:?}",
        log.accumulated_cost(),
        log.infeasible_at_start,
        log.feasibility_violations,
        log.mean_solve_ms(),
        statuses,
        max_t
    );
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "cstr".into());
    if which == "di" {
        let m = build_double_integrator();
        let xf = m.x_box.clone();
        let mut opts = RunOpts::new(75, 6, PartitionSpec::from_levels(2, &[0, 1]));
        opts.terminal = TerminalMode::Fixed(xf);
        let sc = UncertaintyScenario::constant_random(1);
        let t0 = Instant::now();
        let ol = closed_loop_run(ControllerKind::OpenLoop, &m, &sc, &opts).unwrap();
        report("di ol", &ol, None);
        let cl = closed_loop_run(ControllerKind::ClosedLoop, &m, &sc, &opts).unwrap();
        report("di cl", &cl, None);
        println!("di total {:.1}s", t0.elapsed().as_secs_f64());
        return;
    }
    let pr = CstrParams::default();
    let m = build_cstr(1, &pr);
    let steps = 40;
    let t_idx = 4;
    let mut opts = RunOpts::new(steps, 8, PartitionSpec::chain(5, 3, 2));
    opts.solver.max_iter = 300;
    let sc = UncertaintyScenario::worst_case();
    let t0 = Instant::now();
    let nom = closed_loop_run(ControllerKind::Nominal, &m, &sc, &opts).unwrap();
    report("nom wc", &nom, Some((t_idx, pr.t_hi)));
    println!("  nominal elapsed {:.1}s", t0.elapsed().as_secs_f64());
    if which == "nom" {
        return;
    }
    let t0 = Instant::now();
    let ol = closed_loop_run(ControllerKind::OpenLoop, &m, &sc, &opts).unwrap();
    report("ol  wc", &ol, Some((t_idx, pr.t_hi)));
    println!("  ol elapsed {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let cl = closed_loop_run(ControllerKind::ClosedLoop, &m, &sc, &opts).unwrap();
    report("cl  wc", &cl, Some((t_idx, pr.t_hi)));
    println!("  cl elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
