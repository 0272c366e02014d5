use std::time::Instant;

use monotube::models::{build_cstr, CstrParams};
use monotube::partition::PartitionSpec;
use monotube::sim::{closed_loop_run, ControllerKind, RunOpts, UncertaintyScenario};

fn main() {
    let pr = CstrParams::default();
    let m = build_cstr(1, &pr);
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let horizon: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let nseeds: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let part = match std::env::args().nth(4).as_deref() {
        Some("levels") => PartitionSpec::from_levels(5, &[1, 4]),
        Some("t4") => PartitionSpec::chain(5, 4, 4),
        _ => PartitionSpec::chain(5, 1, 4),
    };
    println!("steps {} horizon {} seeds {} mu_s {}", steps, horizon, nseeds, part.mu_s());
    let mut sum_ol = 0.0;
    let mut sum_cl = 0.0;
    let mut ms_ol = 0.0;
    let mut ms_cl = 0.0;
    let t0 = Instant::now();
    for seed in 0..nseeds {
        let sc = UncertaintyScenario::constant_random(seed);
        let opts = RunOpts::new(steps, horizon, part.clone());
        let orc = closed_loop_run(ControllerKind::Oracle, &m, &sc, &opts).unwrap();
        let ol = closed_loop_run(ControllerKind::OpenLoop, &m, &sc, &opts).unwrap();
        let cl = closed_loop_run(ControllerKind::ClosedLoop, &m, &sc, &opts).unwrap();
        let co = orc.accumulated_cost();
        let rol = ol.accumulated_cost() / co;
        let rcl = cl.accumulated_cost() / co;
        sum_ol += rol;
        sum_cl += rcl;
        ms_ol += ol.mean_solve_ms();
        ms_cl += cl.mean_solve_ms();
        let bad = |l: &monotube::sim::ClosedLoopLog| {
            l.steps.iter().filter(|s| s.status != monotube::nlp::Status::Optimal).count()
        };
        println!(
            "seed {seed}: ratio ol {rol:.4} cl {rcl:.4} nonopt o/ol/cl {}/{}/{} ms ol {:.0} cl {:.0}",
            bad(&orc), bad(&ol), bad(&cl), ol.mean_solve_ms(), cl.mean_solve_ms()
        );
    }
    let n = nseeds as f64;
    println!(
        "mean ratio ol {:.4} cl {:.4} gap {:.2}pp ms ol {:.0} cl {:.0} total {:.1}s",
        sum_ol / n,
        sum_cl / n,
        (sum_ol - sum_cl) / n * 100.0,
        ms_ol / n,
        ms_cl / n,
        t0.elapsed().as_secs_f64()
    );
}
