// Temporary: separate solver capability from data quality on the toy problem.

use hjb_pi::kernels::Kernel;
use hjb_pi::ocp::VerificationMode;
use hjb_pi::problems;
use hjb_pi::recovery::JitterPolicy;
use hjb_pi::rkhs_pi::{greedy_select, run_rkhs_pi, GreedyConfig, PIConfig};
use nalgebra::DVector;

// greedy under the EXACT optimal policy: data is globally consistent
#[test]
#[ignore]
fn probe_toy_greedy_under_optimal_policy() {
    let b = problems::toy_problem().unwrap();
    let u_star = |x: &[f64]| DVector::from_column_slice(&[-x[1] * x[0].sin()]);
    let pool = problems::grid_2d(-1.0, 1.0, 100);
    let kernel = Kernel::gaussian(1.7f64.sqrt());
    let gc = GreedyConfig::new(pool, 300, 1e-4);
    let t0 = std::time::Instant::now();
    let (centers, trace, skipped) =
        greedy_select(&b.problem, &kernel, &u_star, &gc, JitterPolicy::Auto).unwrap();
    println!(
        "under u*: {} centers, {} skipped, final res {:.3e}, {:.1?}",
        centers.len(),
        skipped.len(),
        trace.last().unwrap().res_ghjb,
        t0.elapsed()
    );
    for rec in trace.iter().step_by(25) {
        println!("  n={:3}  res={:.3e}", rec.n_centers, rec.res_ghjb);
    }
}

// does the arbitrary first pick change the plateau?
#[test]
#[ignore]
fn probe_toy_greedy_seed_sensitivity() {
    let b = problems::toy_problem().unwrap();
    let kernel = Kernel::gaussian(1.7f64.sqrt());
    let base_pool = problems::grid_2d(-1.0, 1.0, 100);

    let norm = |p: &Vec<f64>| p.iter().map(|v| v * v).sum::<f64>();
    let mut near_first = base_pool.clone();
    let nearest = (0..near_first.len())
        .min_by(|&a, &b| norm(&near_first[a]).partial_cmp(&norm(&near_first[b])).unwrap())
        .unwrap();
    near_first.swap(0, nearest);

    for (label, pool) in [("corner-first", base_pool), ("origin-first", near_first)] {
        let gc = GreedyConfig::new(pool, 300, 1e-4);
        let t0 = std::time::Instant::now();
        let (centers, trace, skipped) =
            greedy_select(&b.problem, &kernel, &*b.u0, &gc, JitterPolicy::Auto).unwrap();
        println!(
            "{label}: {} centers, {} skipped, final res {:.3e}, {:.1?}",
            centers.len(),
            skipped.len(),
            trace.last().unwrap().res_ghjb,
            t0.elapsed()
        );
        for rec in trace.iter().step_by(50) {
            println!("   n={:3}  res={:.3e}", rec.n_centers, rec.res_ghjb);
        }
    }
}

// where do the stuck residuals live at 300 centers?
#[test]
#[ignore]
fn probe_toy_residual_map() {
    let b = problems::toy_problem().unwrap();
    let kernel = Kernel::gaussian(1.7f64.sqrt());
    let pool = problems::grid_2d(-1.0, 1.0, 100);
    let gc = GreedyConfig::new(pool.clone(), 300, 1e-4);
    let (centers, _, _) =
        greedy_select(&b.problem, &kernel, &*b.u0, &gc, JitterPolicy::Auto).unwrap();
    let u_vals: Vec<DVector<f64>> = centers.iter().map(|c| (b.u0)(c)).collect();
    let rep = hjb_pi::rkhs_pi::policy_evaluation(
        &b.problem,
        &kernel,
        &centers,
        &u_vals,
        JitterPolicy::Auto,
    )
    .unwrap();
    let s = rep.surrogate;
    let mut rows: Vec<(f64, f64, f64, f64)> = pool
        .iter()
        .map(|x| {
            let u = (b.u0)(x);
            let denom = b.problem.running_cost(x, &u);
            let dir = b.problem.closed_loop_direction(x, &u);
            let nu = ((s.grad_dot(x, dir.as_slice()) + denom) / denom).abs();
            (nu, x[0], x[1], denom)
        })
        .collect();
    rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("worst 15 of {}:", rows.len());
    for r in rows.iter().take(15) {
        println!("  nu={:9.3e} at ({:+.3},{:+.3}) denom={:9.3e}", r.0, r.1, r.2, r.3);
    }
    let over: usize = rows.iter().filter(|r| r.0 > 1e-4).count();
    let med = rows[rows.len() / 2].0;
    println!("{over} points above 1e-4; median nu = {med:.3e}");
}

// the full pipeline under u0: does Error-PI still converge?
#[test]
#[ignore]
fn probe_toy_full_pi_error() {
    let b = problems::toy_problem().unwrap();
    let pool = problems::grid_2d(-1.0, 1.0, 100);
    let kernel = Kernel::gaussian(1.7f64.sqrt());
    let gc = GreedyConfig::new(pool, 300, 1e-4);
    let mut pc = PIConfig::new(1e-10, 6, VerificationMode::Psd);
    pc.jitter = JitterPolicy::Auto;
    pc.test_points = problems::sample_box(b.problem.domain(), 100, 2, true);
    let t0 = std::time::Instant::now();
    match run_rkhs_pi(&b.problem, &kernel, &*b.u0, &gc, &pc) {
        Ok(out) => {
            println!("{} centers, {:.1?}", out.centers.len(), t0.elapsed());
            for r in &out.history.iterations {
                println!(
                    "iter {}: e={:.3e} res={:.3e} err={:?} feasible={}",
                    r.iter,
                    r.e_eta,
                    r.res_ghjb,
                    r.error_pi.map(|e| format!("{e:.3e}")),
                    r.verification.feasible
                );
            }
        }
        Err(e) => println!("FAILED: {e}"),
    }
}
