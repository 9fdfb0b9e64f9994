// Temporary diagnostics for the greedy residual plateau.

use hjb_pi::kernels::Kernel;
use hjb_pi::problems;
use hjb_pi::recovery::{solve_linear_recovery, JitterPolicy};
use hjb_pi::rkhs_pi::build_pe_functionals;
use nalgebra::DVector;

#[test]
#[ignore]
fn probe_toy_greedy_diagnose() {
    let b = problems::toy_problem().unwrap();
    let p = &b.problem;
    let pool = problems::grid_2d(-1.0, 1.0, 100);
    let kernel = Kernel::gaussian(1.7f64.sqrt());

    // precompute
    let dirs: Vec<DVector<f64>> = pool
        .iter()
        .map(|x| p.closed_loop_direction(x, &(b.u0)(x)))
        .collect();
    let denoms: Vec<f64> = pool
        .iter()
        .map(|x| p.running_cost(x, &(b.u0)(x)))
        .collect();

    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut surrogate = None;

    for pick in 0..250 {
        let nus: Vec<f64> = remaining
            .iter()
            .map(|&i| {
                let g: f64 = surrogate
                    .as_ref()
                    .map_or(0.0, |s: &hjb_pi::Surrogate| s.grad_dot(&pool[i], dirs[i].as_slice()));
                ((g + denoms[i]) / denoms[i]).abs()
            })
            .collect();
        let (best_pos, best_nu) = nus
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (j, v)| if *v > acc.1 { (j, *v) } else { acc });
        let best_idx = remaining[best_pos];

        if pick % 20 == 0 || pick > 230 {
            // interpolation quality at centers
            let max_center_res = surrogate.as_ref().map_or(0.0, |s: &hjb_pi::Surrogate| {
                centers
                    .iter()
                    .map(|c| {
                        let u = (b.u0)(c);
                        p.ghjb_residual(&s.grad(c), &u, c).abs()
                    })
                    .fold(0.0f64, f64::max)
            });
            println!(
                "n={:3} res={:10.3e} at ({:+.3},{:+.3}) denom={:.3e} center_res={:.3e}",
                centers.len(),
                best_nu,
                pool[best_idx][0],
                pool[best_idx][1],
                denoms[best_idx],
                max_center_res,
            );
        }

        centers.push(pool[best_idx].clone());
        remaining.remove(best_pos);
        let u_vals: Vec<DVector<f64>> = centers.iter().map(|c| (b.u0)(c)).collect();
        let fs = build_pe_functionals(p, &kernel, &centers, &u_vals).unwrap();
        let mut targets = vec![0.0];
        for (c, u) in centers.iter().zip(&u_vals) {
            targets.push(-p.running_cost(c, u));
        }
        match solve_linear_recovery(&fs, &DVector::from_vec(targets), &kernel, JitterPolicy::Auto)
        {
            Ok(rep) => {
                if pick % 20 == 0 {
                    println!("      jitter={:.2e} norm={:.3e}", rep.regularization_used, rep.rkhs_norm);
                }
                surrogate = Some(rep.surrogate);
            }
            Err(e) => {
                println!("n={}: solve failed: {e}", centers.len());
                break;
            }
        }
    }
}
