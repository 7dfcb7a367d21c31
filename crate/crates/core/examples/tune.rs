//! Coarse grid search over the regularizer settings on the seeded phantom
//! suites. Prints one line per configuration.
//!
//! ```text
//! cargo run --release -p dispreg-core --example tune -- \
//!     [suite t|s] [magnitude] [grid] [iterations,..] [temperatures,..] [refine 0|1] [seeds]
//! ```

use dispreg_core::metrics::{dice, jacobian_stats, mean_dice};
use dispreg_core::phantom::{generate, Deformation, PhantomSpec};
use dispreg_core::pipeline::{register, warp_moving_labels};
use dispreg_core::RegistrationConfig;

fn list<T: std::str::FromStr>(s: Option<&String>, default: &str) -> Vec<T> {
    s.map(String::as_str)
        .unwrap_or(default)
        .split(',')
        .filter_map(|v| v.parse().ok())
        .collect()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let deformation = match args.first().map(String::as_str) {
        Some("t") => Deformation::Translation,
        _ => Deformation::SmoothRandom,
    };
    let magnitude: f64 = list(args.get(1), "0.3")[0];
    let grid: usize = list(args.get(2), "16")[0];
    let iterations: Vec<usize> = list(args.get(3), "2");
    let temperatures: Vec<f32> = list(args.get(4), "1000,3000,10000");
    let refine = list::<u8>(args.get(5), "0")[0] == 1;
    let seeds: u64 = list(args.get(6), "5")[0];

    let phantoms: Vec<_> = (1..=seeds)
        .map(|seed| {
            generate(&PhantomSpec {
                seed,
                deformation,
                magnitude,
                ..Default::default()
            })
            .expect("valid phantom")
        })
        .collect();

    for &iters in &iterations {
        for &temperature in &temperatures {
            let mut cfg = RegistrationConfig {
                grid: [grid; 3],
                refine,
                ..Default::default()
            };
            cfg.regularizer.iterations = iters;
            cfg.regularizer.alphas[5].scale = temperature;
            let control = cfg.grid().expect("valid grid");
            let (mut err, mut before, mut after, mut fold, mut worst_fold) =
                (0.0, 0.0, 0.0, 0.0, 0.0f64);
            for p in &phantoms {
                let out = register(&p.fixed, &p.moving, &cfg).expect("registration");
                let interior: Vec<usize> = (0..control.len())
                    .filter(|&k| {
                        control
                            .unravel(k)
                            .iter()
                            .zip(control.counts())
                            .all(|(&i, n)| i > 0 && i + 1 < n)
                    })
                    .collect();
                err += interior
                    .iter()
                    .map(|&k| {
                        distance(
                            out.control_field.vectors()[k],
                            p.ground_truth.sample(control.point(k)),
                        )
                    })
                    .sum::<f64>()
                    / interior.len() as f64;
                let labels = p.labels();
                before +=
                    mean_dice(&dice(&p.fixed_labels, &p.moving_labels, &labels).unwrap()).unwrap();
                let warped = warp_moving_labels(&out, &p.moving_labels).unwrap();
                after += mean_dice(&dice(&p.fixed_labels, &warped, &labels).unwrap()).unwrap();
                let f = jacobian_stats(&out.field).unwrap().folding_fraction;
                fold += f;
                worst_fold = worst_fold.max(f);
            }
            let n = phantoms.len() as f64;
            println!(
                "iters {iters} T {temperature:>7}: err {:.4} dice {:.3} -> {:.3} fold mean {:.4} max {:.4}",
                err / n,
                before / n,
                after / n,
                fold / n,
                worst_fold
            );
        }
    }
}
