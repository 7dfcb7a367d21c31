//! Refinement sweep: feed-forward registration of the smooth-random suite,
//! then instance optimisation with the data term scaled by each factor.
//!
//! ```text
//! cargo run --release -p dispreg-core --example tune_refine -- [grid] [scales,..] [lambdas,..] [steps,..]
//! ```

use dispreg_core::instance_opt::refine_with_history;
use dispreg_core::metrics::{dice, jacobian_stats, mean_dice};
use dispreg_core::phantom::{generate, Deformation, PhantomSpec};
use dispreg_core::pipeline::register;
use dispreg_core::transform::{upsample_field, warp_labels};
use dispreg_core::{CostTensor, InstanceOptConfig, RegistrationConfig};

fn list<T: std::str::FromStr>(s: Option<&String>, default: &str) -> Vec<T> {
    s.map(String::as_str)
        .unwrap_or(default)
        .split(',')
        .filter_map(|v| v.parse().ok())
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let grid: usize = list(args.first(), "8")[0];
    let scales: Vec<f32> = list(args.get(1), "1,100,1000,10000");
    let lambdas: Vec<f64> = list(args.get(2), "1.5");
    let step_counts: Vec<usize> = list(args.get(3), "50");
    let cfg = RegistrationConfig {
        grid: [grid; 3],
        ..Default::default()
    };
    let runs: Vec<_> = (1..=5)
        .map(|seed| {
            let p = generate(&PhantomSpec {
                seed,
                deformation: Deformation::SmoothRandom,
                magnitude: 0.3,
                ..Default::default()
            })
            .unwrap();
            let out = register(&p.fixed, &p.moving, &cfg).unwrap();
            (p, out)
        })
        .collect();
    let score = |p: &dispreg_core::Phantom, ctrl: &dispreg_core::DisplacementField| {
        let full = upsample_field(ctrl, p.fixed.dims()).unwrap();
        let w = warp_labels(&p.moving_labels, &full).unwrap();
        let d = mean_dice(&dice(&p.fixed_labels, &w, &p.labels()).unwrap()).unwrap();
        (d, jacobian_stats(&full).unwrap().folding_fraction)
    };
    let (mut d0, mut f0) = (0.0, 0.0);
    for (p, out) in &runs {
        let (d, f) = score(p, &out.initial_field);
        d0 += d;
        f0 += f;
    }
    println!("feed-forward: dice {:.4} fold {:.4}", d0 / 5.0, f0 / 5.0);
    for &steps in &step_counts {
        for &lambda in &lambdas {
            for &s in &scales {
                let (mut dd, mut ff, mut worst) = (0.0, 0.0, f64::INFINITY);
                for (p, out) in &runs {
                    let scaled = CostTensor::new(
                        out.cost.grid(),
                        out.cost.space(),
                        out.cost.data().iter().map(|c| c * s).collect(),
                    )
                    .unwrap();
                    let r = refine_with_history(
                        &scaled,
                        &out.initial_field,
                        &InstanceOptConfig {
                            lambda,
                            steps,
                            ..Default::default()
                        },
                    )
                    .unwrap();
                    let (d, f) = score(p, &r.field);
                    let (db, _) = score(p, &out.initial_field);
                    worst = worst.min(d - db);
                    dd += d;
                    ff += f;
                }
                println!("steps {steps} lambda {lambda} scale {s}: dice {:.4} fold {:.4} worst dice change {:+.4}", dd / 5.0, ff / 5.0, worst);
            }
        }
    }
}
