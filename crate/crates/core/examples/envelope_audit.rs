//! Calibrates the pooled min-convolution against the exact lower envelope:
//! scans the parabola curvature and prints the RMS deviation over random
//! `15³` rows for each value.
//!
//! `cargo run --release -p dispreg-core --example envelope_audit -- [first_seed] [rows]`

use dispreg_core::regularizer::{exact_lower_envelope_3d, min_convolution_row, RegularizerParams};
use dispreg_core::rng::XorShift64Star;

fn rms(rows: &[Vec<f64>], curvature: f64, steps: usize) -> f64 {
    let params = RegularizerParams::identity(1);
    let mut total = 0.0;
    let mut n = 0usize;
    for row in rows {
        let mut pooled: Vec<f32> = row.iter().map(|&v| v as f32).collect();
        min_convolution_row(&mut pooled, steps, &params);
        let exact = exact_lower_envelope_3d(row, steps, curvature);
        for (p, e) in pooled.iter().zip(&exact) {
            total += (*p as f64 - e) * (*p as f64 - e);
            n += 1;
        }
    }
    (total / n as f64).sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let first: u64 = args.get(1).map_or(1000, |s| s.parse().unwrap());
    let count: u64 = args.get(2).map_or(100, |s| s.parse().unwrap());
    let steps = 15;
    let rows: Vec<Vec<f64>> = (first..first + count)
        .map(|seed| {
            let mut rng = XorShift64Star::new(seed);
            (0..steps * steps * steps).map(|_| rng.uniform()).collect()
        })
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..=400 {
        let c = i as f64 * 0.0001;
        let r = rms(&rows, c, steps);
        if r < best.0 {
            best = (r, c);
        }
        if i % 25 == 0 {
            println!("curvature {c:.4}: rms {r:.6}");
        }
    }
    println!("best curvature {:.4} rms {:.6}", best.1, best.0);
}
