//! Assemble the periodized wavelet family over a few scales and print the
//! structure the cascade depends on: unit norms, pairwise orthogonality,
//! vanishing means, and supports confined to their annular lattice bands.

use cascade_lab::spectral::{BallFamily, BumpProfile, WaveletFamily};

fn main() {
    let balls = BallFamily::standard(1, 0.6).unwrap();
    let family = WaveletFamily::build(balls, 1, 3, BumpProfile::Mollifier, None).unwrap();
    let (n_min, n_top) = family.scale_range();
    println!(
        "wavelet family: scales {n_min}..={n_top}, field cutoff {}, ratio {:.2}",
        family.cutoff(),
        family.balls().scale_ratio()
    );

    println!("\n{:>6} {:>6} {:>10} {:>12} {:>12}", "ball", "scale", "modes", "norm-1", "mean");
    for (&(i, n), w) in family.iter() {
        let field = w.field();
        let mean: f64 = field.mean_value().iter().map(|c| c.norm()).sum();
        println!(
            "{:>6} {:>6} {:>10} {:>12.3e} {:>12.3e}",
            i,
            n,
            field.iter().count(),
            (field.l2_norm() - 1.0).abs(),
            mean
        );
    }

    let mut worst = 0.0f64;
    for (&(i1, n1), w1) in family.iter() {
        for (&(i2, n2), w2) in family.iter() {
            if (i1, n1) >= (i2, n2) {
                continue;
            }
            worst = worst.max(w1.field().inner_product(w2.field()).abs());
        }
    }
    println!("\nworst off-diagonal Gram entry: {worst:.3e}");
}
