//! The cascade nonlinearity against its two defining algebraic identities:
//! symmetry `C(u, v) = C(v, u)` and energy neutrality `<C(u, u), u> = 0`,
//! both holding to rounding error on random fields from the wavelet span.

use cascade_lab::cascade::{CascadeOperator, StructureConstants};
use cascade_lab::spectral::{BallFamily, BumpProfile, WaveletFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let balls = BallFamily::standard(1, 0.6).unwrap();
    let family = WaveletFamily::build(balls, 1, 2, BumpProfile::Mollifier, None).unwrap();
    let op = CascadeOperator::new(StructureConstants::dyadic_default(1), family, 0.0).unwrap();

    let report = op.constants().validate();
    println!(
        "structure constants: {} entries, antisymmetry and cancellation valid: {}",
        op.constants().len(),
        report.is_valid()
    );

    println!("\n{:>6} {:>14} {:>16} {:>14}", "seed", "|flux|/||u||^3", "sym residual", "trunc flux");
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = op.wavelets().random_span_field(&mut rng);
        let v = op.wavelets().random_span_field(&mut rng);

        let flux = op.energy_flux(&u).unwrap().abs() / u.l2_norm().powi(3);
        let cuv = op.apply(&u, &v).unwrap();
        let cvu = op.apply(&v, &u).unwrap();
        let denom = cuv.field.l2_norm();
        let mut diff = cuv.field;
        diff.axpy(-1.0, &cvu.field).unwrap();

        println!(
            "{:>6} {:>14.3e} {:>16.3e} {:>14.3e}",
            seed,
            flux,
            diff.l2_norm() / denom,
            cuv.truncated_flux
        );
    }
}
