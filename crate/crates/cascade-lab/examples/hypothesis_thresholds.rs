//! Decide the five exponent inequality systems in exact rational
//! arithmetic, locate each pass/fail threshold by bisection, and compare
//! against the closed forms.

use cascade_lab::hypotheses::{
    check, closed_form_threshold, threshold_with_delta, ExponentProblem, Hypothesis,
};
use num::rational::BigRational;
use num::{BigInt, ToPrimitive};

fn main() {
    let delta = 0.01;
    let delta_exact = BigRational::new(BigInt::from(1), BigInt::from(100));

    println!("{:>10} {:>14} {:>14} {:>10}", "system", "bisection", "closed form", "boundary");
    for hyp in Hypothesis::ALL {
        let bisected = threshold_with_delta(hyp, delta, 1e-9).unwrap();
        let exact = closed_form_threshold(hyp, &delta_exact);
        let at = check(
            &ExponentProblem::exact_with_delta(hyp, exact.clone(), delta_exact.clone()).unwrap(),
        );
        println!(
            "{:>10} {:>14.9} {:>14} {:>10}",
            hyp.cli_token(),
            bisected,
            exact.to_string(),
            if at.pass { "passes" } else { "fails" }
        );
    }

    // A verdict carries its margins; the tightest one names the binding
    // constraint at that exponent.
    let rho = BigRational::new(BigInt::from(3), BigInt::from(16));
    let verdict = check(
        &ExponentProblem::exact_with_delta(Hypothesis::H1, rho, delta_exact).unwrap(),
    );
    println!("\nH1 at rho = 3/16: pass = {}", verdict.pass);
    for margin in &verdict.margins {
        println!(
            "  {:<28} margin {:>10.6} ({})",
            margin.name,
            margin.margin.to_f64().unwrap(),
            if margin.strict { "strict" } else { "non-strict" }
        );
    }
}
