//! Mollify |x| and sqrt|x| on a shrinking ε grid and compare the error at 0
//! with the Hölder bound. Then run the whole mollifier suite.

use itowentzell::experiments::{run_mollifier_suite, Format, Report};
use itowentzell::mollifier::{holder_error_bound, mollify, HolderWitness, MollifierParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases: [(&str, fn(f64) -> f64, f64); 2] = [("|x|", f64::abs, 1.0), ("sqrt|x|", |x| x.abs().sqrt(), 0.5)];
    for (name, f, exponent) in cases {
        println!("{name}");
        for eps in [0.5, 0.1, 0.02, 0.004] {
            let params = MollifierParams::new(eps, 1);
            let err = (mollify(|y| f(y[0]), &[0.0], &params)? - f(0.0)).abs();
            let bound = holder_error_bound(&params, &HolderWitness { constant: 1.0, exponent });
            println!("  eps {eps:<6} error {err:.3e}  bound {bound:.3e}  ratio {:.3}", err / bound);
        }
    }

    let report = run_mollifier_suite(&[0.5, 0.1, 0.02])?;
    print!("{}", report.render(Format::Csv));
    Ok(())
}
