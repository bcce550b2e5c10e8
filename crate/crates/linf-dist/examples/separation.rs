//! Computes the r-separation of a dataset: the largest radius at which
//! perfect robustness is information-theoretically possible. Pass a
//! directory containing the MNIST IDX files to measure the real dataset;
//! without arguments a synthetic set is used.

use linf_dist::certification::r_separation;
use linf_dist::data::{gen_synthetic, load_mnist};

fn main() -> Result<(), linf_dist::Error> {
    let (name, data) = match std::env::args().nth(1) {
        Some(dir) => ("mnist".to_string(), load_mnist(dir.as_ref(), false)?.head(2000)),
        None => ("synthetic".to_string(), gen_synthetic(1500, 12, 5, 0.07, 0.06, 2)?),
    };

    let rep = r_separation(&data, 0)?;
    let (i, j) = rep.argmin;
    println!("{name}: {} samples, r = {:.6}", data.len(), rep.r);
    println!(
        "closest inter-class pair: #{i} (label {}) and #{j} (label {}), distance {:.6}",
        data.labels[i],
        data.labels[j],
        2.0 * rep.r
    );
    println!(
        "pairs examined: {} (early exit skips pairs that cannot lower the minimum)",
        rep.pairs_examined
    );
    println!("perfect certified accuracy is impossible for eps >= {:.6}", rep.r);
    Ok(())
}
