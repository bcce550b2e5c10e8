//! Compares the empirical Lipschitz lower bound (gradient-ascent probing)
//! against the closed-form upper bound `prod n_l^{1/p}` across relaxation
//! exponents. At p = infinity the net is exactly 1-Lipschitz.

use linf_dist::certification::lipschitz_lower_bound;
use linf_dist::core_math::PExponent;
use linf_dist::data::gen_synthetic;
use linf_dist::network::{DistanceNet, Mode};

fn main() -> Result<(), linf_dist::Error> {
    let data = gen_synthetic(32, 10, 2, 0.1, 0.05, 21)?;
    let mut net = DistanceNet::init_identity(&[10, 24, 24, 2], 5, 0.05)?;
    net.mode = Mode::Inference;

    println!("{:>8}  {:>12}  {:>12}  {:>12}", "p", "lower_mean", "lower_max", "upper");
    for p in [2.0, 8.0, 64.0, 512.0] {
        net.p = PExponent::finite(p)?;
        let (_, mean, max) = lipschitz_lower_bound(&net, &data, 1.0 / 255.0, 17)?;
        let upper = net.lipschitz_upper_bound();
        println!("{p:>8.0}  {mean:>12.4}  {max:>12.4}  {upper:>12.4}");
        assert!(max <= upper * (1.0 + 1e-9));
    }

    net.p = PExponent::Infinity;
    let (_, mean, max) = lipschitz_lower_bound(&net, &data, 1.0 / 255.0, 17)?;
    println!("{:>8}  {mean:>12.4}  {max:>12.4}  {:>12.4}", "inf", net.lipschitz_upper_bound());
    assert!(max <= 1.0 + 1e-9, "distance nets are 1-Lipschitz at p = infinity");
    Ok(())
}
