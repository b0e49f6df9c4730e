//! Closed-form Gamma shape checks.

use super::*;
use dualvb::state::GammaPrior;

/// Names of the Gamma factors whose shapes differ from the closed forms.
pub fn shape_mismatches(seed: u64, n: usize, dims: &[usize], c: usize, k: usize, s: usize, miss: f64) -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |ok: bool, name: String| {
        if !ok {
            bad.push(name);
        }
    };
    let ds = tiny_dataset(seed, n, dims, c, miss);
    let mut hp = tiny_hp(seed, k, s);
    hp.priors.tau = GammaPrior { shape: 0.5, rate: 2.0 };
    hp.priors.phi = GammaPrior { shape: 1.5, rate: 1.0 };
    let (st, obs) = warm_state(&ds, &hp, 2);
    let p = hp.priors;
    let (nf, kf, cf, sf) = (n as f64, k as f64, c as f64, s as f64);
    check(st.tau.shape[0] == nf * kf / 2.0 + p.tau.shape, "tau".into());
    check(st.eta.shape[0] == nf * cf / 2.0 + p.eta.shape, "eta".into());
    for (m, &d) in dims.iter().enumerate() {
        let df = d as f64;
        check(st.psi[m].shape[0] == obs.views[m].n_observed as f64 / 2.0 + p.psi.shape, format!("psi[{m}]"));
        check(st.phi[m].shape.iter().all(|&a| a == df / 2.0 + p.phi.shape), format!("phi[{m}]"));
        check(st.gamma[m].shape.iter().all(|&a| a == kf / 2.0 + p.gamma.shape), format!("gamma[{m}]"));
        check(st.delta[m].shape.iter().all(|&a| a == df / 2.0 + p.delta.shape), format!("delta[{m}]"));
        check(st.lambda[m].shape.iter().all(|&a| a == sf / 2.0 + p.lambda.shape), format!("lambda[{m}]"));
    }
    let out = dims.len();
    check(st.delta[out].shape.iter().all(|&a| a == cf / 2.0 + p.delta_y.shape), "delta_y".into());
    check(st.lambda[out].shape.iter().all(|&a| a == sf / 2.0 + p.lambda_y.shape), "lambda_y".into());
    drop(check);
    bad
}
