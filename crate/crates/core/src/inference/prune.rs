use log::warn;

use crate::state::ModelState;

/// Expected squared-loading mass of every active generative dimension,
/// `Σ_m Σ_d ⟨v_ds²⟩ + Σ_c ⟨v^Y_cs²⟩`.
pub fn loading_mass(state: &ModelState) -> Vec<f64> {
    let mut mass = vec![0.0; state.s()];
    for q in state.v.iter().chain(std::iter::once(&state.vy)) {
        let sq = q.squared_means();
        for (s, m) in mass.iter_mut().enumerate() {
            *m += sq.column(s).sum();
        }
    }
    mass
}

/// Drops generative dimensions whose loading mass is below
/// `threshold × max mass`. Returns the removed original indices.
pub fn prune_latents(state: &mut ModelState, threshold: f64) -> Vec<usize> {
    let mass = loading_mass(state);
    let max = mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = threshold * max;
    let mut keep: Vec<usize> = (0..mass.len()).filter(|&s| mass[s] >= cut).collect();
    if keep.is_empty() {
        let best = (0..mass.len())
            .max_by(|&a, &b| mass[a].total_cmp(&mass[b]))
            .expect("at least one active dimension");
        warn!("pruning would remove every generative dimension; keeping dimension {}", state.active_s[best]);
        keep.push(best);
    }
    if keep.len() == mass.len() {
        return Vec::new();
    }
    let removed: Vec<usize> = (0..mass.len())
        .filter(|s| !keep.contains(s))
        .map(|s| state.active_s[s])
        .collect();
    state.g.select_columns(&keep);
    for v in state.v.iter_mut() {
        v.select_columns(&keep);
    }
    state.vy.select_columns(&keep);
    for d in state.delta.iter_mut() {
        d.select(&keep);
    }
    state.active_s = keep.iter().map(|&s| state.active_s[s]).collect();
    removed
}
