//! Coordinate-ascent variational inference: factor updates, the lower bound,
//! pruning of generative dimensions and the training loop.

pub mod bound;
mod elbo;
mod observations;
mod prune;
pub mod updates;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use serde::Serialize;

pub use elbo::{compute_elbo, elbo_terms, ElboTerms};
pub use observations::{ObservedView, Observations};
pub use prune::{loading_mass, prune_latents};
pub use updates::{
    update_ard, update_eta, update_g, update_noise, update_psi, update_tau, update_u, update_u_vy, update_v,
    update_vy, update_w, update_xi, update_y, update_y_xi, update_z,
};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::impute::refresh_training_imputations;
use crate::state::{init_state, ConvergenceRule, Hyperparams, ModelState};

/// One row of the lower-bound trace. Iteration 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub elbo: f64,
    pub active_s: usize,
    /// Generative dimensions were removed during this sweep.
    pub pruned: bool,
    /// Masked working values changed during this sweep.
    pub refreshed: bool,
}

impl TraceEntry {
    pub fn event(&self) -> &'static str {
        match (self.iteration, self.pruned, self.refreshed) {
            (0, _, _) => "init",
            (_, true, true) => "prune;impute",
            (_, true, false) => "prune",
            (_, false, true) => "impute",
            _ => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ElboTrace {
    pub entries: Vec<TraceEntry>,
}

impl ElboTrace {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.elbo).collect()
    }

    pub fn last(&self) -> Option<f64> {
        self.entries.last().map(|e| e.elbo)
    }

    /// Iterations `k` where `L[k] < L[k-1] − slack·|L[k-1]|`, skipping sweeps
    /// that pruned dimensions or moved masked working values.
    pub fn monotonicity_violations(&self, rel_slack: f64) -> Vec<usize> {
        self.entries
            .windows(2)
            .filter(|w| !w[1].pruned && !w[1].refreshed)
            .filter(|w| w[1].elbo < w[0].elbo - rel_slack * w[0].elbo.abs())
            .map(|w| w[1].iteration)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,elbo,active_s,event\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{}", e.iteration, e.elbo, e.active_s, e.event());
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub removed: Vec<usize>,
    pub active_s: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_elbo: f64,
    pub initial_s: usize,
    pub final_s: usize,
    pub k: usize,
    pub prune_events: Vec<PruneEvent>,
    pub wall_time_secs: f64,
}

/// Result of [`fit`]: the posterior plus the working data it was fitted to.
#[derive(Debug, Clone)]
pub struct Fit {
    pub state: ModelState,
    pub trace: ElboTrace,
    pub report: FitReport,
    pub observations: Observations,
}

/// What happened during one sweep besides the factor updates.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub removed: Vec<usize>,
    pub imputation_change: f64,
}

fn tag(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numerical { term, message } => Error::Numerical {
            term,
            message: format!("{message} (sweep {iteration})"),
        },
        other => other,
    }
}

/// One full coordinate-ascent sweep in the fixed order
/// Y/ξ → Z → W → τ → G → V → V^Y/U → η, ψ → ARD → prune → imputation refresh.
pub fn sweep(state: &mut ModelState, obs: &mut Observations, hp: &Hyperparams, iteration: usize) -> Result<SweepOutcome> {
    let t = tag(iteration);
    update_y_xi(state, obs).map_err(&t)?;
    update_z(state, obs).map_err(&t)?;
    update_w(state, obs).map_err(&t)?;
    update_tau(state, obs).map_err(&t)?;
    update_g(state, obs).map_err(&t)?;
    update_v(state, obs).map_err(&t)?;
    update_u_vy(state).map_err(&t)?;
    update_eta(state).map_err(&t)?;
    update_psi(state, obs).map_err(&t)?;
    update_ard(state).map_err(&t)?;
    debug_assert!(state.covariances_spd(), "non-SPD covariance after sweep {iteration}");

    let mut outcome = SweepOutcome::default();
    if hp.prune_every > 0 && iteration % hp.prune_every == 0 {
        outcome.removed = prune_latents(state, hp.prune_rel_threshold);
        if !outcome.removed.is_empty() {
            debug!("sweep {iteration}: pruned {:?}, {} dimensions left", outcome.removed, state.s());
        }
    }
    if hp.refresh_imputations && obs.has_missing() {
        outcome.imputation_change = refresh_training_imputations(state, obs).map_err(&t)?;
    }
    Ok(outcome)
}

/// Runs sweeps from `state` until the windowed convergence test passes or
/// `max_iters` is reached.
pub fn run(mut state: ModelState, mut obs: Observations, hp: &Hyperparams) -> Result<Fit> {
    hp.validate()?;
    let start = Instant::now();
    let initial_s = state.s();
    let mut trace = ElboTrace::default();
    trace.entries.push(TraceEntry {
        iteration: 0,
        elbo: compute_elbo(&state, &obs).map_err(tag(0))?,
        active_s: state.s(),
        pruned: false,
        refreshed: false,
    });
    let mut prune_events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=hp.max_iters {
        let outcome = sweep(&mut state, &mut obs, hp, k)?;
        let elbo = compute_elbo(&state, &obs).map_err(tag(k))?;
        if !outcome.removed.is_empty() {
            prune_events.push(PruneEvent {
                iteration: k,
                removed: outcome.removed.clone(),
                active_s: state.s(),
            });
        }
        trace.entries.push(TraceEntry {
            iteration: k,
            elbo,
            active_s: state.s(),
            pruned: !outcome.removed.is_empty(),
            refreshed: outcome.imputation_change > 0.0,
        });
        iterations = k;
        if k >= hp.convergence_window {
            let delta = (trace.entries[k - hp.convergence_window].elbo - elbo).abs();
            let tol = match hp.convergence_rule {
                ConvergenceRule::Absolute => hp.convergence_eps,
                ConvergenceRule::Relative => hp.convergence_eps * elbo.abs(),
            };
            if delta < tol {
                converged = true;
                break;
            }
        }
    }
    info!(
        "fit finished after {iterations} sweeps (converged: {converged}), L(q) = {:.6}, S = {}",
        trace.last().unwrap_or(f64::NAN),
        state.s()
    );
    let report = FitReport {
        iterations,
        converged,
        final_elbo: trace.last().unwrap_or(f64::NAN),
        initial_s,
        final_s: state.s(),
        k: state.k(),
        prune_events,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(Fit {
        state,
        trace,
        report,
        observations: obs,
    })
}

/// Initializes from `hp` and trains on `ds`.
pub fn fit(ds: &MultiViewDataset, hp: &Hyperparams) -> Result<Fit> {
    let state = init_state(ds, hp)?;
    run(state, Observations::new(ds), hp)
}
