//! Projected gradient ascent (PGAM) with Armijo backtracking, multi-start,
//! MS rounding and a block-wise alternating baseline.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gradients::{gradients_from_terms, GradientBundle};
use super::trace::{IterationRecord, OptimizationTrace, RestartTrace, Status};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::{incident_power_from_terms, spectral_terms, SpectralTerms};
use crate::parallel::Execution;
use crate::scenario::ScenarioStatistics;
use crate::spectral::{realization_rng, se_from_terms, SEResult};
use crate::surface::{
    enforce_total_power, ms_round, project_alpha, project_beta, project_theta, random_phases, Protocol, SurfaceState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaInit {
    /// `alpha = 1`.
    Passive,
    /// Uniform in `[1, c2]` at the starting point.
    RandomInBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgamConfig {
    pub mu_init: f64,
    pub kappa: f64,
    pub mu_min: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Use `gap / |SE|` instead of the absolute gap.
    pub relative_gap: bool,
    pub n_restarts: usize,
    pub rng_seed: u64,
    pub alpha_init: AlphaInit,
}

impl Default for PgamConfig {
    fn default() -> Self {
        Self {
            mu_init: 1e3,
            kappa: 0.5,
            mu_min: 1e-12,
            max_iters: 200,
            tol: 1e-5,
            relative_gap: false,
            n_restarts: 5,
            rng_seed: 0,
            alpha_init: AlphaInit::Passive,
        }
    }
}

impl PgamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_init > 0.0) {
            return Err(Error::InvalidConfig("mu_init must be positive".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidConfig("kappa must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) || self.n_restarts == 0 {
            return Err(Error::InvalidConfig("max_iters, tol and n_restarts must be positive".into()));
        }
        Ok(())
    }
}

/// Which variable blocks a step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocks {
    pub theta: bool,
    pub beta: bool,
    pub alpha: bool,
}

impl Blocks {
    pub const ALL: Blocks = Blocks {
        theta: true,
        beta: true,
        alpha: true,
    };
    pub const THETA: Blocks = Blocks {
        theta: true,
        beta: false,
        alpha: false,
    };
    pub const BETA: Blocks = Blocks {
        theta: false,
        beta: true,
        alpha: false,
    };
    pub const ALPHA: Blocks = Blocks {
        theta: false,
        beta: false,
        alpha: true,
    };

    fn label(&self) -> &'static str {
        match (self.theta, self.beta, self.alpha) {
            (true, false, false) => "theta",
            (false, true, false) => "beta",
            (false, false, true) => "alpha",
            (true, true, true) => "all",
            _ => "mixed",
        }
    }
}

/// Amplifier bounds frozen at the current iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBounds {
    pub c2: Vec<f64>,
    pub incident: Vec<f64>,
}

fn frozen_bounds(scenario: &ScenarioStatistics, terms: &SpectralTerms, config: &ScenarioConfig) -> FrozenBounds {
    let incident = incident_power_from_terms(scenario, terms, config);
    let sys = &config.system;
    let c2 = incident.iter().map(|r| sys.p_element / (r + sys.sigma_v2)).collect();
    FrozenBounds { c2, incident }
}

/// Simultaneous projected update of the selected blocks from the same base state.
pub fn pgam_step(
    state: &SurfaceState,
    grads: &GradientBundle,
    mu: f64,
    bounds: &FrozenBounds,
    config: &ScenarioConfig,
    blocks: Blocks,
) -> Result<SurfaceState> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {mu}")));
    }
    let mut next = state.clone();
    let n = state.n();
    if blocks.theta {
        let step = |t: &[Complex64], g: &[Complex64]| -> Vec<Complex64> {
            project_theta(&t.iter().zip(g).map(|(t, g)| t + g * mu).collect::<Vec<_>>())
        };
        next.theta_t = step(&state.theta_t, &grads.g_theta_t);
        next.theta_r = step(&state.theta_r, &grads.g_theta_r);
    }
    if blocks.beta {
        let raw: Vec<f64> = state
            .beta_t
            .iter()
            .zip(&grads.g_beta_t)
            .chain(state.beta_r.iter().zip(&grads.g_beta_r))
            .map(|(b, g)| b + mu * g)
            .collect();
        let p = project_beta(&raw);
        next.beta_t = p[..n].to_vec();
        next.beta_r = p[n..].to_vec();
    }
    if blocks.alpha {
        let raw: Vec<f64> = state.alpha.iter().zip(&grads.g_alpha).map(|(a, g)| a + mu * g).collect();
        let boxed = project_alpha(&raw, &bounds.c2)?;
        let sys = &config.system;
        next.alpha = enforce_total_power(&boxed, &bounds.incident, sys.sigma_v2, sys.p_surface_total);
    }
    Ok(next)
}

/// `Q_mu(x; x') = SE(x) + <grad, x' - x> - ||x' - x||^2 / (2 mu)` over the real
/// coordinates of the selected blocks.
pub fn surrogate_q(
    objective: f64,
    state: &SurfaceState,
    candidate: &SurfaceState,
    grads: &GradientBundle,
    mu: f64,
    blocks: Blocks,
) -> f64 {
    let mut inner = 0.0;
    let mut dist2 = 0.0;
    if blocks.theta {
        for (t, (c, g)) in [
            (&state.theta_t, (&candidate.theta_t, &grads.g_theta_t)),
            (&state.theta_r, (&candidate.theta_r, &grads.g_theta_r)),
        ] {
            for i in 0..t.len() {
                let d = c[i] - t[i];
                inner += (g[i].conj() * d).re;
                dist2 += d.norm_sqr();
            }
        }
    }
    if blocks.beta {
        for (b, (c, g)) in [
            (&state.beta_t, (&candidate.beta_t, &grads.g_beta_t)),
            (&state.beta_r, (&candidate.beta_r, &grads.g_beta_r)),
        ] {
            for i in 0..b.len() {
                let d = c[i] - b[i];
                inner += g[i] * d;
                dist2 += d * d;
            }
        }
    }
    if blocks.alpha {
        for i in 0..state.n() {
            let d = candidate.alpha[i] - state.alpha[i];
            inner += grads.g_alpha[i] * d;
            dist2 += d * d;
        }
    }
    objective + inner - dist2 / (2.0 * mu)
}

struct Point {
    state: SurfaceState,
    terms: SpectralTerms,
    se: SEResult,
}

fn evaluate(scenario: &ScenarioStatistics, state: SurfaceState, config: &ScenarioConfig) -> Result<Point> {
    let terms = spectral_terms(scenario, &state, config)?;
    let se = se_from_terms(scenario, &terms, config);
    Ok(Point { state, terms, se })
}

/// One Armijo-accepted update of `blocks`. Returns the accepted point and the
/// number of backtracks, or `None` when the step fell below `mu_min`.
fn line_search(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    current: &Point,
    mu: &mut f64,
    blocks: Blocks,
) -> Result<Option<(Point, usize)>> {
    let grads = gradients_from_terms(scenario, &current.state, &current.terms, config)?;
    let bounds = frozen_bounds(scenario, &current.terms, config);
    if blocks.alpha {
        if let Some((i, b)) = bounds.c2.iter().enumerate().find(|(_, b)| !(**b >= 1.0)) {
            return Err(Error::Infeasible { element: i, bound: *b });
        }
    }
    let f = current.se.sum_se;
    let mut backtracks = 0;
    while *mu >= pgam.mu_min {
        let cand_state = pgam_step(&current.state, &grads, *mu, &bounds, config, blocks)?;
        let q = surrogate_q(f, &current.state, &cand_state, &grads, *mu, blocks);
        let cand = evaluate(scenario, cand_state, config)?;
        let g = cand.se.sum_se;
        // The ascent requirement on top of the surrogate test keeps the
        // accepted sequence monotone on the non-convex unit-circle sets.
        if g.is_finite() && g >= q && g >= f {
            return Ok(Some((cand, backtracks)));
        }
        *mu *= pgam.kappa;
        backtracks += 1;
    }
    Ok(None)
}

fn converged(pgam: &PgamConfig, old: f64, new: f64) -> bool {
    let gap = new - old;
    if pgam.relative_gap {
        gap <= pgam.tol * new.abs().max(f64::MIN_POSITIVE)
    } else {
        gap < pgam.tol
    }
}

/// Runs PGAM from `initial`, updating only `blocks`.
pub fn pgam_run_blocks(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    initial: SurfaceState,
    blocks: Blocks,
) -> Result<(SurfaceState, RestartTrace)> {
    pgam.validate()?;
    initial.validate(Protocol::ES)?;
    let mut current = evaluate(scenario, initial, config)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: current.se.sum_se,
        step: 0.0,
        backtracks: 0,
        block: blocks.label().into(),
    }];
    let mut mu = pgam.mu_init;
    let mut status = Status::MaxIterations;
    for it in 1..=pgam.max_iters {
        let Some((next, backtracks)) = line_search(scenario, config, pgam, &current, &mut mu, blocks)? else {
            status = Status::Stalled;
            break;
        };
        let done = converged(pgam, current.se.sum_se, next.se.sum_se);
        records.push(IterationRecord {
            iteration: it,
            objective: next.se.sum_se,
            step: mu,
            backtracks,
            block: blocks.label().into(),
        });
        current = next;
        if done {
            status = Status::Converged;
            break;
        }
    }
    let trace = RestartTrace {
        restart: 0,
        status,
        records,
        final_state: current.state.clone(),
    };
    Ok((current.state, trace))
}

/// Algorithm-1 run over all blocks.
pub fn pgam_run(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    initial: SurfaceState,
) -> Result<(SurfaceState, RestartTrace)> {
    pgam_run_blocks(scenario, config, pgam, initial, Blocks::ALL)
}

/// Starting point of restart `r`: `beta = sqrt(0.5)`, phases uniform, `alpha`
/// per [`PgamConfig::alpha_init`].
pub fn initial_state(scenario: &ScenarioStatistics, config: &ScenarioConfig, pgam: &PgamConfig, r: usize) -> Result<SurfaceState> {
    let mut rng = realization_rng(pgam.rng_seed, r as u64);
    let mut state = SurfaceState::random_start(scenario.n(), &mut rng);
    if pgam.alpha_init == AlphaInit::RandomInBox {
        state.alpha = random_alpha(scenario, config, &state, &mut rng)?;
    }
    Ok(state)
}

/// `alpha_n ~ U[1, c2_n]` with `c2` evaluated at `state`, then the total-power rescale.
pub fn random_alpha<R: Rng + ?Sized>(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    state: &SurfaceState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let terms = spectral_terms(scenario, state, config)?;
    let bounds = frozen_bounds(scenario, &terms, config);
    let raw: Vec<f64> = bounds
        .c2
        .iter()
        .enumerate()
        .map(|(i, &hi)| {
            if !(hi >= 1.0) {
                Err(Error::Infeasible { element: i, bound: hi })
            } else {
                Ok(1.0 + (hi - 1.0) * rng.random::<f64>())
            }
        })
        .collect::<Result<_>>()?;
    let sys = &config.system;
    Ok(enforce_total_power(&raw, &bounds.incident, sys.sigma_v2, sys.p_surface_total))
}

fn pick_best(traces: Vec<RestartTrace>) -> (SurfaceState, OptimizationTrace) {
    let mut best = 0;
    for (i, t) in traces.iter().enumerate() {
        if t.final_objective() > traces[best].final_objective() {
            best = i;
        }
    }
    let state = traces[best].final_state.clone();
    (state, OptimizationTrace { restarts: traces, best })
}

/// Runs `n_restarts` independent PGAM runs and keeps the best final objective.
pub fn multi_start(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    execution: Execution,
) -> Result<(SurfaceState, OptimizationTrace)> {
    multi_start_from(scenario, config, pgam, execution, Blocks::ALL, |r| initial_state(scenario, config, pgam, r))
}

/// Multi-start over `blocks` from the starting points produced by `init`.
pub fn multi_start_from<F>(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    execution: Execution,
    blocks: Blocks,
    init: F,
) -> Result<(SurfaceState, OptimizationTrace)>
where
    F: Fn(usize) -> Result<SurfaceState> + Sync + Send,
{
    pgam.validate()?;
    let runs = execution.map(pgam.n_restarts, |r| -> Result<RestartTrace> {
        let (_, mut trace) = pgam_run_blocks(scenario, config, pgam, init(r)?, blocks)?;
        trace.restart = r;
        Ok(trace)
    });
    let traces = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(pick_best(traces))
}

/// ES optimum, its MS rounding, and both SE values.
#[derive(Debug, Clone, PartialEq)]
pub struct MsOutcome {
    pub es_state: SurfaceState,
    pub es_se: SEResult,
    pub ms_state: SurfaceState,
    pub ms_se: SEResult,
    pub trace: OptimizationTrace,
}

pub fn optimize_ms(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    execution: Execution,
) -> Result<MsOutcome> {
    let (es_state, trace) = multi_start(scenario, config, pgam, execution)?;
    let es_se = evaluate(scenario, es_state.clone(), config)?.se;
    let ms_state = ms_round(&es_state);
    let ms_se = evaluate(scenario, ms_state.clone(), config)?.se;
    Ok(MsOutcome {
        es_state,
        es_se,
        ms_state,
        ms_se,
        trace,
    })
}

/// Block-wise alternating ascent: cycles `theta -> beta -> alpha`, each block
/// updated by one line-searched projected step while the others are frozen.
/// Every block update is one accepted iteration in the trace.
pub fn ao_run(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    initial: SurfaceState,
) -> Result<(SurfaceState, RestartTrace)> {
    pgam.validate()?;
    initial.validate(Protocol::ES)?;
    let mut current = evaluate(scenario, initial, config)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: current.se.sum_se,
        step: 0.0,
        backtracks: 0,
        block: "start".into(),
    }];
    let cycle = [Blocks::THETA, Blocks::BETA, Blocks::ALPHA];
    let mut mu = [pgam.mu_init; 3];
    let mut status = Status::MaxIterations;
    let mut iteration = 0;
    let mut stalled = [false; 3];
    'outer: for _ in 0..pgam.max_iters {
        let start = current.se.sum_se;
        for (b, blocks) in cycle.iter().enumerate() {
            if stalled[b] {
                continue;
            }
            match line_search(scenario, config, pgam, &current, &mut mu[b], *blocks)? {
                Some((next, backtracks)) => {
                    iteration += 1;
                    records.push(IterationRecord {
                        iteration,
                        objective: next.se.sum_se,
                        step: mu[b],
                        backtracks,
                        block: blocks.label().into(),
                    });
                    current = next;
                }
                None => stalled[b] = true,
            }
            if iteration >= pgam.max_iters {
                break 'outer;
            }
        }
        if stalled.iter().all(|s| *s) {
            status = Status::Stalled;
            break;
        }
        if converged(pgam, start, current.se.sum_se) {
            status = Status::Converged;
            break;
        }
    }
    let trace = RestartTrace {
        restart: 0,
        status,
        records,
        final_state: current.state.clone(),
    };
    Ok((current.state, trace))
}

/// AO from the same starting points as [`multi_start`].
pub fn ao_baseline(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    execution: Execution,
) -> Result<(SurfaceState, OptimizationTrace)> {
    pgam.validate()?;
    let runs = execution.map(pgam.n_restarts, |r| -> Result<RestartTrace> {
        let (_, mut trace) = ao_run(scenario, config, pgam, initial_state(scenario, config, pgam, r)?)?;
        trace.restart = r;
        Ok(trace)
    });
    Ok(pick_best(runs.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Random blocks for the randomized baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomBlock {
    Phase,
    Amplitude,
    Amplification,
}

/// Draws the frozen block for a random baseline on top of a standard start
/// and returns the state plus the blocks left free for optimization.
pub fn random_baseline_start(
    scenario: &ScenarioStatistics,
    config: &ScenarioConfig,
    pgam: &PgamConfig,
    which: RandomBlock,
    draw: usize,
) -> Result<(SurfaceState, Blocks)> {
    let mut rng = realization_rng(pgam.rng_seed ^ 0x5eed_0000_0000, draw as u64);
    let n = scenario.n();
    let mut state = SurfaceState::random_start(n, &mut rng);
    let blocks = match which {
        RandomBlock::Phase => {
            state.theta_t = random_phases(n, &mut rng);
            state.theta_r = random_phases(n, &mut rng);
            Blocks {
                theta: false,
                ..Blocks::ALL
            }
        }
        RandomBlock::Amplitude => {
            use rand_distr::{Distribution, StandardNormal};
            let raw: Vec<f64> = (0..2 * n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p = project_beta(&raw);
            state.beta_t = p[..n].iter().map(|x| x.abs()).collect();
            state.beta_r = p[n..].iter().map(|x| x.abs()).collect();
            Blocks {
                beta: false,
                ..Blocks::ALL
            }
        }
        RandomBlock::Amplification => {
            state.alpha = random_alpha(scenario, config, &state, &mut rng)?;
            Blocks {
                alpha: false,
                ..Blocks::ALL
            }
        }
    };
    Ok((state, blocks))
}
