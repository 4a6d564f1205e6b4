//! Disclosure game along simulated paths: grid-snapped private arrivals are compared
//! with the current observation cutoffs, disclosures re-anchor every agent, and the
//! mandatory event at t = 1 closes each track at the terminal valuation.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::censor_multi::MultiCensor;
use crate::error::{Error, Result};
use crate::params::ModelSpec;
use crate::paths::{PathBundle, TimeGrid};
use crate::regression::terminal_valuation;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisclosureEvent {
    pub t: f64,
    /// Grid index of the event.
    pub index: usize,
    /// Disclosing agents, ascending.
    pub agents: Vec<usize>,
    /// Disclosed observations, aligned with `agents`.
    pub values: Vec<f64>,
    /// Mandatory disclosure at t = 1.
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ValuationTrack {
    pub path: u64,
    pub grid: Arc<TimeGrid>,
    /// `gamma_tilde[i][k]`: predictable valuation at t_k (left limit at events).
    pub gamma_tilde: Vec<Vec<f64>>,
    /// `s_price[i][k]`: right-continuous price; equals `gamma_tilde` off events.
    pub s_price: Vec<Vec<f64>>,
    /// `cutoffs[j][k]`: observation cutoff in force at t_k.
    pub cutoffs: Vec<Vec<f64>>,
    pub events: Vec<DisclosureEvent>,
}

impl ValuationTrack {
    pub fn agents(&self) -> usize {
        self.s_price.len()
    }

    /// Voluntary (non-terminal) events.
    pub fn voluntary(&self) -> impl Iterator<Item = &DisclosureEvent> {
        self.events.iter().filter(|e| !e.terminal)
    }

    /// True when no voluntary event happened at grid indices 1..=k.
    pub fn silent_through(&self, k: usize) -> bool {
        self.voluntary().all(|e| e.index > k)
    }
}

/// Grid indices in [1, K−1] at which each agent has a snapped arrival, merged as (index, agent).
fn snapped_arrivals(path: &PathBundle) -> Vec<(usize, usize)> {
    let grid = &path.grid;
    let last = grid.last_index();
    let mut out: Vec<(usize, usize)> = path
        .arrivals
        .iter()
        .enumerate()
        .flat_map(|(j, times)| {
            times
                .iter()
                .map(move |&t| (grid.index_at_or_after(t).max(1), j))
        })
        .filter(|&(k, _)| k < last)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Game engine: a precomputed multi-agent censor applied to paths on its grid.
#[derive(Debug, Clone)]
pub struct Market {
    pub censor: MultiCensor,
}

impl Market {
    pub fn new(censor: MultiCensor) -> Self {
        Market { censor }
    }

    fn check_path(&self, path: &PathBundle) -> Result<()> {
        if path.agents() != self.censor.m() {
            return Err(Error::GridMismatch(format!(
                "path has {} agents, censor has {}",
                path.agents(),
                self.censor.m()
            )));
        }
        if !Arc::ptr_eq(&path.grid, &self.censor.grid) && *path.grid != *self.censor.grid {
            return Err(Error::GridMismatch("path and censor grids differ".into()));
        }
        Ok(())
    }

    /// Event loop along one path.
    pub fn run_path(&self, path: &PathBundle) -> Result<ValuationTrack> {
        self.check_path(path)?;
        let c = &self.censor;
        let m = c.m();
        let grid = &c.grid;
        let n = grid.len();
        let last = grid.last_index();
        let mut gamma_tilde = vec![vec![0.0; n]; m];
        let mut s_price = vec![vec![0.0; n]; m];
        let mut cutoffs = vec![vec![0.0; n]; m];
        let mut events = Vec::new();

        let mut anchor = 0usize;
        let mut obs = path.y_at(0);
        for i in 0..m {
            let v = c.valuation(i, 0, &obs, 0);
            gamma_tilde[i][0] = v;
            s_price[i][0] = v;
            cutoffs[i][0] = obs[i];
        }
        let arrivals = snapped_arrivals(path);
        let mut next = 0usize;
        for k in 1..n {
            let cut = c.cutoffs(anchor, &obs, k);
            for i in 0..m {
                gamma_tilde[i][k] = c.valuation(i, anchor, &obs, k);
                cutoffs[i][k] = cut[i];
            }
            if k == last {
                let y1 = path.y_at(k);
                for i in 0..m {
                    s_price[i][k] = terminal_valuation(&c.derived, i, &y1)?;
                }
                events.push(DisclosureEvent {
                    t: grid.points()[k],
                    index: k,
                    agents: (0..m).collect(),
                    values: y1,
                    terminal: true,
                });
                break;
            }
            let mut agents = Vec::new();
            while next < arrivals.len() && arrivals[next].0 == k {
                let j = arrivals[next].1;
                if path.y[j][k] >= cut[j] {
                    agents.push(j);
                }
                next += 1;
            }
            if agents.is_empty() {
                for i in 0..m {
                    s_price[i][k] = gamma_tilde[i][k];
                }
                continue;
            }
            let mut fresh = cut;
            let values: Vec<f64> = agents.iter().map(|&j| path.y[j][k]).collect();
            for (&j, &v) in agents.iter().zip(&values) {
                fresh[j] = v;
            }
            anchor = k;
            obs = fresh;
            for i in 0..m {
                s_price[i][k] = c.reinit(i, k, &obs);
            }
            events.push(DisclosureEvent {
                t: grid.points()[k],
                index: k,
                agents,
                values,
                terminal: false,
            });
        }
        Ok(ValuationTrack {
            path: path.index,
            grid: Arc::clone(grid),
            gamma_tilde,
            s_price,
            cutoffs,
            events,
        })
    }

    pub fn run_paths(&self, paths: &[PathBundle]) -> Result<Vec<ValuationTrack>> {
        paths.par_iter().map(|p| self.run_path(p)).collect()
    }
}

/// Runs the game on every path with a censor built from `spec` on the paths' common grid.
pub fn run_disclosure_game(
    spec: &ModelSpec,
    paths: &[PathBundle],
    conv: crate::regression::VarianceConvention,
    form: crate::censor_multi::HypIntensityForm,
) -> Result<Vec<ValuationTrack>> {
    let Some(first) = paths.first() else {
        return Ok(Vec::new());
    };
    let market = Market::new(MultiCensor::new(spec, Arc::clone(&first.grid), conv, form)?);
    market.run_paths(paths)
}

/// Observation cutoffs at grid index k rebuilt from the initial observations and the
/// events strictly before k; the predictability reference for `run_path`.
pub fn cutoffs_from_log(
    censor: &MultiCensor,
    y0: &[f64],
    events: &[DisclosureEvent],
    k: usize,
) -> Vec<f64> {
    let mut anchor = 0usize;
    let mut obs = y0.to_vec();
    for e in events.iter().filter(|e| !e.terminal && e.index < k) {
        let mut fresh = censor.cutoffs(anchor, &obs, e.index);
        for (&j, &v) in e.agents.iter().zip(&e.values) {
            fresh[j] = v;
        }
        anchor = e.index;
        obs = fresh;
    }
    censor.cutoffs(anchor, &obs, k)
}

/// Public history required at t for a track to enter the martingale average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HistoryFilter {
    /// No voluntary disclosure on (0, t].
    SilenceSinceStart,
    /// Exactly one voluntary event on (0, t], at t, by `agent`, with
    /// |log(value) − log_center| ≤ half_width.
    DisclosureAt {
        agent: usize,
        log_center: f64,
        half_width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub agent: usize,
    pub t: f64,
    pub s: f64,
    pub filter: HistoryFilter,
    pub paths: u64,
    pub mean_s_t: f64,
    pub mean_s_s: f64,
    pub mean_diff: f64,
    pub standard_error: f64,
    pub z: f64,
    pub pass: bool,
}

/// Minimum number of qualifying paths for a martingale report.
pub const MARTINGALE_MIN_PATHS: u64 = 100;

/// Streaming accumulator of S_s − S_t over tracks with a fixed public history at t.
#[derive(Debug, Clone)]
pub struct MartingaleAccumulator {
    pub agent: usize,
    pub kt: usize,
    pub ks: usize,
    pub t: f64,
    pub s: f64,
    pub filter: HistoryFilter,
    n: u64,
    sum_t: f64,
    sum_s: f64,
    sum_d: f64,
    sum_d2: f64,
}

impl MartingaleAccumulator {
    /// t and s must lie on `grid` with t < s.
    pub fn new(
        grid: &TimeGrid,
        agent: usize,
        t: f64,
        s: f64,
        filter: HistoryFilter,
    ) -> Result<Self> {
        if !(t < s) {
            return Err(Error::InvertedInterval { start: t, end: s });
        }
        let kt = grid
            .index_of(t)
            .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a grid point")))?;
        let ks = grid
            .index_of(s)
            .ok_or_else(|| Error::GridMismatch(format!("s = {s} is not a grid point")))?;
        Ok(MartingaleAccumulator {
            agent,
            kt,
            ks,
            t,
            s,
            filter,
            n: 0,
            sum_t: 0.0,
            sum_s: 0.0,
            sum_d: 0.0,
            sum_d2: 0.0,
        })
    }

    fn qualifies(&self, track: &ValuationTrack) -> bool {
        match self.filter {
            HistoryFilter::SilenceSinceStart => track.silent_through(self.kt),
            HistoryFilter::DisclosureAt {
                agent,
                log_center,
                half_width,
            } => {
                let mut before = track.voluntary().take_while(|e| e.index <= self.kt);
                match (before.next(), before.next()) {
                    (Some(e), None) if e.index == self.kt => e
                        .agents
                        .iter()
                        .zip(&e.values)
                        .any(|(&j, &v)| j == agent && (v.ln() - log_center).abs() <= half_width),
                    _ => false,
                }
            }
        }
    }

    pub fn push(&mut self, track: &ValuationTrack) {
        if !self.qualifies(track) {
            return;
        }
        let st = track.s_price[self.agent][self.kt];
        let ss = track.s_price[self.agent][self.ks];
        let d = ss - st;
        self.n += 1;
        self.sum_t += st;
        self.sum_s += ss;
        self.sum_d += d;
        self.sum_d2 += d * d;
    }

    pub fn merge(&mut self, other: &MartingaleAccumulator) {
        self.n += other.n;
        self.sum_t += other.sum_t;
        self.sum_s += other.sum_s;
        self.sum_d += other.sum_d;
        self.sum_d2 += other.sum_d2;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn report(&self) -> Result<MartingaleReport> {
        if self.n < MARTINGALE_MIN_PATHS {
            return Err(Error::InsufficientSample {
                found: self.n as usize,
                needed: MARTINGALE_MIN_PATHS as usize,
            });
        }
        let n = self.n as f64;
        let mean = self.sum_d / n;
        let var = ((self.sum_d2 - n * mean * mean) / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 {
            mean / se
        } else if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Ok(MartingaleReport {
            agent: self.agent,
            t: self.t,
            s: self.s,
            filter: self.filter,
            paths: self.n,
            mean_s_t: self.sum_t / n,
            mean_s_s: self.sum_s / n,
            mean_diff: mean,
            standard_error: se,
            z,
            pass: z.abs() < 3.0,
        })
    }
}

/// Martingale report for agent 0 over the silence-since-start history.
pub fn martingale_report(tracks: &[ValuationTrack], t: f64, s: f64) -> Result<MartingaleReport> {
    let grid = tracks
        .first()
        .map(|tr| Arc::clone(&tr.grid))
        .ok_or(Error::InsufficientSample {
            found: 0,
            needed: MARTINGALE_MIN_PATHS as usize,
        })?;
    let mut acc = MartingaleAccumulator::new(&grid, 0, t, s, HistoryFilter::SilenceSinceStart)?;
    for tr in tracks {
        acc.push(tr);
    }
    acc.report()
}
