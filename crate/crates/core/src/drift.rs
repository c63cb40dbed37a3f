//! Drift detection on cascade confidences and the re-profiling decision.
//!
//! Shift is measured with the standardized Wasserstein-1 distance: the W₁
//! distance between the empirical distributions of the reference and recent
//! confidences, divided by the population standard deviation of the
//! reference. Re-profiling happens once per period or as soon as the
//! standardized distance exceeds its threshold, whichever comes first.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOUR_MS: u64 = 3_600_000;
pub const DEFAULT_PERIOD_MS: u64 = 24 * HOUR_MS;
pub const DEFAULT_SWD_THRESHOLD: f64 = 1.0;
pub const DEFAULT_WINDOW: usize = 1000;

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact W₁ between two empirical distributions.
///
/// Integrates `|F_X⁻¹(u) − F_Y⁻¹(u)|` over the merged quantile grid
/// `{i/n} ∪ {j/m}`, on which both quantile functions are piecewise constant.
/// Grid positions are tracked as integers over the common denominator `n·m`.
pub fn wasserstein1(x: &[f64], y: &[f64]) -> f64 {
    let (xs, ys) = (sorted(x), sorted(y));
    let (n, m) = (xs.len(), ys.len());
    if n == 0 || m == 0 {
        return 0.0;
    }
    if n == m {
        return xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    }
    let (mut a, mut b) = (0usize, 0usize);
    let mut pos = 0u128;
    let mut total = 0.0;
    while a < n && b < m {
        let next_a = (a as u128 + 1) * m as u128;
        let next_b = (b as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        total += (next - pos) as f64 * (xs[a] - ys[b]).abs();
        pos = next;
        if next_a == next {
            a += 1;
        }
        if next_b == next {
            b += 1;
        }
    }
    total / (n as f64 * m as f64)
}

/// Population standard deviation.
pub fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Standardized Wasserstein-1 distance of `y` from the reference `x`.
pub fn swd(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::SampleTooSmall(format!(
            "reference needs at least 2 values, got {}",
            x.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::SampleTooSmall("recent sample is empty".into()));
    }
    let sigma = population_std(x);
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::DegenerateReference);
    }
    Ok(wasserstein1(x, y) / sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    /// Confidences observed when the current profile was built.
    pub reference_sample: Vec<f64>,
    /// Milliseconds since the epoch.
    pub last_profile_time: u64,
    #[serde(default = "default_period")]
    pub period_ms: u64,
    #[serde(default = "default_threshold")]
    pub swd_threshold: f64,
}

fn default_period() -> u64 {
    DEFAULT_PERIOD_MS
}

fn default_threshold() -> f64 {
    DEFAULT_SWD_THRESHOLD
}

impl DriftState {
    pub fn new(reference_sample: Vec<f64>, last_profile_time: u64) -> Self {
        Self {
            reference_sample,
            last_profile_time,
            period_ms: DEFAULT_PERIOD_MS,
            swd_threshold: DEFAULT_SWD_THRESHOLD,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if state.reference_sample.len() < 2 {
            return Err(Error::SampleTooSmall(
                "checkpoint reference sample has fewer than 2 values".into(),
            ));
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprofileReason {
    Periodic,
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum Decision {
    Reprofile(ReprofileReason),
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub decision: Decision,
    /// Not computed when the periodic trigger already fired.
    pub swd: Option<f64>,
    pub elapsed_ms: u64,
}

/// Periodic trigger first, then the drift trigger (`swd > threshold`).
pub fn should_reprofile(state: &DriftState, now: u64, recent: &[f64]) -> Result<DriftCheck> {
    if recent.is_empty() {
        return Err(Error::SampleTooSmall("no recent confidences".into()));
    }
    let elapsed_ms = now.saturating_sub(state.last_profile_time);
    if elapsed_ms >= state.period_ms {
        return Ok(DriftCheck {
            decision: Decision::Reprofile(ReprofileReason::Periodic),
            swd: None,
            elapsed_ms,
        });
    }
    let distance = swd(&state.reference_sample, recent)?;
    let decision = if distance > state.swd_threshold {
        Decision::Reprofile(ReprofileReason::Drift)
    } else {
        Decision::Hold
    };
    Ok(DriftCheck {
        decision,
        swd: Some(distance),
        elapsed_ms,
    })
}

/// Ring buffer of the most recent confidences.
#[derive(Debug)]
pub struct RecentWindow {
    capacity: usize,
    values: Mutex<VecDeque<f64>>,
}

impl RecentWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            values: Mutex::new(VecDeque::with_capacity(capacity)),
        }
    }

    pub fn push(&self, value: f64) {
        let mut v = self.values.lock();
        if v.len() == self.capacity {
            v.pop_front();
        }
        v.push_back(value);
    }

    pub fn extend(&self, values: impl IntoIterator<Item = f64>) {
        let mut v = self.values.lock();
        for x in values {
            if v.len() == self.capacity {
                v.pop_front();
            }
            v.push_back(x);
        }
    }

    pub fn snapshot(&self) -> Vec<f64> {
        self.values.lock().iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.values.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.lock().is_empty()
    }
}

impl Default for RecentWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

/// Shared drift state plus the recent window, allowing at most one
/// re-profile in flight.
#[derive(Debug)]
pub struct DriftMonitor {
    state: Mutex<DriftState>,
    window: RecentWindow,
    in_flight: AtomicBool,
}

/// Held while a re-profile runs; dropping it without completing releases
/// the slot.
#[derive(Debug)]
pub struct ReprofileTicket<'a> {
    monitor: &'a DriftMonitor,
    pub reason: ReprofileReason,
}

impl ReprofileTicket<'_> {
    /// Installs the new reference sample and profile time.
    pub fn complete(self, reference_sample: Vec<f64>, now: u64) {
        let mut s = self.monitor.state.lock();
        s.reference_sample = reference_sample;
        s.last_profile_time = now;
    }
}

impl Drop for ReprofileTicket<'_> {
    fn drop(&mut self) {
        self.monitor.in_flight.store(false, Ordering::SeqCst);
    }
}

impl DriftMonitor {
    pub fn new(state: DriftState, window: usize) -> Self {
        Self {
            state: Mutex::new(state),
            window: RecentWindow::new(window),
            in_flight: AtomicBool::new(false),
        }
    }

    pub fn record(&self, confidence: f64) {
        self.window.push(confidence);
    }

    pub fn window(&self) -> &RecentWindow {
        &self.window
    }

    pub fn state(&self) -> DriftState {
        self.state.lock().clone()
    }

    /// Evaluates the triggers on a snapshot; on a re-profile decision hands
    /// out the single ticket, or `None` if one is already out.
    pub fn check(&self, now: u64) -> Result<(DriftCheck, Option<ReprofileTicket<'_>>)> {
        let recent = self.window.snapshot();
        let state = self.state.lock().clone();
        let check = should_reprofile(&state, now, &recent)?;
        let ticket = match check.decision {
            Decision::Reprofile(reason)
                if self
                    .in_flight
                    .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                    .is_ok() =>
            {
                Some(ReprofileTicket {
                    monitor: self,
                    reason,
                })
            }
            _ => None,
        };
        Ok((check, ticket))
    }
}
