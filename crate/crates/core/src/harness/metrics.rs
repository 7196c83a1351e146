use serde::{Deserialize, Serialize};

use super::episode::{EpisodeResult, Outcome};

/// One aggregated row. Percentages are stored in hundredths of a percent so
/// the partition and the failure sum hold exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub variant: String,
    pub episodes: usize,
    pub success: u32,
    pub timeout: u32,
    pub collision: u32,
    pub tracking_failure: u32,
    pub mean_time_to_grasp_s: Option<f64>,
}

impl MetricsRow {
    pub fn total_failure(&self) -> u32 {
        self.timeout + self.collision + self.tracking_failure
    }

    pub fn pct(hundredths: u32) -> f64 {
        hundredths as f64 / 100.0
    }

    pub fn success_pct(&self) -> f64 {
        Self::pct(self.success)
    }

    pub fn tracking_failure_pct(&self) -> f64 {
        Self::pct(self.tracking_failure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutcomeCounts {
    pub success: usize,
    pub timeout: usize,
    pub collision: usize,
    pub tracking_failure: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Success => self.success += 1,
            Outcome::Timeout => self.timeout += 1,
            Outcome::Collision => self.collision += 1,
            Outcome::TrackingFailure => self.tracking_failure += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.success + self.timeout + self.collision + self.tracking_failure
    }
}

/// Largest-remainder rounding of the four counts to hundredths of a percent
/// summing to exactly 10000. Ties in the remainder go to the earlier field.
pub fn percent_hundredths(counts: &OutcomeCounts) -> [u32; 4] {
    let n = counts.total() as u64;
    let raw = [counts.success, counts.timeout, counts.collision, counts.tracking_failure];
    if n == 0 {
        return [0; 4];
    }
    let mut floors = [0u32; 4];
    let mut rems = [0u64; 4];
    for i in 0..4 {
        let scaled = raw[i] as u64 * 10_000;
        floors[i] = (scaled / n) as u32;
        rems[i] = scaled % n;
    }
    let short = 10_000 - floors.iter().sum::<u32>();
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().take(short as usize) {
        floors[i] += 1;
    }
    floors
}

pub fn aggregate(scenario: &str, variant: &str, results: &[EpisodeResult]) -> MetricsRow {
    aggregate_outcomes(
        scenario,
        variant,
        results.iter().map(|r| (r.outcome, r.time_to_grasp)),
    )
}

/// Aggregates `(outcome, time_to_grasp)` pairs.
pub fn aggregate_outcomes(
    scenario: &str,
    variant: &str,
    items: impl IntoIterator<Item = (Outcome, Option<f64>)>,
) -> MetricsRow {
    let mut counts = OutcomeCounts::default();
    let mut times = Vec::new();
    for (o, t) in items {
        counts.add(o);
        if o == Outcome::Success {
            if let Some(t) = t {
                times.push(t);
            }
        }
    }
    let [success, timeout, collision, tracking_failure] = percent_hundredths(&counts);
    let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
    MetricsRow {
        scenario: scenario.to_string(),
        variant: variant.to_string(),
        episodes: counts.total(),
        success,
        timeout,
        collision,
        tracking_failure,
        mean_time_to_grasp_s: mean,
    }
}

/// Outcome as seen at an earlier cutoff: anything not finished by then is a timeout.
pub fn outcome_at_cutoff(r: &EpisodeResult, cutoff: f64) -> (Outcome, Option<f64>) {
    if r.end_time <= cutoff + 1e-9 {
        (r.outcome, r.time_to_grasp)
    } else {
        (Outcome::Timeout, None)
    }
}
