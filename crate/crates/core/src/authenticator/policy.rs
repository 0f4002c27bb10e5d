use serde::{Deserialize, Serialize};

use super::ensemble::Ensemble;
use crate::dataio::{Batch, Dataset, DriverId};
use crate::Result;

/// "Vehicle not moving": the speed feature sits at or below its normalized
/// zero level in every row of the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdleRule {
    pub speed_feature: usize,
    pub zero_level: f64,
}

impl IdleRule {
    /// Uses the dataset's `Vehicle speed` column, if present.
    pub fn for_dataset(ds: &Dataset) -> Option<Self> {
        let f = ds.feature_index("Vehicle speed")?;
        let zero_level = ds.norm_stats.as_ref().map_or(0.0, |s| s.apply(f, 0.0));
        Some(IdleRule {
            speed_feature: f,
            zero_level,
        })
    }

    pub fn is_idle(&self, b: &Batch) -> bool {
        b.windows
            .iter()
            .all(|w| (0..w.size).all(|t| w.row(t)[self.speed_feature] <= self.zero_level))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    /// Consecutive rejected batches that raise an alarm.
    pub alarm_threshold: usize,
    pub idle_rule: Option<IdleRule>,
}

impl DecisionPolicy {
    pub fn new(alarm_threshold: usize, idle_rule: Option<IdleRule>) -> Self {
        assert!(alarm_threshold >= 1, "alarm threshold must be at least 1");
        DecisionPolicy {
            alarm_threshold,
            idle_rule,
        }
    }
}

/// What the authenticator made of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOutcome {
    Idle,
    Authorized,
    NotAuthorized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamEvent {
    Accepted,
    Rejected,
    Ignored,
    Alarm,
}

/// Consecutive-rejection counter. Idle batches neither advance nor reset it;
/// an accepted batch resets it. The alarm fires once when a run of
/// rejections reaches the threshold.
#[derive(Clone, Debug)]
pub struct DecisionState {
    threshold: usize,
    rejected_run: usize,
}

impl DecisionState {
    pub fn new(threshold: usize) -> Self {
        assert!(threshold >= 1, "alarm threshold must be at least 1");
        DecisionState {
            threshold,
            rejected_run: 0,
        }
    }

    pub fn observe(&mut self, outcome: BatchOutcome, events: &mut Vec<StreamEvent>) {
        match outcome {
            BatchOutcome::Idle => events.push(StreamEvent::Ignored),
            BatchOutcome::Authorized => {
                self.rejected_run = 0;
                events.push(StreamEvent::Accepted);
            }
            BatchOutcome::NotAuthorized => {
                self.rejected_run += 1;
                events.push(StreamEvent::Rejected);
                if self.rejected_run == self.threshold {
                    events.push(StreamEvent::Alarm);
                }
            }
        }
    }
}

/// Runs the policy over pre-classified outcomes.
pub fn decide_stream(policy: &DecisionPolicy, outcomes: &[BatchOutcome]) -> Vec<StreamEvent> {
    let mut state = DecisionState::new(policy.alarm_threshold);
    let mut events = Vec::with_capacity(outcomes.len() + 1);
    for &o in outcomes {
        state.observe(o, &mut events);
    }
    events
}

/// Classifies each batch with the ensemble (skipping idle ones) and runs
/// the decision policy for the `authorized` driver.
pub fn authenticate_stream(
    e: &Ensemble,
    policy: &DecisionPolicy,
    batches: &[Batch],
    authorized: DriverId,
) -> Result<Vec<StreamEvent>> {
    let outcomes = batches
        .iter()
        .map(|b| {
            if policy.idle_rule.is_some_and(|r| r.is_idle(b)) {
                return Ok(BatchOutcome::Idle);
            }
            Ok(if e.predict_batch(b)?.label == authorized {
                BatchOutcome::Authorized
            } else {
                BatchOutcome::NotAuthorized
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(decide_stream(policy, &outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use BatchOutcome::*;
    use StreamEvent::*;

    #[test]
    fn two_rejections_raise_the_alarm() {
        let p = DecisionPolicy::new(2, None);
        assert_eq!(
            decide_stream(&p, &[NotAuthorized, NotAuthorized]),
            vec![Rejected, Rejected, Alarm]
        );
        assert_eq!(
            decide_stream(&p, &[Authorized; 3]),
            vec![Accepted, Accepted, Accepted]
        );
    }

    #[test]
    fn idle_batches_never_alarm() {
        let p = DecisionPolicy::new(2, None);
        assert_eq!(decide_stream(&p, &[Idle; 5]), vec![Ignored; 5]);
        assert_eq!(
            decide_stream(&p, &[NotAuthorized, Idle, NotAuthorized]),
            vec![Rejected, Ignored, Rejected, Alarm]
        );
    }
}
