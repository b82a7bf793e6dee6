use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{HybridError, Result};
use crate::hybrid::system::{HybridState, ModeId};

/// Record of one hybrid event: the step it occurred in, the transition taken,
/// the refined event time, the stored pre-impact and post-reset states, and
/// the saltation matrix computed at the pre-impact state.
#[derive(Debug, Clone)]
pub struct EventRecord {
    pub step_index: usize,
    pub from: ModeId,
    pub to: ModeId,
    pub t_event: f64,
    pub x_minus: DVector<f64>,
    pub x_plus: DVector<f64>,
    pub salt: DMatrix<f64>,
    /// The event fired at the very start of the step (the state already sat
    /// at or beyond the guard with outward flow).
    pub at_step_start: bool,
}

/// Uniformly sampled hybrid trajectory with its event records.
#[derive(Debug, Clone, Default)]
pub struct HybridTrajectory {
    pub samples: Vec<HybridState>,
    pub events: Vec<EventRecord>,
}

impl HybridTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of events recorded strictly before sample index i, i.e. the
    /// hybrid epoch the trajectory is in at sample i. An event during step j
    /// affects samples j+1 and later.
    pub fn epoch_at(&self, i: usize) -> usize {
        self.events.iter().filter(|ev| ev.step_index < i).count()
    }

    /// Serialize samples as CSV with columns `t,mode,x_0..x_{n-1}`.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut out = String::from("t,mode");
        for j in 0..n {
            let _ = write!(out, ",x_{j}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.t, s.mode);
            for j in 0..n {
                let _ = write!(out, ",{}", s.x[j]);
            }
            out.push('\n');
        }
        out
    }

    /// Serialize events as CSV with columns
    /// `step_index,from,to,t_event,x_minus_0..,x_plus_0..,salt row-major`.
    pub fn events_to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut out = String::from("step_index,from,to,t_event");
        for j in 0..n {
            let _ = write!(out, ",x_minus_{j}");
        }
        for j in 0..n {
            let _ = write!(out, ",x_plus_{j}");
        }
        for r in 0..n {
            for c in 0..n {
                let _ = write!(out, ",salt_{r}_{c}");
            }
        }
        out.push('\n');
        for ev in &self.events {
            let _ = write!(out, "{},{},{},{}", ev.step_index, ev.from, ev.to, ev.t_event);
            for j in 0..n {
                let _ = write!(out, ",{}", ev.x_minus[j]);
            }
            for j in 0..n {
                let _ = write!(out, ",{}", ev.x_plus[j]);
            }
            for r in 0..n {
                for c in 0..n {
                    let _ = write!(out, ",{}", ev.salt[(r, c)]);
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parse a trajectory written by [`Self::to_csv`]. Events are not part of
    /// the sample CSV and are left empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 {
                return Err(HybridError::ParameterError(format!(
                    "trajectory CSV line {lineno}: expected at least t,mode"
                )));
            }
            let t: f64 = fields[0]
                .parse()
                .map_err(|e| HybridError::ParameterError(format!("line {lineno}: {e}")))?;
            let mode: usize = fields[1]
                .parse()
                .map_err(|e| HybridError::ParameterError(format!("line {lineno}: {e}")))?;
            let mut x = Vec::with_capacity(fields.len() - 2);
            for f in &fields[2..] {
                x.push(
                    f.parse::<f64>()
                        .map_err(|e| HybridError::ParameterError(format!("line {lineno}: {e}")))?,
                );
            }
            samples.push(HybridState::new(ModeId(mode), DVector::from_vec(x), t));
        }
        Ok(Self {
            samples,
            events: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_samples() {
        let traj = HybridTrajectory {
            samples: vec![
                HybridState::new(ModeId(0), DVector::from_vec(vec![0.0, 1.0]), 0.0),
                HybridState::new(ModeId(1), DVector::from_vec(vec![0.25, -0.125]), 0.01),
            ],
            events: Vec::new(),
        };
        let csv = traj.to_csv();
        let parsed = HybridTrajectory::from_csv(&csv).unwrap();
        assert_eq!(parsed.samples.len(), 2);
        for (a, b) in traj.samples.iter().zip(&parsed.samples) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.mode, b.mode);
            assert_eq!(a.x, b.x);
        }
    }

    #[test]
    fn event_csv_has_header_and_rows() {
        let traj = HybridTrajectory {
            samples: vec![HybridState::new(
                ModeId(0),
                DVector::from_vec(vec![0.0, 1.0]),
                0.0,
            )],
            events: vec![EventRecord {
                step_index: 3,
                from: ModeId(0),
                to: ModeId(0),
                t_event: 0.0312,
                x_minus: DVector::from_vec(vec![0.1, 0.0]),
                x_plus: DVector::from_vec(vec![0.1, 0.0]),
                salt: DMatrix::identity(2, 2),
                at_step_start: false,
            }],
        };
        let csv = traj.events_to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("step_index,from,to,t_event"));
        assert!(lines[1].starts_with("3,0,0,0.0312"));
    }
}
