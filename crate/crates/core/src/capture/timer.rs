use serde::{Deserialize, Serialize};

/// Coarse meshing stops on its own after this many seconds.
pub const DEFAULT_MESH_BUDGET_SECS: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum TimerPhase {
    Idle,
    Capturing { started_at: f64 },
}

/// Emitted when the budget runs out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptureStopped {
    pub started_at: f64,
    pub stopped_at: f64,
}

/// Auto-stop timer for coarse mesh capture. Times are seconds on any
/// monotone clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshCaptureTimer {
    pub phase: TimerPhase,
    pub budget: f64,
}

impl Default for MeshCaptureTimer {
    fn default() -> Self {
        Self::new(DEFAULT_MESH_BUDGET_SECS)
    }
}

impl MeshCaptureTimer {
    pub fn new(budget: f64) -> Self {
        assert!(budget > 0.0, "mesh capture budget must be positive");
        Self {
            phase: TimerPhase::Idle,
            budget,
        }
    }

    pub fn is_capturing(&self) -> bool {
        matches!(self.phase, TimerPhase::Capturing { .. })
    }

    /// Starts capturing, or restarts the budget if already running.
    pub fn start(self, now: f64) -> Self {
        Self {
            phase: TimerPhase::Capturing { started_at: now },
            ..self
        }
    }

    pub fn tick(self, now: f64) -> (Self, Option<CaptureStopped>) {
        match self.phase {
            TimerPhase::Capturing { started_at } if now - started_at >= self.budget => (
                Self {
                    phase: TimerPhase::Idle,
                    ..self
                },
                Some(CaptureStopped {
                    started_at,
                    stopped_at: now,
                }),
            ),
            _ => (self, None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_exactly_at_budget() {
        let t = MeshCaptureTimer::default().start(0.0);
        let (t, ev) = t.tick(14.999);
        assert!(t.is_capturing() && ev.is_none());
        let (t, ev) = t.tick(15.0);
        assert!(!t.is_capturing());
        assert_eq!(ev, Some(CaptureStopped { started_at: 0.0, stopped_at: 15.0 }));
    }

    #[test]
    fn restart_resets_budget() {
        let t = MeshCaptureTimer::default().start(0.0).start(10.0);
        let (t, ev) = t.tick(20.0);
        assert!(t.is_capturing() && ev.is_none());
        let (t, ev) = t.tick(25.0);
        assert!(!t.is_capturing() && ev.is_some());
    }

    #[test]
    fn idle_tick_is_noop() {
        let (t, ev) = MeshCaptureTimer::default().tick(100.0);
        assert_eq!(t.phase, TimerPhase::Idle);
        assert!(ev.is_none());
    }
}
