use serde::{Deserialize, Serialize};

/// One constant piece of a step schedule, covering `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSegment {
    pub start: f64,
    pub end: f64,
    pub p: f64,
}

/// Spurious-agreement probability as a function of the domain index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Affine from `p_start` at `t_start` to `p_end` at `t_end`, extended
    /// (then clamped) outside that interval.
    Linear {
        t_start: f64,
        t_end: f64,
        p_start: f64,
        p_end: f64,
    },
    /// `mid + amp * sin(2π t / period + phase)`.
    Sine {
        mid: f64,
        amp: f64,
        period: f64,
        phase: f64,
    },
    /// Piecewise constant. Indices before the first segment use the first
    /// value, indices past a segment's end use the last segment started.
    Step { segments: Vec<StepSegment> },
    Constant { p: f64 },
}

impl Schedule {
    /// Linear default: 0.99 at t = 0 down to 0.01 at t = 100.
    pub fn default_linear() -> Self {
        Schedule::Linear {
            t_start: 0.0,
            t_end: 100.0,
            p_start: 0.99,
            p_end: 0.01,
        }
    }

    pub fn default_sine() -> Self {
        Schedule::Sine {
            mid: 0.5,
            amp: 0.45,
            period: 50.0,
            phase: 0.0,
        }
    }

    /// Two-block schedule over integer indices `1..=2*half`: `first` on the
    /// lower block and `second` on the upper block.
    pub fn two_block(half: u32, first: f64, second: f64) -> Self {
        let h = f64::from(half);
        Schedule::Step {
            segments: vec![
                StepSegment {
                    start: 1.0,
                    end: h,
                    p: first,
                },
                StepSegment {
                    start: h + 1.0,
                    end: 2.0 * h,
                    p: second,
                },
            ],
        }
    }

    /// Probability at domain index `t`, clamped to `[0, 1]`.
    pub fn p_s(&self, t: f64) -> f64 {
        let raw = match self {
            Schedule::Linear {
                t_start,
                t_end,
                p_start,
                p_end,
            } => {
                let span = t_end - t_start;
                if span == 0.0 {
                    *p_start
                } else {
                    p_start + (p_end - p_start) * (t - t_start) / span
                }
            }
            Schedule::Sine {
                mid,
                amp,
                period,
                phase,
            } => mid + amp * (std::f64::consts::TAU * t / period + phase).sin(),
            Schedule::Step { segments } => {
                let mut p = segments.first().map_or(0.5, |s| s.p);
                for s in segments {
                    if t >= s.start {
                        p = s.p;
                    }
                    if t >= s.start && t <= s.end {
                        break;
                    }
                }
                p
            }
            Schedule::Constant { p } => *p,
        };
        raw.clamp(0.0, 1.0)
    }

    /// Short human-readable form stored in dataset metadata.
    pub fn describe(&self) -> String {
        match self {
            Schedule::Linear {
                t_start,
                t_end,
                p_start,
                p_end,
            } => format!("linear({p_start}@{t_start} -> {p_end}@{t_end})"),
            Schedule::Sine {
                mid,
                amp,
                period,
                phase,
            } => format!("sine(mid={mid}, amp={amp}, period={period}, phase={phase})"),
            Schedule::Step { segments } => {
                let parts: Vec<String> = segments
                    .iter()
                    .map(|s| format!("{}@[{},{}]", s.p, s.start, s.end))
                    .collect();
                format!("step({})", parts.join(", "))
            }
            Schedule::Constant { p } => format!("constant({p})"),
        }
    }
}

/// Free-function form of [`Schedule::p_s`].
pub fn p_s(schedule: &Schedule, t: f64) -> f64 {
    schedule.p_s(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_midpoint() {
        assert!((Schedule::default_linear().p_s(50.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_blocks() {
        let s = Schedule::two_block(512, 0.9, 0.8);
        assert_eq!(s.p_s(600.0), 0.8);
        assert_eq!(s.p_s(1.0), 0.9);
        assert_eq!(s.p_s(512.0), 0.9);
        assert_eq!(s.p_s(513.0), 0.8);
        assert_eq!(s.p_s(512.5), 0.9);
        assert_eq!(s.p_s(2000.0), 0.8);
    }

    #[test]
    fn zero_amplitude_sine_is_constant() {
        let s = Schedule::Sine {
            mid: 0.3,
            amp: 0.0,
            period: 17.0,
            phase: 1.0,
        };
        for t in [0.0, 3.3, 50.0, 99.0] {
            assert_eq!(s.p_s(t), 0.3);
        }
    }

    #[test]
    fn clamps_overshoot() {
        let s = Schedule::Sine {
            mid: 0.9,
            amp: 0.5,
            period: 4.0,
            phase: 0.0,
        };
        assert_eq!(s.p_s(1.0), 1.0);
        assert_eq!(Schedule::default_linear().p_s(200.0), 0.0);
    }

    #[test]
    fn serde_tagged() {
        let s: Schedule = toml::from_str("kind = \"constant\"\np = 0.1").unwrap();
        assert_eq!(s, Schedule::Constant { p: 0.1 });
    }
}
