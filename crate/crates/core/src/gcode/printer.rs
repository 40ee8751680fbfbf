//! Virtual 3D printer: executes the G-code dialect against [`MachineState`]
//! with Marlin-style `ok` framing and a belt-slip model on X/Y.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{parse_line, GCodeCommand, HomeAxes, MoveWords};
use crate::config::{MachineConfig, Span};
use crate::geometry::Axis;
use crate::machine::{MachineState, Position3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlipError {
    #[error("slip fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("slip range must satisfy 0 <= min <= max < 1")]
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipMode {
    /// Every X/Y move under-travels by exactly `fraction`.
    Deterministic,
    /// Each move draws a fresh fraction per axis, uniformly from `range`.
    Stochastic,
}

/// Multiplicative under-travel of the belt-driven X and Y axes. Z is driven
/// by lead screws and never slips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlipModel {
    pub mode: SlipMode,
    /// Per-axis (X, Y) fraction used in deterministic mode. 1.0 models a belt
    /// that does not move the carriage at all.
    pub fraction: [f64; 2],
    pub range: Span,
    pub rng_seed: u64,
}

impl Default for SlipModel {
    fn default() -> Self {
        Self {
            mode: SlipMode::Deterministic,
            fraction: [0.1, 0.1],
            range: Span::new(0.0, 0.25),
            rng_seed: 0,
        }
    }
}

impl SlipModel {
    pub fn none() -> Self {
        Self::deterministic(0.0)
    }

    pub fn deterministic(s: f64) -> Self {
        Self {
            mode: SlipMode::Deterministic,
            fraction: [s, s],
            ..Self::default()
        }
    }

    pub fn stochastic(range: Span, rng_seed: u64) -> Self {
        Self {
            mode: SlipMode::Stochastic,
            range,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SlipError> {
        for f in self.fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(SlipError::Fraction(f));
            }
        }
        let r = self.range;
        if !(r.min >= 0.0 && r.min <= r.max && r.max < 1.0) {
            return Err(SlipError::Range);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positioning {
    Absolute,
    Relative,
}

/// One reply line. Renders as the exact bytes sent on the wire (without the
/// trailing newline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reply {
    Ok,
    Position(Position3),
    Error(String),
}

impl Reply {
    pub fn is_ok(&self) -> bool {
        !matches!(self, Reply::Error(_))
    }
}

impl fmt::Display for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Ok => f.write_str("ok"),
            Reply::Position(p) => write!(f, "ok X:{:.6} Y:{:.6} Z:{:.6}", p.x, p.y, p.z),
            Reply::Error(msg) => write!(f, "Error:{msg}"),
        }
    }
}

/// Result of executing one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub state: MachineState,
    pub reply: Reply,
    /// Actual carriage displacement for motion commands.
    pub moved: Option<Position3>,
}

#[derive(Debug, Clone)]
pub struct VirtualPrinter {
    positioning: Positioning,
    feed_rate: f64,
    slip: SlipModel,
    rng: ChaCha8Rng,
}

impl VirtualPrinter {
    pub fn new(slip: SlipModel, cfg: &MachineConfig) -> Result<Self, SlipError> {
        slip.validate()?;
        Ok(Self {
            positioning: Positioning::Absolute,
            feed_rate: cfg.default_feed_rate,
            slip,
            rng: ChaCha8Rng::seed_from_u64(slip.rng_seed),
        })
    }

    pub fn positioning(&self) -> Positioning {
        self.positioning
    }

    pub fn slip(&self) -> &SlipModel {
        &self.slip
    }

    fn draw_slip(&mut self) -> [f64; 2] {
        match self.slip.mode {
            SlipMode::Deterministic => self.slip.fraction,
            SlipMode::Stochastic => {
                let r = self.slip.range;
                let mut draw = || {
                    if r.max > r.min {
                        self.rng.random_range(r.min..r.max)
                    } else {
                        r.min
                    }
                };
                [draw(), draw()]
            }
        }
    }

    /// Parses and executes one line; parse failures become an error reply.
    pub fn handle_line(&mut self, line: &str, s: &MachineState, cfg: &MachineConfig) -> Execution {
        match parse_line(line) {
            Ok(cmd) => self.execute(&cmd, s, cfg),
            Err(e) => Execution {
                state: *s,
                reply: Reply::Error(format!("parse: {e}")),
                moved: None,
            },
        }
    }

    pub fn execute(&mut self, cmd: &GCodeCommand, s: &MachineState, cfg: &MachineConfig) -> Execution {
        let unchanged = |reply: Reply| Execution {
            state: *s,
            reply,
            moved: None,
        };
        if s.estop_latched && cmd.is_motion() {
            return unchanged(Reply::Error("Printer halted. kill() called!".into()));
        }
        match cmd {
            GCodeCommand::EmergencyStop => {
                let mut next = *s;
                next.estop_latched = true;
                Execution {
                    state: next,
                    reply: Reply::Ok,
                    moved: None,
                }
            }
            GCodeCommand::SetAbsolute => {
                self.positioning = Positioning::Absolute;
                unchanged(Reply::Ok)
            }
            GCodeCommand::SetRelative => {
                self.positioning = Positioning::Relative;
                unchanged(Reply::Ok)
            }
            GCodeCommand::ReportPosition => unchanged(Reply::Position(s.carriage)),
            GCodeCommand::RapidMove(words) | GCodeCommand::LinearMove(words) => self.linear(words, s, cfg),
            GCodeCommand::Home(axes) => self.home(*axes, s, cfg),
        }
    }

    fn commanded_target(&self, words: &MoveWords, s: &MachineState) -> Position3 {
        let c = s.carriage;
        let resolve = |word: Option<f64>, current: f64| match (word, self.positioning) {
            (None, _) => current,
            (Some(v), Positioning::Absolute) => v,
            (Some(v), Positioning::Relative) => current + v,
        };
        Position3::new(resolve(words.x, c.x), resolve(words.y, c.y), resolve(words.z, c.z))
    }

    fn linear(&mut self, words: &MoveWords, s: &MachineState, cfg: &MachineConfig) -> Execution {
        if let Some(f) = words.f {
            let l = cfg.feed_rate_limits;
            self.feed_rate = f.clamp(l.min, l.max);
        }
        let target = self.commanded_target(words, s);
        for axis in Axis::ALL {
            let span = cfg.axis_limits.carriage(axis);
            let v = target.get(axis);
            if !span.contains(v) {
                return Execution {
                    state: *s,
                    reply: Reply::Error(format!(
                        "{} target {v} outside [{}, {}]",
                        axis.letter(),
                        span.min,
                        span.max
                    )),
                    moved: None,
                };
            }
        }
        let slip = self.draw_slip();
        let c = s.carriage;
        let travel = |current: f64, commanded: f64, slip: f64| {
            if slip == 0.0 {
                commanded
            } else {
                current + (commanded - current) * (1.0 - slip)
            }
        };
        let actual = Position3::new(
            travel(c.x, target.x, slip[0]),
            travel(c.y, target.y, slip[1]),
            target.z,
        );
        let path = ((target.x - c.x).powi(2) + (target.y - c.y).powi(2) + (target.z - c.z).powi(2)).sqrt();
        let mut next = *s;
        next.carriage = actual;
        next.advance_clock(path / (self.feed_rate / 60.0));
        Execution {
            state: next,
            reply: Reply::Ok,
            moved: Some(Position3::new(actual.x - c.x, actual.y - c.y, actual.z - c.z)),
        }
    }

    /// Homing runs against end stops, so the final position is exact
    /// regardless of slip. Z homes to its top so the probes clear the chip.
    fn home(&mut self, axes: HomeAxes, s: &MachineState, cfg: &MachineConfig) -> Execution {
        let c = s.carriage;
        let l = cfg.axis_limits;
        let target = Position3::new(
            if axes.x { l.x.min } else { c.x },
            if axes.y { l.y.min } else { c.y },
            if axes.z { l.z.max } else { c.z },
        );
        let path = ((target.x - c.x).powi(2) + (target.y - c.y).powi(2) + (target.z - c.z).powi(2)).sqrt();
        let mut next = *s;
        next.carriage = target;
        next.advance_clock(path / (self.feed_rate / 60.0));
        Execution {
            state: next,
            reply: Reply::Ok,
            moved: Some(Position3::new(target.x - c.x, target.y - c.y, target.z - c.z)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(slip: SlipModel) -> (VirtualPrinter, MachineState, MachineConfig) {
        let cfg = MachineConfig::default();
        let printer = VirtualPrinter::new(slip, &cfg).unwrap();
        (printer, MachineState::at(Position3::new(10.0, 10.0, 5.0)), cfg)
    }

    #[test]
    fn x_under_travels_by_slip() {
        let (mut p, s, cfg) = setup(SlipModel::deterministic(0.2));
        p.handle_line("G91", &s, &cfg);
        let out = p.handle_line("G1 X1.0", &s, &cfg);
        assert_eq!(out.reply, Reply::Ok);
        assert!((out.state.carriage.x - 10.8).abs() < 1e-12);
        assert!((out.moved.unwrap().x - 0.8).abs() < 1e-12);
    }

    #[test]
    fn z_never_slips() {
        let (mut p, s, cfg) = setup(SlipModel::deterministic(0.2));
        p.handle_line("G91", &s, &cfg);
        let out = p.handle_line("G1 Z-0.5", &s, &cfg);
        assert_eq!(out.state.carriage.z, 4.5);
    }

    #[test]
    fn estop_latches_and_refuses_moves() {
        let (mut p, s, cfg) = setup(SlipModel::none());
        let out = p.handle_line("M112", &s, &cfg);
        assert_eq!(out.reply.to_string(), "ok");
        assert!(out.state.estop_latched);
        let refused = p.handle_line("G0 X20", &out.state, &cfg);
        assert!(!refused.reply.is_ok());
        assert_eq!(refused.state, out.state);
        assert!(!p.handle_line("G28", &out.state, &cfg).reply.is_ok());
    }

    #[test]
    fn limit_breach_is_an_error_without_motion() {
        let (mut p, s, cfg) = setup(SlipModel::none());
        let out = p.handle_line("G0 X500", &s, &cfg);
        assert!(out.reply.to_string().starts_with("Error:"));
        assert_eq!(out.state, s);
    }

    #[test]
    fn clock_advances_by_path_over_feed() {
        let (mut p, s, cfg) = setup(SlipModel::none());
        let out = p.handle_line("G1 X13 Y14 F600", &s, &cfg);
        // 5 mm at 10 mm/s.
        assert!((out.state.sim_clock - 0.5).abs() < 1e-12);
        assert_eq!(out.state.carriage, Position3::new(13.0, 14.0, 5.0));
    }

    #[test]
    fn feed_word_is_clamped_to_machine_limits() {
        let (mut p, s, cfg) = setup(SlipModel::none());
        let slow = p.handle_line("G1 X13 Y14 F0.0000001", &s, &cfg);
        // 5 mm at the 1 mm/min floor.
        assert!((slow.state.sim_clock - 300.0).abs() < 1e-9);
        let fast = p.handle_line("G1 X10 Y10 F99999999", &slow.state, &cfg);
        assert!((fast.state.sim_clock - 300.025).abs() < 1e-9);
    }

    #[test]
    fn position_report_line() {
        let (mut p, s, cfg) = setup(SlipModel::none());
        let out = p.handle_line("M114", &s, &cfg);
        assert_eq!(out.reply.to_string(), "ok X:10.000000 Y:10.000000 Z:5.000000");
    }

    #[test]
    fn home_is_exact_despite_slip() {
        let (mut p, s, cfg) = setup(SlipModel::deterministic(0.5));
        let out = p.handle_line("G28 X Y", &s, &cfg);
        assert_eq!(out.state.carriage, Position3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn stochastic_slip_stays_in_range_and_is_seeded() {
        let run = |seed| {
            let (mut p, mut s, cfg) = setup(SlipModel::stochastic(Span::new(0.0, 0.25), seed));
            p.handle_line("G91", &s, &cfg);
            let mut moves = Vec::new();
            for _ in 0..50 {
                let out = p.handle_line("G1 X1 Y1", &s, &cfg);
                let m = out.moved.unwrap();
                assert!(m.x > 0.75 - 1e-12 && m.x <= 1.0);
                assert!(m.y > 0.75 - 1e-12 && m.y <= 1.0);
                moves.push(m);
                s = out.state;
            }
            moves
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn rejects_invalid_slip() {
        let cfg = MachineConfig::default();
        assert!(VirtualPrinter::new(SlipModel::deterministic(1.5), &cfg).is_err());
        assert!(VirtualPrinter::new(SlipModel::stochastic(Span::new(0.0, 1.0), 0), &cfg).is_err());
    }
}
