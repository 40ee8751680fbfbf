//! Parser and serializer for the printer's G-code dialect.
//!
//! Supported: `G0`/`G1` moves (X Y Z F words), `G28` homing (optional axis
//! letters), `G90`/`G91` positioning mode, `M114` position report and `M112`
//! emergency stop. Everything after `;` is a comment.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GCodeError {
    #[error("empty line")]
    Empty,
    #[error("unknown verb {verb:?} at offset {offset}")]
    UnknownVerb { verb: String, offset: usize },
    #[error("unknown word {word:?} at offset {offset}")]
    UnknownWord { word: char, offset: usize },
    #[error("duplicate word {word:?} at offset {offset}")]
    DuplicateWord { word: char, offset: usize },
    #[error("invalid number for {word:?} at offset {offset}")]
    InvalidNumber { word: char, offset: usize },
    #[error("feed rate must be > 0 (offset {offset})")]
    InvalidFeedRate { offset: usize },
}

impl GCodeError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            GCodeError::Empty => None,
            GCodeError::UnknownVerb { offset, .. }
            | GCodeError::UnknownWord { offset, .. }
            | GCodeError::DuplicateWord { offset, .. }
            | GCodeError::InvalidNumber { offset, .. }
            | GCodeError::InvalidFeedRate { offset } => Some(*offset),
        }
    }
}

/// Parameters of a G0/G1 move. Coordinates are millimetres, `f` is mm/min.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MoveWords {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub f: Option<f64>,
}

/// Axes named on a `G28`; none named means all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HomeAxes {
    pub x: bool,
    pub y: bool,
    pub z: bool,
}

impl HomeAxes {
    pub const ALL: HomeAxes = HomeAxes { x: true, y: true, z: true };

    fn any(&self) -> bool {
        self.x || self.y || self.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum GCodeCommand {
    RapidMove(MoveWords),
    LinearMove(MoveWords),
    Home(HomeAxes),
    SetAbsolute,
    SetRelative,
    ReportPosition,
    EmergencyStop,
}

impl GCodeCommand {
    pub fn is_motion(&self) -> bool {
        matches!(self, GCodeCommand::RapidMove(_) | GCodeCommand::LinearMove(_) | GCodeCommand::Home(_))
    }
}

enum Verb {
    Move(bool),
    Home,
    Absolute,
    Relative,
    Report,
    EStop,
}

fn verb_of(token: &str) -> Option<Verb> {
    let mut chars = token.chars();
    let letter = chars.next()?.to_string();
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let code: u32 = digits.parse().ok()?;
    match (letter.to_ascii_uppercase().as_str(), code) {
        ("G", 0) => Some(Verb::Move(true)),
        ("G", 1) => Some(Verb::Move(false)),
        ("G", 28) => Some(Verb::Home),
        ("G", 90) => Some(Verb::Absolute),
        ("G", 91) => Some(Verb::Relative),
        ("M", 114) => Some(Verb::Report),
        ("M", 112) => Some(Verb::EStop),
        _ => None,
    }
}

/// Splits `line` into whitespace-separated tokens with their byte offsets.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - line.as_ptr() as usize, t))
}

/// Splits a word token into its upper-cased letter and the remaining text.
fn split_word(tok: &str) -> (char, &str) {
    let mut chars = tok.chars();
    let letter = chars.next().unwrap_or(' ');
    (letter.to_ascii_uppercase(), chars.as_str())
}

fn number(word: char, offset: usize, text: &str) -> Result<f64, GCodeError> {
    // Rust's float parser accepts "inf"/"nan"; G-code numbers are plain decimals.
    let plain = !text.is_empty()
        && text
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+'));
    match text.parse::<f64>() {
        Ok(v) if plain && v.is_finite() => Ok(v),
        _ => Err(GCodeError::InvalidNumber { word, offset }),
    }
}

/// Parses one line. Never panics; every malformed input maps to an error.
pub fn parse_line(line: &str) -> Result<GCodeCommand, GCodeError> {
    let code = line.split(';').next().unwrap_or("");
    let mut toks = tokens(code);
    let (verb_offset, verb_token) = toks.next().ok_or(GCodeError::Empty)?;
    let verb = verb_of(verb_token).ok_or_else(|| GCodeError::UnknownVerb {
        verb: verb_token.to_string(),
        offset: verb_offset,
    })?;

    match verb {
        Verb::Move(rapid) => {
            let mut words = MoveWords::default();
            for (offset, tok) in toks {
                let (letter, rest) = split_word(tok);
                let slot = match letter {
                    'X' => &mut words.x,
                    'Y' => &mut words.y,
                    'Z' => &mut words.z,
                    'F' => &mut words.f,
                    other => return Err(GCodeError::UnknownWord { word: other, offset }),
                };
                if slot.is_some() {
                    return Err(GCodeError::DuplicateWord { word: letter, offset });
                }
                let value = number(letter, offset, rest)?;
                if letter == 'F' && value <= 0.0 {
                    return Err(GCodeError::InvalidFeedRate { offset });
                }
                *slot = Some(value);
            }
            Ok(if rapid {
                GCodeCommand::RapidMove(words)
            } else {
                GCodeCommand::LinearMove(words)
            })
        }
        Verb::Home => {
            let mut axes = HomeAxes::default();
            for (offset, tok) in toks {
                let (letter, rest) = split_word(tok);
                let flag = match letter {
                    'X' => &mut axes.x,
                    'Y' => &mut axes.y,
                    'Z' => &mut axes.z,
                    other => return Err(GCodeError::UnknownWord { word: other, offset }),
                };
                if *flag {
                    return Err(GCodeError::DuplicateWord { word: letter, offset });
                }
                // Marlin ignores the value on G28 axis words, but it must still be a number.
                if !rest.is_empty() {
                    number(letter, offset, rest)?;
                }
                *flag = true;
            }
            Ok(GCodeCommand::Home(if axes.any() { axes } else { HomeAxes::ALL }))
        }
        simple => {
            if let Some((offset, tok)) = toks.next() {
                let (word, _) = split_word(tok);
                return Err(GCodeError::UnknownWord { word, offset });
            }
            Ok(match simple {
                Verb::Absolute => GCodeCommand::SetAbsolute,
                Verb::Relative => GCodeCommand::SetRelative,
                Verb::Report => GCodeCommand::ReportPosition,
                Verb::EStop => GCodeCommand::EmergencyStop,
                Verb::Move(_) | Verb::Home => unreachable!(),
            })
        }
    }
}

impl fmt::Display for GCodeCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let write_words = |f: &mut fmt::Formatter<'_>, w: &MoveWords| -> fmt::Result {
            for (letter, value) in [('X', w.x), ('Y', w.y), ('Z', w.z), ('F', w.f)] {
                if let Some(v) = value {
                    write!(f, " {letter}{v}")?;
                }
            }
            Ok(())
        };
        match self {
            GCodeCommand::RapidMove(w) => {
                f.write_str("G0")?;
                write_words(f, w)
            }
            GCodeCommand::LinearMove(w) => {
                f.write_str("G1")?;
                write_words(f, w)
            }
            GCodeCommand::Home(axes) => {
                f.write_str("G28")?;
                if *axes != HomeAxes::ALL {
                    for (letter, on) in [('X', axes.x), ('Y', axes.y), ('Z', axes.z)] {
                        if on {
                            write!(f, " {letter}")?;
                        }
                    }
                }
                Ok(())
            }
            GCodeCommand::SetAbsolute => f.write_str("G90"),
            GCodeCommand::SetRelative => f.write_str("G91"),
            GCodeCommand::ReportPosition => f.write_str("M114"),
            GCodeCommand::EmergencyStop => f.write_str("M112"),
        }
    }
}
