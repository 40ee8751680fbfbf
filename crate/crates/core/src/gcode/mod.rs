//! G-code link to the virtual printer.

mod parse;
mod printer;

pub use parse::{parse_line, GCodeCommand, GCodeError, HomeAxes, MoveWords};
pub use printer::{Execution, Positioning, Reply, SlipError, SlipMode, SlipModel, VirtualPrinter};
