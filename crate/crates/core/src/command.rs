use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// High-level navigation command. The order is fixed and shared by every
/// per-command output (planner branches, likelihood heads, checkpoints).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    TurnLeft,
    TurnRight,
    GoStraight,
    FollowLane,
    ChangeLaneToLeft,
    ChangeLaneToRight,
}

pub const NUM_COMMANDS: usize = 6;

impl Command {
    pub const ALL: [Command; NUM_COMMANDS] = [
        Command::TurnLeft,
        Command::TurnRight,
        Command::GoStraight,
        Command::FollowLane,
        Command::ChangeLaneToLeft,
        Command::ChangeLaneToRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Command, Error> {
        Command::ALL.get(i).copied().ok_or_else(|| Error::UnknownCommand(i.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::TurnLeft => "turn-left",
            Command::TurnRight => "turn-right",
            Command::GoStraight => "go-straight",
            Command::FollowLane => "follow-lane",
            Command::ChangeLaneToLeft => "change-lane-to-left",
            Command::ChangeLaneToRight => "change-lane-to-right",
        }
    }

    pub fn names() -> Vec<String> {
        Command::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Command::ALL.iter().copied().find(|c| c.name() == s).ok_or_else(|| Error::UnknownCommand(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_order_and_names() {
        assert_eq!(
            Command::names(),
            ["turn-left", "turn-right", "go-straight", "follow-lane", "change-lane-to-left", "change-lane-to-right"]
        );
        for (i, c) in Command::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.name().parse::<Command>().unwrap(), *c);
        }
        assert!("u-turn".parse::<Command>().is_err());
        assert!(Command::from_index(6).is_err());
    }
}
