use std::fmt;
use std::str::FromStr;

use super::command::CommandKind;
use super::SteerError;

/// One line of a steering script: submit `kind` once the head has observed
/// simulation step `at_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub at_step: u64,
    pub kind: CommandKind,
}

/// Steering commands scheduled against observed simulation steps.
///
/// Text form, one entry per line, `#` starts a comment:
///
/// ```text
/// 100 set dt 0.002
/// 250 pause
/// 250 resume
/// 400 terminate
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SteeringScript {
    pub entries: Vec<ScriptEntry>,
}

impl SteeringScript {
    /// Entries sorted by step, keeping file order among equal steps.
    pub fn sorted(mut self) -> Self {
        self.entries.sort_by_key(|e| e.at_step);
        self
    }
}

impl FromStr for SteeringScript {
    type Err = SteerError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: &str| SteerError::Script {
                line: no + 1,
                reason: why.to_string(),
            };
            let words: Vec<&str> = line.split_whitespace().collect();
            let at_step = words[0].parse::<u64>().map_err(|_| bad("expected a step number"))?;
            let kind = match &words[1..] {
                ["set", name, value] => CommandKind::set(
                    name,
                    value.parse::<f64>().map_err(|_| bad("expected a numeric value"))?,
                ),
                ["pause"] => CommandKind::Pause,
                ["resume"] => CommandKind::Resume,
                ["terminate"] => CommandKind::Terminate,
                _ => return Err(bad("expected `set <name> <value>`, `pause`, `resume` or `terminate`")),
            };
            entries.push(ScriptEntry { at_step, kind });
        }
        Ok(SteeringScript { entries })
    }
}

impl fmt::Display for SteeringScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            match &e.kind {
                CommandKind::SetParam { name, value } => {
                    writeln!(f, "{} set {name} {value:?}", e.at_step)?
                }
                CommandKind::Pause => writeln!(f, "{} pause", e.at_step)?,
                CommandKind::Resume => writeln!(f, "{} resume", e.at_step)?,
                CommandKind::Terminate => writeln!(f, "{} terminate", e.at_step)?,
            }
        }
        Ok(())
    }
}
