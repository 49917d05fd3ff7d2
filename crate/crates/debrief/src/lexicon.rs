//! Action id → past-tense verb phrase, read from `action = phrase` lines.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{DebriefError, Result};

pub const DEFAULT_SUBJECT: &str = "the firefighter";

/// Default phrasing of the firefighter drill actions.
pub const DEFAULT_LEXICON: &str = "\
# action = past-tense verb phrase
climb_ladder = climbed the ladder
carry_civilian = rescued a civilian
dress_gear = dressed in firefighting gear
drive_vehicle = drove the vehicle
break_door = breached the door
break_window = broke the window
operate_hose = operated the hose
carry_hose = carried the hose
";

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    phrases: BTreeMap<String, String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::parse(DEFAULT_LEXICON, "default lexicon").expect("default lexicon parses")
    }
}

impl Lexicon {
    /// Parse `action = phrase` lines; blank lines and `#` comments are
    /// skipped, duplicate actions rejected.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut phrases = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |column: &str, message: &str| DebriefError::Parse {
                source_name: source.into(),
                line: i as u64 + 1,
                column: column.into(),
                message: message.into(),
            };
            let (action, phrase) = line.split_once('=').ok_or_else(|| err("line", "expected `action = phrase`"))?;
            let (action, phrase) = (action.trim(), phrase.trim());
            if action.is_empty() || action.contains(char::is_whitespace) {
                return Err(err("action", "action id must be one non-empty word"));
            }
            if phrase.is_empty() {
                return Err(err("phrase", "empty verb phrase"));
            }
            if phrases.insert(action.to_string(), phrase.to_string()).is_some() {
                return Err(err("action", &format!("duplicate action {action:?}")));
            }
        }
        Ok(Lexicon { phrases })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DebriefError::io(path, e))?;
        Lexicon::parse(&text, &path.display().to_string())
    }

    /// The phrase for `action`; unknown actions read "performed <action>"
    /// with underscores as spaces.
    pub fn phrase(&self, action: &str) -> String {
        self.phrases
            .get(action)
            .cloned()
            .unwrap_or_else(|| format!("performed {}", action.replace('_', " ")))
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.phrases.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_and_fallback() {
        let l = Lexicon::default();
        assert_eq!(l.phrase("climb_ladder"), "climbed the ladder");
        assert_eq!(l.phrase("break_door"), "breached the door");
        assert_eq!(l.phrase("roll_out"), "performed roll out");
        assert_eq!(l.actions().count(), 8);
    }

    #[test]
    fn parse_errors_are_located() {
        let e = Lexicon::parse("# c\na = b\na = c\n", "lex.txt").unwrap_err().to_string();
        assert_eq!(e, "lex.txt:3:action: duplicate action \"a\"");
        assert!(Lexicon::parse("just words", "x").is_err());
        assert!(Lexicon::parse("a =  ", "x").is_err());
        assert!(Lexicon::parse("a b = c", "x").is_err());
    }
}
