//! Labels, attack codes and protocol files.
//!
//! A protocol file has one utterance per line:
//! `<utt_id> <attack_code|-> <bonafide|spoof>`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ground-truth class. Class index 0 is bonafide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Bonafide),
            1 => Some(Label::Spoof),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            _ => Err(Error::Data(format!("unknown label '{s}'"))),
        }
    }
}

/// One of the three severity bands used for both attack factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    A,
    B,
    C,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::A, Band::B, Band::C];

    pub fn index(self) -> usize {
        self as usize
    }

    fn letter(self) -> char {
        ['A', 'B', 'C'][self as usize]
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'A' => Some(Band::A),
            'B' => Some(Band::B),
            'C' => Some(Band::C),
            _ => None,
        }
    }
}

/// A replay attack: attacker-to-talker distance band and replay-device
/// quality band. Bonafide speech has no `AttackSpec`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttackSpec {
    pub distance: Band,
    pub quality: Band,
}

impl AttackSpec {
    pub const fn new(distance: Band, quality: Band) -> Self {
        Self { distance, quality }
    }

    /// The nine codes in order AA, AB, AC, BA, ..., CC.
    pub fn all() -> [AttackSpec; 9] {
        let mut out = [AttackSpec::new(Band::A, Band::A); 9];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = AttackSpec::new(Band::ALL[i / 3], Band::ALL[i % 3]);
        }
        out
    }

    pub fn index(self) -> usize {
        self.distance.index() * 3 + self.quality.index()
    }

    pub fn code(self) -> String {
        format!("{}{}", self.distance.letter(), self.quality.letter())
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.distance.letter(), self.quality.letter())
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(d), Some(q), None) => match (Band::from_letter(d), Band::from_letter(q)) {
                (Some(d), Some(q)) => Ok(AttackSpec::new(d, q)),
                _ => Err(Error::Data(format!("unknown attack code '{s}'"))),
            },
            _ => Err(Error::Data(format!("unknown attack code '{s}'"))),
        }
    }
}

/// Render an optional attack as its protocol token.
pub fn attack_token(a: Option<AttackSpec>) -> String {
    a.map_or_else(|| "-".to_string(), |a| a.code())
}

pub fn parse_attack_token(tok: &str) -> Result<Option<AttackSpec>> {
    if tok == "-" {
        Ok(None)
    } else {
        tok.parse().map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub utt_id: String,
    pub attack: Option<AttackSpec>,
    pub label: Label,
}

impl ProtocolEntry {
    pub fn new(utt_id: impl Into<String>, attack: Option<AttackSpec>) -> Self {
        let label = if attack.is_some() { Label::Spoof } else { Label::Bonafide };
        Self {
            utt_id: utt_id.into(),
            attack,
            label,
        }
    }
}

/// An ordered list of protocol entries with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Protocol {
    pub entries: Vec<ProtocolEntry>,
}

impl Protocol {
    pub fn new(entries: Vec<ProtocolEntry>) -> Result<Self> {
        let p = Self { entries };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::Data(format!("duplicate utterance id '{}'", e.utt_id)));
            }
            if e.attack.is_some() != (e.label == Label::Spoof) {
                return Err(Error::Data(format!(
                    "utterance '{}': attack code must be '-' exactly when bonafide",
                    e.utt_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&ProtocolEntry> {
        self.entries.iter().find(|e| e.utt_id == utt_id)
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(bad(format!(
                    "expected '<utt_id> <attack_code|-> <bonafide|spoof>', got '{line}'"
                )));
            }
            let attack = parse_attack_token(toks[1]).map_err(|e| bad(e.to_string()))?;
            let label: Label = toks[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            entries.push(ProtocolEntry {
                utt_id: toks[0].to_string(),
                attack,
                label,
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.utt_id, attack_token(e.attack), e.label));
        }
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_codes_round_trip() {
        let all = AttackSpec::all();
        let codes: Vec<String> = all.iter().map(|a| a.code()).collect();
        assert_eq!(codes, ["AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"]);
        for (i, a) in all.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(a.code().parse::<AttackSpec>().unwrap(), *a);
        }
        assert!("AD".parse::<AttackSpec>().is_err());
        assert!("-".parse::<AttackSpec>().is_err());
    }

    #[test]
    fn protocol_round_trip_and_validation() {
        let text = "u1 - bonafide\nu2 AC spoof\n\nu3 CC spoof\n";
        let p = Protocol::parse(text).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(Protocol::parse(&p.to_text()).unwrap(), p);
        assert!(matches!(Protocol::parse("u1 AA bonafide"), Err(Error::Data(_))));
        assert!(matches!(Protocol::parse("u1 - bonafide\nu1 - bonafide"), Err(Error::Data(_))));
        match Protocol::parse("u1 - bonafide\nu2 spoof") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
