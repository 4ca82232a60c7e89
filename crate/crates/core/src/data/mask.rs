use std::fmt;

use rand::Rng as _;

use super::Modality;
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Non-empty subset of {s, v, t} treated as available.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalityMask(u8);

impl ModalityMask {
    pub const FULL: ModalityMask = ModalityMask(0b111);

    /// The six proper-subset conditions in report order, `{t}` through `{s,t}`.
    pub const MISSING_CONDITIONS: [ModalityMask; 6] = [
        ModalityMask(0b100),
        ModalityMask(0b001),
        ModalityMask(0b010),
        ModalityMask(0b110),
        ModalityMask(0b011),
        ModalityMask(0b101),
    ];

    pub fn new(available: &[Modality]) -> Result<Self> {
        let bits = available.iter().fold(0u8, |b, m| b | (1 << m.index()));
        Self::from_bits(bits)
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits == 0 || bits > 0b111 {
            return Err(Error::arg(format!("invalid modality mask bits {bits:#b}")));
        }
        Ok(Self(bits))
    }

    pub fn single(m: Modality) -> Self {
        Self(1 << m.index())
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn is_full(self) -> bool {
        self.0 == 0b111
    }

    pub fn available(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |&m| self.contains(m))
    }

    pub fn missing(self) -> impl Iterator<Item = Modality> {
        Modality::ALL
            .into_iter()
            .filter(move |&m| !self.contains(m))
    }

    /// All seven non-empty masks.
    pub fn all_nonempty() -> impl Iterator<Item = ModalityMask> {
        (1u8..=7).map(ModalityMask)
    }

    /// Parses `s,v`, `{s,v}` or `svt` style lists.
    pub fn parse(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let mut ms = Vec::new();
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.len() > 1 && part.chars().all(|c| "svt".contains(c)) {
                for c in part.chars() {
                    ms.push(Modality::parse(&c.to_string())?);
                }
            } else {
                ms.push(Modality::parse(part)?);
            }
        }
        Self::new(&ms)
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.available().map(Modality::short).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// How training draws an availability mask per instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Uniform over all seven non-empty masks.
    Uniform7,
    /// Uniform over the six proper subsets (never full).
    Uniform6,
    Fixed(ModalityMask),
}

impl MissingPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "uniform7" => Ok(Self::Uniform7),
            "uniform6" => Ok(Self::Uniform6),
            _ => match s.strip_prefix("fixed:") {
                Some(m) => Ok(Self::Fixed(ModalityMask::parse(m)?)),
                None => Err(Error::Config(format!("unknown missing policy {s:?}"))),
            },
        }
    }
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform7 => f.write_str("uniform7"),
            Self::Uniform6 => f.write_str("uniform6"),
            Self::Fixed(m) => {
                let names: Vec<&str> = m.available().map(Modality::short).collect();
                write!(f, "fixed:{}", names.join(","))
            }
        }
    }
}

pub fn sample_missing_pattern(rng: &mut Rng, policy: MissingPolicy) -> ModalityMask {
    match policy {
        MissingPolicy::Uniform7 => ModalityMask(rng.random_range(1..=7)),
        MissingPolicy::Uniform6 => ModalityMask(rng.random_range(1..=6)),
        MissingPolicy::Fixed(m) => m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::seeded_rng;

    #[test]
    fn display_and_parse() {
        let names: Vec<String> = ModalityMask::MISSING_CONDITIONS
            .iter()
            .map(|m| m.to_string())
            .collect();
        assert_eq!(names, ["{t}", "{s}", "{v}", "{v,t}", "{s,v}", "{s,t}"]);
        assert_eq!(ModalityMask::FULL.to_string(), "{s,v,t}");
        assert_eq!(
            ModalityMask::parse("{s,v}").unwrap(),
            ModalityMask::parse("sv").unwrap()
        );
        assert!(ModalityMask::parse("{}").is_err());
        let p = MissingPolicy::parse("fixed:s,v").unwrap();
        assert_eq!(MissingPolicy::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn fixed_policy_is_constant() {
        let mut rng = seeded_rng(0);
        let m = ModalityMask::parse("s,v").unwrap();
        for _ in 0..100 {
            assert_eq!(sample_missing_pattern(&mut rng, MissingPolicy::Fixed(m)), m);
        }
    }

    #[test]
    fn uniform7_frequencies() {
        let mut rng = seeded_rng(1);
        let mut counts = [0usize; 8];
        let n = 70_000;
        for _ in 0..n {
            counts[sample_missing_pattern(&mut rng, MissingPolicy::Uniform7).bits() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 7.0).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn uniform6_never_full() {
        let mut rng = seeded_rng(2);
        let mut seen = [false; 8];
        for _ in 0..10_000 {
            let m = sample_missing_pattern(&mut rng, MissingPolicy::Uniform6);
            assert!(!m.is_full());
            seen[m.bits() as usize] = true;
        }
        assert!(seen[1..7].iter().all(|&s| s));
    }
}
