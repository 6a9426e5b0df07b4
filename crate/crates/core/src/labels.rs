//! Label vocabulary shared by the parser, generator and evaluator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Three-valued ordinal stenosis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StenosisClass {
    NoStenosis = 0,
    NonSignificant = 1,
    Significant = 2,
}

impl StenosisClass {
    pub const ALL: [StenosisClass; 3] = [
        StenosisClass::NoStenosis,
        StenosisClass::NonSignificant,
        StenosisClass::Significant,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::Label { label: i, classes: 3 })
    }

    pub fn name(self) -> &'static str {
        match self {
            StenosisClass::NoStenosis => "No stenosis",
            StenosisClass::NonSignificant => "Non-Significant",
            StenosisClass::Significant => "Significant",
        }
    }
}

impl fmt::Display for StenosisClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StenosisClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "0" | "no" | "none" | "no-stenosis" | "nostenosis" => Ok(StenosisClass::NoStenosis),
            "1" | "non-significant" | "nonsignificant" | "nonsig" => Ok(StenosisClass::NonSignificant),
            "2" | "significant" | "sig" => Ok(StenosisClass::Significant),
            other => Err(Error::Argument(format!("unknown stenosis class `{other}`"))),
        }
    }
}

impl Serialize for StenosisClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for StenosisClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        StenosisClass::from_index(v as usize).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Artery {
    LAD,
    LCX,
    RCA,
}

impl Artery {
    pub const ALL: [Artery; 3] = [Artery::LAD, Artery::LCX, Artery::RCA];

    pub fn token(self) -> &'static str {
        match self {
            Artery::LAD => "LAD",
            Artery::LCX => "LCX",
            Artery::RCA => "RCA",
        }
    }
}

impl fmt::Display for Artery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Artery {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LAD" => Ok(Artery::LAD),
            "LCX" => Ok(Artery::LCX),
            "RCA" => Ok(Artery::RCA),
            _ => Err(Error::Argument(format!("unknown artery `{s}`"))),
        }
    }
}

/// Named branch (segment) of the coronary tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Section {
    Lad,
    D1,
    D2,
    D3,
    Lcx,
    PlvLcx,
    PdaLcx,
    Rca,
    Om,
    Om1,
    Om2,
    Om3,
    PlvRca,
    PdaRca,
}

impl Section {
    pub const ALL: [Section; 14] = [
        Section::Lad,
        Section::D1,
        Section::D2,
        Section::D3,
        Section::Lcx,
        Section::PlvLcx,
        Section::PdaLcx,
        Section::Rca,
        Section::Om,
        Section::Om1,
        Section::Om2,
        Section::Om3,
        Section::PlvRca,
        Section::PdaRca,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Section::Lad => "LAD",
            Section::D1 => "D-1",
            Section::D2 => "D-2",
            Section::D3 => "D-3",
            Section::Lcx => "LCX",
            Section::PlvLcx => "PLV-LCX",
            Section::PdaLcx => "PDA-LCX",
            Section::Rca => "RCA",
            Section::Om => "OM",
            Section::Om1 => "OM-1",
            Section::Om2 => "OM-2",
            Section::Om3 => "OM-3",
            Section::PlvRca => "PLV-RCA",
            Section::PdaRca => "PDA-RCA",
        }
    }

    /// Parent artery. Obtuse marginal branches are filed under RCA, as in
    /// the dataset statistics table this vocabulary mirrors.
    pub fn artery(self) -> Artery {
        match self {
            Section::Lad | Section::D1 | Section::D2 | Section::D3 => Artery::LAD,
            Section::Lcx | Section::PlvLcx | Section::PdaLcx => Artery::LCX,
            _ => Artery::RCA,
        }
    }

    pub fn branch_id(self) -> BranchId {
        BranchId {
            artery: self.artery(),
            section: self,
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Section {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Section::ALL
            .into_iter()
            .find(|sec| sec.token() == up)
            .ok_or_else(|| Error::Argument(format!("unknown branch token `{s}`")))
    }
}

impl Serialize for Section {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for Section {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BranchId {
    pub artery: Artery,
    pub section: Section,
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.artery, self.section)
    }
}
