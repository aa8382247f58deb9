//! Fixed patch layout of one hand's 1062 tactile readings.
//!
//! Raw order is thumb, index, middle, ring, pinky, palm. Each finger is split
//! into rectangular patches stored row-major and back to back:
//!
//! | region | patches (rows x cols)                          | size |
//! |--------|------------------------------------------------|------|
//! | thumb  | tip 5x7, top 5x10, mid 5x5, palm-facing 10x10  | 210  |
//! | finger | tip 5x7, top 5x10, palm-facing 10x10           | 185  |
//! | palm   | palm 8x14                                      | 112  |

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::schema::TACTILE_PER_HAND;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
    Palm,
}

impl Region {
    pub const ALL: [Region; 6] =
        [Region::Thumb, Region::Index, Region::Middle, Region::Ring, Region::Pinky, Region::Palm];

    pub fn position(self) -> usize {
        Region::ALL.iter().position(|&r| r == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Thumb => "thumb",
            Region::Index => "index",
            Region::Middle => "middle",
            Region::Ring => "ring",
            Region::Pinky => "pinky",
            Region::Palm => "palm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn position(self) -> usize {
        match self {
            Hand::Left => 0,
            Hand::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }
}

/// One region of one hand, e.g. `right.middle`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionId {
    pub hand: Hand,
    pub region: Region,
}

impl RegionId {
    pub const COUNT: usize = 12;

    /// Slot in the 12-entry latent arrangement: left regions then right.
    pub fn slot(self) -> usize {
        self.hand.position() * Region::ALL.len() + self.region.position()
    }

    pub fn from_slot(slot: usize) -> Self {
        Self { hand: Hand::BOTH[slot / Region::ALL.len()], region: Region::ALL[slot % Region::ALL.len()] }
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.hand.name(), self.region.name())
    }
}

impl FromStr for RegionId {
    type Err = HtdError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HtdError::Config(format!("region selector {s:?} is not <left|right>.<region>"));
        let (h, r) = s.split_once('.').ok_or_else(bad)?;
        let hand = Hand::BOTH.into_iter().find(|x| x.name() == h).ok_or_else(bad)?;
        let region = Region::ALL.into_iter().find(|x| x.name() == r).ok_or_else(bad)?;
        Ok(Self { hand, region })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub region: Region,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLayout {
    pub patches: Vec<Patch>,
}

impl Default for RegionLayout {
    fn default() -> Self {
        let mut patches = Vec::with_capacity(17);
        let mut offset = 0;
        let mut push = |region: Region, name: &str, rows: usize, cols: usize| {
            patches.push(Patch { region, name: name.into(), rows, cols, offset });
            offset += rows * cols;
        };
        for region in Region::ALL {
            match region {
                Region::Palm => push(region, "palm", 8, 14),
                _ => {
                    push(region, "tip", 5, 7);
                    push(region, "top", 5, 10);
                    if region == Region::Thumb {
                        push(region, "mid", 5, 5);
                    }
                    push(region, "palm_facing", 10, 10);
                }
            }
        }
        Self { patches }
    }
}

impl RegionLayout {
    /// Checks contiguity, region order and the 1062 total.
    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        let mut last_region = 0;
        for p in &self.patches {
            if p.offset != offset || p.is_empty() {
                return Err(HtdError::Schema(format!("patch {}.{} breaks contiguity", p.region.name(), p.name)));
            }
            if p.region.position() < last_region {
                return Err(HtdError::Schema("patches out of region order".into()));
            }
            last_region = p.region.position();
            offset += p.len();
        }
        if offset != TACTILE_PER_HAND {
            return Err(HtdError::Schema(format!("tactile layout covers {offset} entries, expected {TACTILE_PER_HAND}")));
        }
        for r in Region::ALL {
            if self.patches_of(r).next().is_none() {
                return Err(HtdError::Schema(format!("region {} has no patch", r.name())));
            }
        }
        Ok(())
    }

    pub fn patches_of(&self, region: Region) -> impl Iterator<Item = &Patch> {
        self.patches.iter().filter(move |p| p.region == region)
    }

    pub fn region_range(&self, region: Region) -> Range<usize> {
        let mut it = self.patches_of(region);
        let first = it.next().expect("region has patches");
        let end = it.last().map_or(first.range().end, |p| p.range().end);
        first.offset..end
    }

    pub fn patch(&self, region: Region, name: &str) -> Option<&Patch> {
        self.patches_of(region).find(|p| p.name == name)
    }

    /// Splits a raw hand vector into per-region lists of row-major patch maps.
    pub fn decompose<'a>(&self, raw: &'a [f64]) -> Result<Vec<Vec<&'a [f64]>>> {
        if raw.len() != TACTILE_PER_HAND {
            return Err(HtdError::Shape(format!("hand tactile has {} entries, expected {TACTILE_PER_HAND}", raw.len())));
        }
        Ok(Region::ALL.iter().map(|&r| self.patches_of(r).map(|p| &raw[p.range()]).collect()).collect())
    }

    /// Inverse of [`RegionLayout::decompose`].
    pub fn reassemble(&self, groups: &[Vec<&[f64]>]) -> Result<Vec<f64>> {
        let mut raw = vec![0.0; TACTILE_PER_HAND];
        if groups.len() != Region::ALL.len() {
            return Err(HtdError::Shape(format!("expected 6 region groups, got {}", groups.len())));
        }
        for (&region, group) in Region::ALL.iter().zip(groups) {
            let patches: Vec<&Patch> = self.patches_of(region).collect();
            if patches.len() != group.len() {
                return Err(HtdError::Shape(format!("region {} expects {} patches", region.name(), patches.len())));
            }
            for (p, data) in patches.iter().zip(group) {
                if data.len() != p.len() {
                    return Err(HtdError::Shape(format!(
                        "patch {}.{} expects {}x{}",
                        region.name(),
                        p.name,
                        p.rows,
                        p.cols
                    )));
                }
                raw[p.range()].copy_from_slice(data);
            }
        }
        Ok(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_sizes() {
        let l = RegionLayout::default();
        l.validate().unwrap();
        assert_eq!(l.patches.len(), 17);
        let sizes: Vec<usize> = Region::ALL.iter().map(|&r| l.region_range(r).len()).collect();
        assert_eq!(sizes, vec![210, 185, 185, 185, 185, 112]);
    }

    #[test]
    fn selector_round_trip() {
        for slot in 0..RegionId::COUNT {
            let id = RegionId::from_slot(slot);
            assert_eq!(id.slot(), slot);
            assert_eq!(id.to_string().parse::<RegionId>().unwrap(), id);
        }
        assert!("right.elbow".parse::<RegionId>().is_err());
        assert_eq!("right.middle".parse::<RegionId>().unwrap().slot(), 8);
    }

    #[test]
    fn decompose_rejects_wrong_length() {
        assert!(RegionLayout::default().decompose(&[0.0; 1000]).is_err());
    }
}
