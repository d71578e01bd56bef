//! Irrep layouts and the SO(3) / SO(2) feature containers.
//!
//! Storage is a flat `Vec<f64>`: blocks in ascending index order, each block
//! row-major with shape `(multiplicity, width)`. SO(3) blocks list components
//! `m = -l..=l`; SO(2) blocks with `m > 0` store the pair `(x_{-m}, x_{+m})`,
//! which is read as the complex number `x_{+m} + i x_{-m}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default ceiling on the degree / order a container may carry.
pub const DEFAULT_INDEX_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    So3,
    So2,
}

impl Group {
    /// Width of one irrep copy at `index` (degree for SO(3), order for SO(2)).
    #[inline]
    pub fn width(self, index: usize) -> usize {
        match self {
            Group::So3 => 2 * index + 1,
            Group::So2 => {
                if index == 0 {
                    1
                } else {
                    2
                }
            }
        }
    }

    fn suffix(self) -> char {
        match self {
            Group::So3 => 'e',
            Group::So2 => 'm',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IrrepsLayout {
    group: Group,
    entries: Vec<(usize, usize)>,
}

impl IrrepsLayout {
    /// Builds a layout from `(index, multiplicity)` pairs in any order.
    pub fn new(group: Group, mut entries: Vec<(usize, usize)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateIndex(w[0].0));
            }
        }
        if let Some(&(i, _)) = entries.iter().find(|e| e.1 == 0) {
            return Err(Error::MalformedToken(format!("0x{i}{}", group.suffix())));
        }
        Ok(Self { group, entries })
    }

    /// `mult` copies of every index `0..=max`.
    pub fn uniform(group: Group, max: usize, mult: usize) -> Self {
        Self::new(group, (0..=max).map(|i| (i, mult)).collect()).expect("valid uniform layout")
    }

    pub fn parse(spec: &str) -> Result<Self> {
        let mut group = None;
        let mut entries = Vec::new();
        for raw in spec.split('+') {
            let tok = raw.trim();
            let bad = || Error::MalformedToken(tok.to_string());
            let (mult, rest) = tok.split_once('x').ok_or_else(bad)?;
            let suffix = rest.chars().last().ok_or_else(bad)?;
            let g = match suffix {
                'e' => Group::So3,
                'm' => Group::So2,
                _ => return Err(bad()),
            };
            let digits = &rest[..rest.len() - 1];
            let valid_num = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
            if !valid_num(mult) || !valid_num(digits) {
                return Err(bad());
            }
            let mult: usize = mult.parse().map_err(|_| bad())?;
            let index: usize = digits.parse().map_err(|_| bad())?;
            if mult == 0 {
                return Err(bad());
            }
            match group {
                None => group = Some(g),
                Some(prev) if prev != g => return Err(Error::MixedSuffix),
                _ => {}
            }
            entries.push((index, mult));
        }
        let group = group.ok_or_else(|| Error::MalformedToken(spec.to_string()))?;
        Self::new(group, entries)
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn max_index(&self) -> usize {
        self.entries.last().map_or(0, |e| e.0)
    }

    pub fn mult(&self, index: usize) -> usize {
        self.entries
            .iter()
            .find(|e| e.0 == index)
            .map_or(0, |e| e.1)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.mult(index) > 0
    }

    /// Total number of scalars.
    pub fn dim(&self) -> usize {
        self.entries
            .iter()
            .map(|&(i, m)| m * self.group.width(i))
            .sum()
    }

    /// Total number of channels summed over all indices.
    pub fn num_channels(&self) -> usize {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Offset of the block for `index`, if present.
    pub fn offset(&self, index: usize) -> Option<usize> {
        let mut off = 0;
        for &(i, m) in &self.entries {
            if i == index {
                return Some(off);
            }
            off += m * self.group.width(i);
        }
        None
    }

    /// `(index, mult, offset)` for every block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.entries.iter().map(move |&(i, m)| {
            let o = off;
            off += m * self.group.width(i);
            (i, m, o)
        })
    }

    /// The SO(2) layout produced by rotating this SO(3) layout into a local
    /// frame: order `m` carries the channels of every degree `l >= m`.
    pub fn to_local_layout(&self) -> Result<IrrepsLayout> {
        if self.group != Group::So3 {
            return Err(Error::LayoutMismatch("expected an SO(3) layout".into()));
        }
        let entries = (0..=self.max_index())
            .map(|m| {
                let c: usize = self.entries.iter().filter(|e| e.0 >= m).map(|e| e.1).sum();
                (m, c)
            })
            .filter(|e| e.1 > 0)
            .collect();
        IrrepsLayout::new(Group::So2, entries)
    }
}

impl fmt::Display for IrrepsLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.group.suffix();
        for (k, (i, m)) in self.entries.iter().enumerate() {
            if k > 0 {
                f.write_str("+")?;
            }
            write!(f, "{m}x{i}{s}")?;
        }
        Ok(())
    }
}

impl FromStr for IrrepsLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for IrrepsLayout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IrrepsLayout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct FeaturesWire {
    layout: IrrepsLayout,
    data: Vec<Vec<Vec<f64>>>,
}

macro_rules! feature_type {
    ($name:ident, $group:expr) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            layout: IrrepsLayout,
            data: Vec<f64>,
        }

        impl $name {
            pub fn zeros(layout: &IrrepsLayout) -> Result<Self> {
                Self::check_group(layout)?;
                Ok(Self {
                    layout: layout.clone(),
                    data: vec![0.0; layout.dim()],
                })
            }

            pub fn from_vec(layout: &IrrepsLayout, data: Vec<f64>) -> Result<Self> {
                Self::check_group(layout)?;
                if data.len() != layout.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "layout {} needs {} values, got {}",
                        layout,
                        layout.dim(),
                        data.len()
                    )));
                }
                Ok(Self {
                    layout: layout.clone(),
                    data,
                })
            }

            fn check_group(layout: &IrrepsLayout) -> Result<()> {
                if layout.group() != $group {
                    return Err(Error::LayoutMismatch(format!(
                        "{} cannot hold layout {}",
                        stringify!($name),
                        layout
                    )));
                }
                Ok(())
            }

            pub fn layout(&self) -> &IrrepsLayout {
                &self.layout
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.data
            }

            /// Row-major `(mult, width)` block at `index`; empty if absent.
            pub fn block(&self, index: usize) -> &[f64] {
                match self.layout.offset(index) {
                    Some(o) => {
                        let n = self.layout.mult(index) * $group.width(index);
                        &self.data[o..o + n]
                    }
                    None => &[],
                }
            }

            pub fn block_mut(&mut self, index: usize) -> &mut [f64] {
                match self.layout.offset(index) {
                    Some(o) => {
                        let n = self.layout.mult(index) * $group.width(index);
                        &mut self.data[o..o + n]
                    }
                    None => &mut [],
                }
            }

            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                assert_eq!(self.layout, other.layout, "layouts differ");
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }

            pub fn max_abs(&self) -> f64 {
                self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
            }

            pub fn norm(&self) -> f64 {
                self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn scaled(&self, c: f64) -> Self {
                Self {
                    layout: self.layout.clone(),
                    data: self.data.iter().map(|v| v * c).collect(),
                }
            }

            /// `self += c * other`.
            pub fn axpy(&mut self, c: f64, other: &Self) {
                assert_eq!(self.layout, other.layout, "layouts differ");
                for (a, b) in self.data.iter_mut().zip(&other.data) {
                    *a += c * b;
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let data = self
                    .layout
                    .blocks()
                    .map(|(i, m, o)| {
                        let w = $group.width(i);
                        (0..m)
                            .map(|c| self.data[o + c * w..o + (c + 1) * w].to_vec())
                            .collect()
                    })
                    .collect();
                FeaturesWire {
                    layout: self.layout.clone(),
                    data,
                }
                .serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                use serde::de::Error as _;
                let wire = FeaturesWire::deserialize(d)?;
                let flat: Vec<f64> = wire.data.into_iter().flatten().flatten().collect();
                $name::from_vec(&wire.layout, flat).map_err(D::Error::custom)
            }
        }
    };
}

feature_type!(So3Features, Group::So3);
feature_type!(So2Features, Group::So2);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_hidden_irreps() {
        let l = IrrepsLayout::parse("256x0e+128x1e+64x2e+32x3e+16x4e").unwrap();
        assert_eq!(l.group(), Group::So3);
        assert_eq!(
            l.entries(),
            &[(0, 256), (1, 128), (2, 64), (3, 32), (4, 16)]
        );
        assert_eq!(l.dim(), 256 + 128 * 3 + 64 * 5 + 32 * 7 + 16 * 9);
    }

    #[test]
    fn minimal_layout() {
        let l = IrrepsLayout::parse("1x0e").unwrap();
        assert_eq!(l.entries(), &[(0, 1)]);
        assert_eq!(l.dim(), 1);
    }

    #[test]
    fn so2_layout_is_sorted_and_sized() {
        let l = IrrepsLayout::parse("2x1m+1x0m").unwrap();
        assert_eq!(l.group(), Group::So2);
        assert_eq!(l.entries(), &[(0, 1), (1, 2)]);
        // one scalar at m=0 plus two (x_{-1}, x_{+1}) pairs
        let by_hand = 1 + 2 + 2;
        assert_eq!(l.dim(), by_hand);
        assert_eq!(l.to_string(), "1x0m+2x1m");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            IrrepsLayout::parse("4x0e+2x0e"),
            Err(Error::DuplicateIndex(0))
        ));
        assert!(matches!(
            IrrepsLayout::parse("4x0e+2x1m"),
            Err(Error::MixedSuffix)
        ));
        for bad in ["", "x0e", "4x0", "4y0e", "4x-1e", "0x1e", "4x0e+", "ax0e", "4x1o"] {
            assert!(
                matches!(IrrepsLayout::parse(bad), Err(Error::MalformedToken(_))),
                "{bad} should be malformed"
            );
        }
    }

    #[test]
    fn local_layout_regroups_by_order() {
        let l = IrrepsLayout::parse("8x0e+8x1e+4x2e+4x3e+2x4e").unwrap();
        let local = l.to_local_layout().unwrap();
        assert_eq!(
            local.entries(),
            &[(0, 26), (1, 18), (2, 10), (3, 6), (4, 2)]
        );
        assert_eq!(local.dim(), l.dim());
    }

    #[test]
    fn features_json_shape() {
        let l = IrrepsLayout::parse("1x0e+2x1e").unwrap();
        let f = So3Features::from_vec(&l, (0..7).map(f64::from).collect()).unwrap();
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["layout"], "1x0e+2x1e");
        assert_eq!(v["data"][1][1], serde_json::json!([4.0, 5.0, 6.0]));
        let back: So3Features = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
        assert!(So2Features::zeros(&l).is_err());
    }

    fn arb_layout() -> impl Strategy<Value = IrrepsLayout> {
        (
            prop::bool::ANY,
            prop::collection::btree_map(0usize..12, 1usize..300, 1..8),
        )
            .prop_map(|(so3, m)| {
                let g = if so3 { Group::So3 } else { Group::So2 };
                IrrepsLayout::new(g, m.into_iter().collect()).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn format_parse_round_trip(l in arb_layout()) {
            let back = IrrepsLayout::parse(&l.to_string()).unwrap();
            prop_assert_eq!(back, l);
        }
    }
}
