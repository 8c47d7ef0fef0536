//! OpenFlow 1.0 header space.
//!
//! A [`Header`] is a point in the 12-field match space. Every field carries
//! its own bit width and all arithmetic on a field is modulo `2^width`, so
//! translating a header by a [`HeaderDelta`] is always invertible.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const FIELD_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub width: u32,
}

/// The canonical field list, in match-structure order.
pub const FIELDS: [FieldSpec; FIELD_COUNT] = [
    FieldSpec { name: "in_port", width: 16 },
    FieldSpec { name: "dl_src", width: 48 },
    FieldSpec { name: "dl_dst", width: 48 },
    FieldSpec { name: "dl_type", width: 16 },
    FieldSpec { name: "dl_vlan", width: 12 },
    FieldSpec { name: "dl_vlan_pcp", width: 3 },
    FieldSpec { name: "nw_src", width: 32 },
    FieldSpec { name: "nw_dst", width: 32 },
    FieldSpec { name: "nw_proto", width: 8 },
    FieldSpec { name: "nw_tos", width: 6 },
    FieldSpec { name: "tp_src", width: 16 },
    FieldSpec { name: "tp_dst", width: 16 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    InPort,
    DlSrc,
    DlDst,
    DlType,
    DlVlan,
    DlVlanPcp,
    NwSrc,
    NwDst,
    NwProto,
    NwTos,
    TpSrc,
    TpDst,
}

impl Field {
    pub const ALL: [Field; FIELD_COUNT] = [
        Field::InPort,
        Field::DlSrc,
        Field::DlDst,
        Field::DlType,
        Field::DlVlan,
        Field::DlVlanPcp,
        Field::NwSrc,
        Field::NwDst,
        Field::NwProto,
        Field::NwTos,
        Field::TpSrc,
        Field::TpDst,
    ];

    /// Fields an OpenFlow 1.0 `OFPAT_SET_*` action can rewrite.
    pub const OF10_MODIFIABLE: [Field; 9] = [
        Field::DlSrc,
        Field::DlDst,
        Field::DlVlan,
        Field::DlVlanPcp,
        Field::NwSrc,
        Field::NwDst,
        Field::NwTos,
        Field::TpSrc,
        Field::TpDst,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Field> {
        Field::ALL.get(index).copied().ok_or(Error::IndexOutOfRange { index, len: FIELD_COUNT })
    }

    pub fn spec(self) -> FieldSpec {
        FIELDS[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn width(self) -> u32 {
        self.spec().width
    }

    pub fn from_name(name: &str) -> Result<Field> {
        FIELDS
            .iter()
            .position(|f| f.name == name)
            .map(|i| Field::ALL[i])
            .ok_or_else(|| Error::UnknownField(name.to_string()))
    }

    fn check(self, value: u64) -> Result<u64> {
        check_width(self.name(), self.width(), value)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Field {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Field {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Field::from_name(&name).map_err(D::Error::custom)
    }
}

/// All-ones mask for a field of `width` bits.
pub fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn check_width(name: &'static str, width: u32, value: u64) -> Result<u64> {
    if value & !width_mask(width) != 0 {
        return Err(Error::WidthOverflow { field: name, width, value });
    }
    Ok(value)
}

/// Translation amount that moves `old` onto `new` in a `width`-bit field:
/// `(new - old) mod 2^width`.
pub fn field_delta(old: u64, new: u64, width: u32) -> Result<u64> {
    if width == 0 || width > 64 {
        return Err(Error::WidthOverflow { field: "<width>", width, value: 0 });
    }
    check_width("<old>", width, old)?;
    check_width("<new>", width, new)?;
    Ok(new.wrapping_sub(old) & width_mask(width))
}

/// `(value + delta) mod 2^width`.
pub fn field_add(value: u64, delta: u64, width: u32) -> u64 {
    value.wrapping_add(delta) & width_mask(width)
}

fn validate(values: &[u64]) -> Result<[u64; FIELD_COUNT]> {
    if values.len() != FIELD_COUNT {
        return Err(Error::ArityMismatch { expected: FIELD_COUNT, got: values.len() });
    }
    let mut out = [0u64; FIELD_COUNT];
    for (i, (&v, field)) in values.iter().zip(Field::ALL).enumerate() {
        out[i] = field.check(v)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Header([u64; FIELD_COUNT]);

impl Header {
    pub fn new(values: &[u64]) -> Result<Header> {
        validate(values).map(Header)
    }

    pub fn zero() -> Header {
        Header([0; FIELD_COUNT])
    }

    pub fn get(&self, field: Field) -> u64 {
        self.0[field.index()]
    }

    pub fn with(mut self, field: Field, value: u64) -> Result<Header> {
        self.0[field.index()] = field.check(value)?;
        Ok(self)
    }

    pub fn values(&self) -> &[u64; FIELD_COUNT] {
        &self.0
    }

    pub fn translate(&self, delta: &HeaderDelta) -> Header {
        let mut out = self.0;
        for field in Field::ALL {
            let i = field.index();
            out[i] = field_add(out[i], delta.0[i], field.width());
        }
        Header(out)
    }

    /// `SRC(h)`: the network source address.
    pub fn src(&self) -> u64 {
        self.get(Field::NwSrc)
    }

    /// `DEST(h)`: the network destination address.
    pub fn dest(&self) -> u64 {
        self.get(Field::NwDst)
    }
}

pub fn make_header(values: &[u64]) -> Result<Header> {
    Header::new(values)
}

pub fn translate_header(h: &Header, d: &HeaderDelta) -> Header {
    h.translate(d)
}

pub fn src_of(h: &Header) -> u64 {
    h.src()
}

pub fn dest_of(h: &Header) -> u64 {
    h.dest()
}

/// Per-field translation amounts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HeaderDelta([u64; FIELD_COUNT]);

impl HeaderDelta {
    pub fn new(values: &[u64]) -> Result<HeaderDelta> {
        validate(values).map(HeaderDelta)
    }

    pub fn zero() -> HeaderDelta {
        HeaderDelta([0; FIELD_COUNT])
    }

    pub fn single(field: Field, delta: u64) -> Result<HeaderDelta> {
        let mut d = HeaderDelta::zero();
        d.0[field.index()] = field.check(delta)?;
        Ok(d)
    }

    pub fn get(&self, field: Field) -> u64 {
        self.0[field.index()]
    }

    pub fn values(&self) -> &[u64; FIELD_COUNT] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    /// Per-field modular sum; translating by the result equals translating
    /// by `self` then by `other`.
    pub fn add(&self, other: &HeaderDelta) -> HeaderDelta {
        let mut out = self.0;
        for field in Field::ALL {
            let i = field.index();
            out[i] = field_add(out[i], other.0[i], field.width());
        }
        HeaderDelta(out)
    }

    pub fn negate(&self) -> HeaderDelta {
        let mut out = self.0;
        for field in Field::ALL {
            let i = field.index();
            out[i] = 0u64.wrapping_sub(out[i]) & width_mask(field.width());
        }
        HeaderDelta(out)
    }

    /// Delta that rewrites `from` into `to`.
    pub fn between(from: &Header, to: &Header) -> HeaderDelta {
        let mut out = [0u64; FIELD_COUNT];
        for field in Field::ALL {
            let i = field.index();
            out[i] = to.0[i].wrapping_sub(from.0[i]) & width_mask(field.width());
        }
        HeaderDelta(out)
    }
}

/// Per-field exact-or-wildcard match. `None` is a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MatchPattern([Option<u64>; FIELD_COUNT]);

impl MatchPattern {
    pub fn wildcard() -> MatchPattern {
        MatchPattern([None; FIELD_COUNT])
    }

    /// Pattern matching exactly `h` on every field.
    pub fn exact(h: &Header) -> MatchPattern {
        MatchPattern(h.0.map(Some))
    }

    pub fn with_exact(mut self, field: Field, value: u64) -> Result<MatchPattern> {
        self.0[field.index()] = Some(field.check(value)?);
        Ok(self)
    }

    pub fn with_wildcard(mut self, field: Field) -> MatchPattern {
        self.0[field.index()] = None;
        self
    }

    pub fn get(&self, field: Field) -> Option<u64> {
        self.0[field.index()]
    }

    pub fn matches(&self, h: &Header) -> bool {
        self.0.iter().zip(h.0.iter()).all(|(p, v)| p.is_none_or(|p| p == *v))
    }
}

pub fn matches(p: &MatchPattern, h: &Header) -> bool {
    p.matches(h)
}

// Scenario-file forms: objects keyed by field name. Omitted header fields are
// zero; omitted pattern fields are wildcards.

fn read_fields<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[Option<u64>; FIELD_COUNT], D::Error> {
    let map = BTreeMap::<String, u64>::deserialize(d)?;
    let mut out = [None; FIELD_COUNT];
    for (name, value) in map {
        let field = Field::from_name(&name).map_err(D::Error::custom)?;
        out[field.index()] = Some(field.check(value).map_err(D::Error::custom)?);
    }
    Ok(out)
}

impl Serialize for Header {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(FIELD_COUNT))?;
        for field in Field::ALL {
            map.serialize_entry(field.name(), &self.get(field))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Header {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Header(read_fields(d)?.map(|v| v.unwrap_or(0))))
    }
}

impl Serialize for HeaderDelta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nonzero: Vec<_> = Field::ALL.iter().filter(|f| self.get(**f) != 0).collect();
        let mut map = s.serialize_map(Some(nonzero.len()))?;
        for field in nonzero {
            map.serialize_entry(field.name(), &self.get(*field))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for HeaderDelta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(HeaderDelta(read_fields(d)?.map(|v| v.unwrap_or(0))))
    }
}

impl Serialize for MatchPattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let exact: Vec<_> = Field::ALL.iter().filter_map(|f| self.get(*f).map(|v| (f, v))).collect();
        let mut map = s.serialize_map(Some(exact.len()))?;
        for (field, value) in exact {
            map.serialize_entry(field.name(), &value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for MatchPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        read_fields(d).map(MatchPattern)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header_with(field: Field, value: u64) -> Header {
        Header::zero().with(field, value).unwrap()
    }

    #[test]
    fn canonical_field_list() {
        let widths: Vec<u32> = FIELDS.iter().map(|f| f.width).collect();
        assert_eq!(widths, [16, 48, 48, 16, 12, 3, 32, 32, 8, 6, 16, 16]);
        for (i, f) in Field::ALL.iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(Field::from_name(f.name()).unwrap(), *f);
        }
    }

    #[test]
    fn make_header_cases() {
        assert_eq!(make_header(&[0; 12]).unwrap(), Header::zero());

        let mut vals = [0u64; 12];
        vals[Field::DlVlanPcp.index()] = 8;
        assert!(matches!(make_header(&vals), Err(Error::WidthOverflow { field: "dl_vlan_pcp", width: 3, value: 8 })));

        assert_eq!(make_header(&[0; 11]), Err(Error::ArityMismatch { expected: 12, got: 11 }));
    }

    #[test]
    fn field_delta_cases() {
        assert_eq!(field_delta(5, 5, 8).unwrap(), 0);
        // (3 - 5) mod 256
        assert_eq!(field_delta(5, 3, 8).unwrap(), 254);
        assert_eq!(field_delta(0, (1 << 48) - 1, 48).unwrap(), (1 << 48) - 1);
        assert!(field_delta(256, 0, 8).is_err());
        assert!(field_delta(0, 256, 8).is_err());
        assert_eq!(field_delta(1, 0, 64).unwrap(), u64::MAX);
    }

    #[test]
    fn translate_cases() {
        let h = header_with(Field::NwSrc, 0xdead_beef);
        assert_eq!(h.translate(&HeaderDelta::zero()), h);

        let d = HeaderDelta::single(Field::NwSrc, 17).unwrap();
        assert_eq!(h.translate(&d).translate(&d.negate()), h);

        let h = header_with(Field::NwTos, 63);
        let d = HeaderDelta::single(Field::NwTos, 1).unwrap();
        assert_eq!(h.translate(&d).get(Field::NwTos), 0);
    }

    #[test]
    fn match_cases() {
        let h = header_with(Field::NwSrc, 7);
        assert!(MatchPattern::wildcard().matches(&h));
        assert!(MatchPattern::exact(&h).matches(&h));
        let p = MatchPattern::wildcard().with_exact(Field::NwSrc, 8).unwrap();
        assert!(!p.matches(&h));
    }

    #[test]
    fn projections() {
        assert_eq!(src_of(&header_with(Field::NwSrc, 42)), 42);
        assert_eq!(dest_of(&header_with(Field::NwDst, 9)), 9);
        assert_eq!(src_of(&Header::zero()), 0);
    }

    #[test]
    fn serde_defaults() {
        let h: Header = serde_json::from_str(r#"{"nw_src": 5}"#).unwrap();
        assert_eq!(h, header_with(Field::NwSrc, 5));
        let p: MatchPattern = serde_json::from_str(r#"{"tp_dst": 80}"#).unwrap();
        assert_eq!(p.get(Field::TpDst), Some(80));
        assert_eq!(p.get(Field::NwSrc), None);
        assert!(serde_json::from_str::<Header>(r#"{"bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<Header>(r#"{"nw_tos": 64}"#).is_err());
        let back: MatchPattern = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    fn arb_header() -> impl Strategy<Value = Header> {
        Field::ALL.map(|f| 0..=width_mask(f.width())).to_vec().prop_map(|v| Header::new(&v).unwrap())
    }

    fn arb_delta() -> impl Strategy<Value = HeaderDelta> {
        arb_header().prop_map(|h| HeaderDelta::new(h.values()).unwrap())
    }

    proptest! {
        #[test]
        fn translation_composes(h in arb_header(), d1 in arb_delta(), d2 in arb_delta()) {
            prop_assert_eq!(h.translate(&d1).translate(&d2), h.translate(&d1.add(&d2)));
        }

        #[test]
        fn zero_translation_is_identity(h in arb_header()) {
            prop_assert_eq!(h.translate(&HeaderDelta::zero()), h);
        }

        #[test]
        fn between_lands_on_target(a in arb_header(), b in arb_header()) {
            prop_assert_eq!(a.translate(&HeaderDelta::between(&a, &b)), b);
        }

        #[test]
        fn exact_self_pattern_matches(h in arb_header()) {
            prop_assert!(MatchPattern::exact(&h).matches(&h));
        }
    }
}
