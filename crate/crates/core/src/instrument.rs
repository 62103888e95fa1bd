//! Per-instrument header keyword maps and metadata extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fits::{FitsHeader, FitsValue};

const DEFAULT_PROFILES: &str = include_str!("../config/instruments.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Instrument {
    Megacam,
    Wircam,
    Vircam,
}

impl Instrument {
    pub const ALL: [Instrument; 3] = [Instrument::Megacam, Instrument::Wircam, Instrument::Vircam];

    pub fn as_str(&self) -> &'static str {
        match self {
            Instrument::Megacam => "MEGACAM",
            Instrument::Wircam => "WIRCAM",
            Instrument::Vircam => "VIRCAM",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Instrument {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown instrument {s:?}")))
    }
}

/// One header keyword per semantic field. Being a struct, every field has
/// exactly one mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordMap {
    pub run_id: String,
    pub filter: String,
    pub object: String,
    pub date_obs: String,
    pub exptime: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstrumentProfile {
    pub instrument: Instrument,
    pub keyword_map: KeywordMap,
}

/// The set of known profiles, loaded from TOML.
#[derive(Debug, Clone)]
pub struct ProfileSet(BTreeMap<Instrument, InstrumentProfile>);

impl ProfileSet {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_PROFILES).expect("shipped instrument profiles parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, KeywordMap> =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("instrument profiles: {e}")))?;
        let mut out = BTreeMap::new();
        for (name, keyword_map) in raw {
            let instrument: Instrument = name.parse()?;
            out.insert(instrument, InstrumentProfile { instrument, keyword_map });
        }
        Ok(ProfileSet(out))
    }

    pub fn get(&self, instrument: Instrument) -> Result<&InstrumentProfile> {
        self.0
            .get(&instrument)
            .ok_or_else(|| Error::InvalidArgument(format!("no profile configured for {instrument}")))
    }
}

/// Catalog fields pulled out of a header. Absent keywords stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ImageMeta {
    pub run_id: Option<String>,
    pub filter: Option<String>,
    pub object: Option<String>,
    pub date_obs: Option<DateTime<Utc>>,
    pub exptime: Option<f64>,
}

pub fn extract_image_meta(header: &FitsHeader, profile: &InstrumentProfile) -> Result<ImageMeta> {
    let map = &profile.keyword_map;
    Ok(ImageMeta {
        run_id: string_field(header, "run_id", &map.run_id)?,
        filter: string_field(header, "filter", &map.filter)?,
        object: string_field(header, "object", &map.object)?,
        date_obs: match string_field(header, "date_obs", &map.date_obs)? {
            None => None,
            Some(s) => Some(parse_date_obs(&s).ok_or_else(|| mismatch("date_obs", &map.date_obs, &s))?),
        },
        exptime: match header.value(&map.exptime) {
            None | Some(FitsValue::None) => None,
            Some(FitsValue::Integer(i)) if *i >= 0 => Some(*i as f64),
            Some(FitsValue::Real(x)) if *x >= 0.0 && x.is_finite() => Some(*x),
            Some(other) => return Err(mismatch("exptime", &map.exptime, &describe(other))),
        },
    })
}

fn string_field(header: &FitsHeader, field: &'static str, keyword: &str) -> Result<Option<String>> {
    match header.value(keyword) {
        None | Some(FitsValue::None) => Ok(None),
        Some(FitsValue::Str(s)) => Ok(Some(s.clone())),
        Some(other) => Err(mismatch(field, keyword, &describe(other))),
    }
}

fn describe(v: &FitsValue) -> String {
    format!("{} {}", v.kind(), v)
}

fn mismatch(field: &'static str, keyword: &str, found: &str) -> Error {
    Error::TypeMismatch {
        field,
        keyword: keyword.to_string(),
        found: found.to_string(),
    }
}

/// Accepts `YYYY-MM-DD` and `YYYY-MM-DDThh:mm:ss[.fff]`, optionally with a
/// trailing `Z`. Header times are UTC.
pub fn parse_date_obs(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim().trim_end_matches('Z');
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
        return Some(dt.and_utc());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::format_ts;
    use crate::fits::{parse_fits_header, HeaderBuilder};

    fn header(b: HeaderBuilder) -> FitsHeader {
        parse_fits_header(&b.to_bytes().unwrap()).unwrap()
    }

    #[test]
    fn builtin_profiles_cover_all_instruments() {
        let set = ProfileSet::builtin();
        for i in Instrument::ALL {
            assert_eq!(set.get(i).unwrap().instrument, i);
        }
        assert_eq!(set.get(Instrument::Megacam).unwrap().keyword_map.run_id, "RUNID");
    }

    #[test]
    fn megacam_run_and_filter() {
        let set = ProfileSet::builtin();
        let h = header(
            HeaderBuilder::primary()
                .string("RUNID", "09AQ05")
                .string("FILTER", "g.MP9401"),
        );
        let meta = extract_image_meta(&h, set.get(Instrument::Megacam).unwrap()).unwrap();
        assert_eq!(meta.run_id.as_deref(), Some("09AQ05"));
        assert_eq!(meta.filter.as_deref(), Some("g.MP9401"));
        assert_eq!(meta.object, None);
        assert_eq!(meta.exptime, None);
    }

    #[test]
    fn vircam_all_fields_round_trip() {
        let set = ProfileSet::builtin();
        let p = set.get(Instrument::Vircam).unwrap();
        let m = &p.keyword_map;
        let h = header(
            HeaderBuilder::primary()
                .string(&m.run_id, "179.A-2005")
                .string(&m.filter, "Ks")
                .string(&m.object, "VVV-b201")
                .string(&m.date_obs, "2010-03-14T08:12:05.250")
                .real(&m.exptime, 4.0),
        );
        let meta = extract_image_meta(&h, p).unwrap();
        assert_eq!(meta.run_id.as_deref(), Some("179.A-2005"));
        assert_eq!(meta.filter.as_deref(), Some("Ks"));
        assert_eq!(meta.object.as_deref(), Some("VVV-b201"));
        assert_eq!(format_ts(&meta.date_obs.unwrap()), "2010-03-14T08:12:05.250Z");
        assert_eq!(meta.exptime, Some(4.0));
    }

    #[test]
    fn string_exptime_is_type_mismatch() {
        let set = ProfileSet::builtin();
        let h = header(HeaderBuilder::primary().string("EXPTIME", "long"));
        let err = extract_image_meta(&h, set.get(Instrument::Megacam).unwrap()).unwrap_err();
        assert_eq!(err.code(), "TYPE_MISMATCH");
        let h = header(HeaderBuilder::primary().real("EXPTIME", -2.0));
        assert!(extract_image_meta(&h, set.get(Instrument::Megacam).unwrap()).is_err());
        let h = header(HeaderBuilder::primary().string("DATE-OBS", "yesterday"));
        assert!(extract_image_meta(&h, set.get(Instrument::Megacam).unwrap()).is_err());
    }

    #[test]
    fn date_only_and_integer_exptime() {
        let set = ProfileSet::builtin();
        let h = header(
            HeaderBuilder::primary()
                .string("DATE-OBS", "2009-09-01")
                .integer("EXPTIME", 120),
        );
        let meta = extract_image_meta(&h, set.get(Instrument::Megacam).unwrap()).unwrap();
        assert_eq!(format_ts(&meta.date_obs.unwrap()), "2009-09-01T00:00:00.000Z");
        assert_eq!(meta.exptime, Some(120.0));
    }

    #[test]
    fn profile_file_rejects_missing_field() {
        let text = "[MEGACAM]\nrun_id = \"A\"\nfilter = \"B\"\nobject = \"C\"\ndate_obs = \"D\"\n";
        assert!(ProfileSet::from_toml(text).is_err());
        let text = "[HUBBLE]\nrun_id = \"A\"\nfilter = \"B\"\nobject = \"C\"\ndate_obs = \"D\"\nexptime = \"E\"\n";
        assert!(ProfileSet::from_toml(text).is_err());
    }
}
