//! Synthetic MEGACAM exposures, header-only, for demos and tests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fits::HeaderBuilder;

pub const RUN_IDS: [&str; 4] = ["09AQ05", "09AQ06", "09BQ01", "10AQ02"];
pub const FILTERS: [&str; 5] = ["u.MP9301", "g.MP9401", "r.MP9601", "i.MP9701", "z.MP9801"];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureImage {
    pub path: PathBuf,
    pub filename: String,
    pub expnum: u64,
    pub run_id: String,
    pub filter: String,
    pub object: String,
    pub date_obs: String,
    pub exptime: f64,
}

/// Field values of exposure number `expnum`. Pure function of the number.
pub fn fixture_values(expnum: u64) -> FixtureImage {
    let i = expnum as usize;
    let day = 1 + (i / 24) % 28;
    let hour = i % 24;
    FixtureImage {
        path: PathBuf::new(),
        filename: format!("{expnum:07}p.fits"),
        expnum,
        run_id: RUN_IDS[i % RUN_IDS.len()].to_string(),
        filter: FILTERS[(i / RUN_IDS.len()) % FILTERS.len()].to_string(),
        object: format!("CFHTLS-W3-{}", i % 9),
        date_obs: format!("2009-05-{day:02}T{hour:02}:{:02}:00", i % 60),
        exptime: 60.0 + (i % 5) as f64 * 30.0,
    }
}

pub fn header_for(img: &FixtureImage) -> HeaderBuilder {
    HeaderBuilder::primary()
        .integer("EXPNUM", img.expnum as i64)
        .string("RUNID", &img.run_id)
        .string("FILTER", &img.filter)
        .string("OBJECT", &img.object)
        .string("DATE-OBS", &img.date_obs)
        .real("EXPTIME", img.exptime)
}

/// Writes `count` files numbered from `first_expnum` into `dir`.
pub fn write_megacam_set(dir: &Path, first_expnum: u64, count: usize) -> Result<Vec<FixtureImage>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count as u64)
        .map(|k| {
            let mut img = fixture_values(first_expnum + k);
            img.path = dir.join(&img.filename);
            let bytes = header_for(&img)
                .to_bytes()
                .map_err(|e| Error::Internal(format!("fixture header: {e}")))?;
            fs::write(&img.path, bytes).map_err(|e| Error::io(&img.path, e))?;
            Ok(img)
        })
        .collect()
}
