//! The corn crop-area data of Battese, Harter and Fuller (1988): 37 sampled
//! segments in 12 Iowa counties, response hectares of corn, covariates the
//! numbers of corn and soybean pixels from LANDSAT. Area means are over all
//! segments in each county.

use crate::error::Result;
use crate::model::{read_dataset, SurveyDataset};

pub const CORN_UNITS_CSV: &str = include_str!("../../../data/corn/units.csv");
pub const CORN_UNITS_REDUCED_CSV: &str = include_str!("../../../data/corn/units_reduced.csv");
pub const CORN_AREAS_CSV: &str = include_str!("../../../data/corn/areas.csv");

/// Area id and unit id of the suspected outlier (second Hardin segment).
pub const CORN_OUTLIER: (u32, u32) = (12, 2);

pub fn corn_full() -> Result<SurveyDataset> {
    read_dataset(CORN_UNITS_CSV, CORN_AREAS_CSV)
}

/// Full data without the suspected outlier.
pub fn corn_reduced() -> Result<SurveyDataset> {
    read_dataset(CORN_UNITS_REDUCED_CSV, CORN_AREAS_CSV)
}
