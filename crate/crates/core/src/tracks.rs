//! Stereo feature observations grouped by camera frame.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One feature seen in the left and right image of a rectified pair, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoObservation {
    pub id: u64,
    pub left: Vector2<f64>,
    pub right: Vector2<f64>,
}

impl StereoObservation {
    pub fn new(id: u64, left: Vector2<f64>, right: Vector2<f64>) -> Self {
        Self { id, left, right }
    }

    /// Horizontal disparity `u_L - u_R`, pixels.
    pub fn disparity(&self) -> f64 {
        self.left.x - self.right.x
    }
}

/// All observations of one stereo frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservations {
    pub frame: u32,
    pub t: f64,
    pub features: Vec<StereoObservation>,
}

impl FrameObservations {
    pub fn by_id(&self) -> BTreeMap<u64, StereoObservation> {
        self.features.iter().map(|o| (o.id, *o)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    frame: u32,
    t: f64,
    feature_id: u64,
    #[serde(rename = "uL")]
    u_l: f64,
    #[serde(rename = "vL")]
    v_l: f64,
    #[serde(rename = "uR")]
    u_r: f64,
    #[serde(rename = "vR")]
    v_r: f64,
}

/// Writes `frame,t,feature_id,uL,vL,uR,vR` rows.
pub fn write_features_csv<W: Write>(writer: W, frames: &[FrameObservations]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for f in frames {
        for o in &f.features {
            wtr.serialize(FeatureRow {
                frame: f.frame,
                t: f.t,
                feature_id: o.id,
                u_l: o.left.x,
                v_l: o.left.y,
                u_r: o.right.x,
                v_r: o.right.y,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a features file, grouping rows by frame in ascending order.
pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<FrameObservations>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut frames: BTreeMap<u32, FrameObservations> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: FeatureRow = row?;
        frames
            .entry(r.frame)
            .or_insert_with(|| FrameObservations {
                frame: r.frame,
                t: r.t,
                features: Vec::new(),
            })
            .features
            .push(StereoObservation::new(
                r.feature_id,
                Vector2::new(r.u_l, r.v_l),
                Vector2::new(r.u_r, r.v_r),
            ));
    }
    Ok(frames.into_values().collect())
}
