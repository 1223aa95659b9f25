use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::homography::Correspondence;
use crate::imu::{samples_between, ImuSample};
use crate::tracks::{FrameObservations, StereoObservation};

/// One stereo keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub frame: u32,
    pub t: f64,
    pub features: BTreeMap<u64, StereoObservation>,
}

impl Keyframe {
    pub fn from_observations(obs: &FrameObservations) -> Self {
        Self {
            frame: obs.frame,
            t: obs.t,
            features: obs.by_id(),
        }
    }
}

/// Consecutive keyframes with the IMU samples between neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeWindow {
    capacity: usize,
    keyframes: Vec<Keyframe>,
    /// `spans[k]` covers `[t_k, t_{k+1}]`.
    spans: Vec<Vec<ImuSample>>,
}

impl KeyframeWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            keyframes: Vec::new(),
            spans: Vec::new(),
        }
    }

    /// Appends a keyframe. `span` must cover the interval from the previous
    /// keyframe and is ignored for the first one.
    pub fn push(&mut self, keyframe: Keyframe, span: Vec<ImuSample>) -> Result<()> {
        if self.is_full() {
            return Err(Error::Config(format!("window is full ({} keyframes)", self.capacity)));
        }
        if let Some(last) = self.keyframes.last() {
            if !(keyframe.t > last.t) {
                return Err(Error::Stream(format!(
                    "keyframe at {} does not follow {}",
                    keyframe.t, last.t
                )));
            }
            let covers = span.first().is_some_and(|s| (s.t - last.t).abs() < 1e-9)
                && span.last().is_some_and(|s| (s.t - keyframe.t).abs() < 1e-9);
            if !covers {
                return Err(Error::Stream(format!(
                    "IMU span does not cover [{}, {}]",
                    last.t, keyframe.t
                )));
            }
            self.spans.push(span);
        }
        self.keyframes.push(keyframe);
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.keyframes.len() >= self.capacity
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn spans(&self) -> &[Vec<ImuSample>] {
        &self.spans
    }

    /// Fewest features in any keyframe.
    pub fn min_features(&self) -> usize {
        self.keyframes.iter().map(|k| k.features.len()).min().unwrap_or(0)
    }

    /// Left-image matches between keyframes `i` and `j`, in feature-id order.
    pub fn correspondences(&self, i: usize, j: usize, rig: &CameraRig) -> Vec<Correspondence> {
        let (a, b) = (&self.keyframes[i], &self.keyframes[j]);
        a.features
            .iter()
            .filter_map(|(id, oa)| {
                let ob = b.features.get(id)?;
                Some(Correspondence::new(
                    *id,
                    rig.normalize(&oa.left),
                    rig.normalize(&ob.left),
                ))
            })
            .collect()
    }
}

/// Window of up to `capacity` consecutive frames starting at `frames[start]`.
pub fn gather_window(
    frames: &[FrameObservations],
    imu: &[ImuSample],
    start: usize,
    capacity: usize,
) -> Result<KeyframeWindow> {
    let mut w = KeyframeWindow::new(capacity);
    let mut prev: Option<f64> = None;
    for f in frames.iter().skip(start).take(capacity) {
        let span = match prev {
            Some(t) => samples_between(imu, t, f.t)?,
            None => Vec::new(),
        };
        w.push(Keyframe::from_observations(f), span)?;
        prev = Some(f.t);
    }
    if w.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: w.len(),
        });
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    fn frame(k: u32, ids: &[u64]) -> FrameObservations {
        FrameObservations {
            frame: k,
            t: k as f64 * 0.05,
            features: ids
                .iter()
                .map(|&id| {
                    StereoObservation::new(id, Vector2::new(600.0 + id as f64, 400.0), Vector2::new(580.0, 400.0))
                })
                .collect(),
        }
    }

    fn imu() -> Vec<ImuSample> {
        (0..=100)
            .map(|k| ImuSample::new(k as f64 * 0.005, Vector3::zeros(), Vector3::zeros()))
            .collect()
    }

    #[test]
    fn gathers_consecutive_frames() {
        let frames: Vec<_> = (0..6).map(|k| frame(k, &[1, 2, 3, k as u64 + 10])).collect();
        let w = gather_window(&frames, &imu(), 1, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.is_full());
        assert_eq!(w.keyframes()[0].frame, 1);
        assert_eq!(w.spans().len(), 2);
        assert_eq!(w.spans()[0].len(), 11);
        assert_eq!(w.min_features(), 4);
        let rig = CameraRig::reference();
        let c = w.correspondences(0, 2, &rig);
        assert_eq!(c.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn rejects_out_of_order_keyframes() {
        let mut w = KeyframeWindow::new(4);
        w.push(Keyframe::from_observations(&frame(2, &[1])), Vec::new())
            .unwrap();
        let err = w.push(Keyframe::from_observations(&frame(1, &[1])), Vec::new());
        assert!(matches!(err, Err(Error::Stream(_))));
    }

    #[test]
    fn needs_two_keyframes() {
        let frames = vec![frame(0, &[1])];
        assert!(gather_window(&frames, &imu(), 0, 5).is_err());
    }
}
