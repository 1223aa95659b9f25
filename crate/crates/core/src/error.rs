use std::fmt;

use thiserror::Error;

use crate::geometry::Frame;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage names, used to label failures of `run_initialization`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Stationarity,
    Propagation,
    Estimation,
    Decomposition,
    DepthFilter,
    Selection,
    Triangulation,
    Pnp,
    Scale,
    Velocity,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Stationarity => "stationarity",
            Stage::Propagation => "propagation",
            Stage::Estimation => "estimation",
            Stage::Decomposition => "decomposition",
            Stage::DepthFilter => "depth-filter",
            Stage::Selection => "selection",
            Stage::Triangulation => "triangulation",
            Stage::Pnp => "pnp",
            Stage::Scale => "scale",
            Stage::Velocity => "velocity",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: expected {expected}, found {found}")]
    LabeledFrame { expected: Frame, found: Frame },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),
    #[error("invalid plane: distance must be positive, got {0}")]
    InvalidPlane(f64),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("robust estimation found no consensus set")]
    DegenerateEstimation,
    #[error("homography is numerically rank deficient")]
    DegenerateHomography,
    #[error("all decomposition candidates were rejected by the depth test")]
    InconsistentData,
    #[error("sample stream error: {0}")]
    Stream(String),
    #[error("no candidate solution to select from")]
    NoSolution,
    #[error("invalid disparity {0} px")]
    InvalidDisparity(f64),
    #[error("pnp found no consensus pose")]
    DegeneratePnp,
    #[error("translation norm {0:e} is too small; scale is unobservable")]
    DegenerateTranslation(f64),
    #[error("recovered scale {0} is not positive")]
    BackwardsScale(f64),
    #[error("preset height not reached (highest {0:.3} m)")]
    GateNotReached(f64),
    #[error("no estimate aligns with the ground truth: {0}")]
    Alignment(String),
    #[error("homography maps the point to the horizon (denominator {0:e})")]
    HorizonSingularity(f64),
    #[error("feature depth {0:e} is too close to zero")]
    ZeroDepth(f64),
    #[error("velocity is unobservable: Jacobian rank {0} < 3")]
    UnobservableVelocity(usize),
    #[error("time interval must be positive, got {0}")]
    Time(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The pipeline stage this error was raised in, if it was labeled.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
