use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named ground textures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenePreset {
    Helipad,
    Asphalt,
    Lawn,
}

impl ScenePreset {
    /// Out-of-plane standard deviation, m.
    pub fn roughness(self) -> f64 {
        match self {
            Self::Helipad => 0.0,
            Self::Asphalt => 0.01,
            Self::Lawn => 0.05,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Helipad => "helipad",
            Self::Asphalt => "asphalt",
            Self::Lawn => "lawn",
        }
    }
}

impl std::str::FromStr for ScenePreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "helipad" => Ok(Self::Helipad),
            "asphalt" => Ok(Self::Asphalt),
            "lawn" => Ok(Self::Lawn),
            other => Err(format!("unknown scene '{other}' (expected helipad, asphalt or lawn)")),
        }
    }
}

impl std::fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A simple polygon in world `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    /// Even-odd ray casting test.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len().wrapping_sub(1);
        for i in 0..v.len() {
            let (xi, yi) = (v[i][0], v[i][1]);
            let (xj, yj) = (v[j][0], v[j][1]);
            if (yi > p.y) != (yj > p.y) && p.x < (xj - xi) * (p.y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub preset: ScenePreset,
    pub feature_count: usize,
    /// Side lengths of the textured area, m.
    pub extent: [f64; 2],
    /// Centre of the textured area in world `(x, y)`, m.
    pub center: [f64; 2],
    /// Out-of-plane standard deviation, m.
    pub roughness: f64,
    /// World `z` of the ground plane (NED, so positive is below the origin).
    pub ground_z: f64,
    /// Regions without texture.
    pub dropout: Vec<Polygon>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::preset(ScenePreset::Helipad)
    }
}

impl SceneConfig {
    pub fn preset(preset: ScenePreset) -> Self {
        Self {
            preset,
            feature_count: 10_800,
            extent: [30.0, 30.0],
            center: [0.0, 0.0],
            roughness: preset.roughness(),
            ground_z: 0.15,
            dropout: Vec::new(),
            seed: 0,
        }
    }

    /// Untextured apron covering one side of the take-off point.
    pub fn with_apron(mut self) -> Self {
        self.dropout.push(Polygon::rectangle(-6.0, -6.0, 0.4, -0.3));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.roughness >= 0.0) || !self.extent.iter().all(|e| *e > 0.0) {
            return Err(Error::Config("scene roughness must be >= 0 and extent > 0".into()));
        }
        Ok(())
    }
}

/// A static 3D landmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// Samples landmarks uniformly over the textured area, skipping dropout
/// regions, and perturbs them off the plane by `N(0, roughness²)`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Vec<Landmark>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.roughness).map_err(|e| Error::Config(e.to_string()))?;
    let [w, h] = cfg.extent;
    let mut out = Vec::with_capacity(cfg.feature_count);
    let mut id = 0u64;
    while out.len() < cfg.feature_count {
        let x = cfg.center[0] + rng.random_range(-w / 2.0..w / 2.0);
        let y = cfg.center[1] + rng.random_range(-h / 2.0..h / 2.0);
        let dz = if cfg.roughness > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        id += 1;
        if cfg.dropout.iter().any(|p| p.contains(&Vector2::new(x, y))) {
            continue;
        }
        out.push(Landmark {
            id,
            position: Vector3::new(x, y, cfg.ground_z + dz),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_scene_lies_on_the_plane() {
        let cfg = SceneConfig::preset(ScenePreset::Helipad);
        let pts = generate_scene(&cfg).unwrap();
        assert_eq!(pts.len(), cfg.feature_count);
        assert!(pts.iter().all(|p| p.position.z == cfg.ground_z));
    }

    #[test]
    fn same_seed_same_field() {
        let cfg = SceneConfig {
            seed: 9,
            ..SceneConfig::preset(ScenePreset::Lawn)
        };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = SceneConfig {
            seed: 10,
            ..cfg.clone()
        };
        assert_ne!(generate_scene(&cfg).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn roughness_statistics() {
        let cfg = SceneConfig {
            feature_count: 10_000,
            seed: 3,
            ..SceneConfig::preset(ScenePreset::Lawn)
        };
        let pts = generate_scene(&cfg).unwrap();
        let dz: Vec<f64> = pts.iter().map(|p| p.position.z - cfg.ground_z).collect();
        let mean = dz.iter().sum::<f64>() / dz.len() as f64;
        let var = dz.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dz.len() - 1) as f64;
        assert!((var.sqrt() - 0.05).abs() < 0.005, "std = {}", var.sqrt());
    }

    #[test]
    fn dropout_regions_are_empty() {
        let cfg = SceneConfig::preset(ScenePreset::Asphalt).with_apron();
        let pts = generate_scene(&cfg).unwrap();
        let apron = &cfg.dropout[0];
        assert!(pts.iter().all(|p| !apron.contains(&p.position.xy())));
        assert!(apron.contains(&Vector2::new(-1.0, -1.0)));
        assert!(!apron.contains(&Vector2::new(1.0, 1.0)));
    }

    #[test]
    fn presets_parse() {
        assert_eq!("lawn".parse::<ScenePreset>().unwrap().roughness(), 0.05);
        assert!("gravel".parse::<ScenePreset>().is_err());
    }
}
