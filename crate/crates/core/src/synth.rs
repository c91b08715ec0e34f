//! Two-camera benchmarks with known correspondences.
//!
//! Each identity has a latent appearance vector embedded in a fixed subspace
//! of the feature space. A camera sees a tracklet as
//!
//! ```text
//! frame = T_c (E z + N v) + b_c + noise
//! ```
//!
//! where `E z` is the identity signal, `N v` a per-tracklet nuisance shift
//! confined to the complementary subspace (lighting, background), `T_c` a
//! near-identity linear distortion, and `b_c` a camera bias. All of this is
//! linear, so a Mahalanobis metric can in principle undo the camera gap.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DgmError, Result};
use crate::eval::TruthPairing;
use crate::model::{CameraGraph, Tracklet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Identities seen by both cameras.
    pub num_identities: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Per-frame isotropic noise standard deviation.
    pub noise: f64,
    /// Per-tracklet nuisance standard deviation outside the identity subspace.
    pub nuisance: f64,
    /// Strength of each camera's deviation from the identity map.
    pub camera_distortion: f64,
    /// Standard deviation of each camera's bias vector.
    pub camera_bias: f64,
    /// Extra single-camera identities per camera, as a fraction of `num_identities`.
    pub distractor_frac: f64,
    /// Fraction of identities split into two tracklets, drawn independently per camera.
    pub segment_frac: f64,
    /// Identities in the held-out query/gallery split.
    pub test_identities: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 50,
            latent_dim: 10,
            feature_dim: 20,
            frames_min: 8,
            frames_max: 12,
            noise: 0.1,
            nuisance: 0.15,
            camera_distortion: 0.2,
            camera_bias: 0.3,
            distractor_frac: 0.0,
            segment_frac: 0.0,
            test_identities: 50,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(DgmError::ConfigInvalid(msg.to_string()));
        if self.num_identities < 2 {
            return fail("need at least two identities");
        }
        if self.latent_dim == 0 || self.latent_dim > self.feature_dim {
            return fail("latent_dim must lie in 1..=feature_dim");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return fail("frame range must be non-empty and start at 1 or more");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("nuisance", self.nuisance),
            ("camera_distortion", self.camera_distortion),
            ("camera_bias", self.camera_bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DgmError::ConfigInvalid(format!("{name} must be finite and nonnegative")));
            }
        }
        for (name, v) in [("distractor_frac", self.distractor_frac), ("segment_frac", self.segment_frac)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DgmError::ConfigInvalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.segment_frac > 0.0 && self.frames_min < 2 {
            return fail("splitting tracklets needs at least two frames each");
        }
        Ok(())
    }

    pub fn num_distractors(&self) -> usize {
        (self.distractor_frac * self.num_identities as f64).round() as usize
    }

    pub fn num_segmented(&self) -> usize {
        (self.segment_frac * self.num_identities as f64).round() as usize
    }
}

/// A generated camera pair with its ground truth.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub camera_a: CameraGraph,
    pub camera_b: CameraGraph,
    pub truth: TruthPairing,
}

/// Fixed camera model shared by the training and held-out splits.
struct World {
    /// `d x L`, orthonormal columns spanning the identity subspace.
    embed: DMatrix<f64>,
    /// `d x (d - L)`, orthonormal complement.
    complement: DMatrix<f64>,
    transforms: [DMatrix<f64>; 2],
    biases: [DVector<f64>; 2],
    /// Keeps the expected distance between two identities near one.
    signal_scale: f64,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

impl World {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.feature_dim;
        let l = cfg.latent_dim;
        let q = gaussian_matrix(rng, d, d).qr().q();
        let embed = q.columns(0, l).into_owned();
        let complement = q.columns(l, d - l).into_owned();
        let transform = |rng: &mut ChaCha8Rng| {
            DMatrix::identity(d, d) + gaussian_matrix(rng, d, d) * (cfg.camera_distortion / (d as f64).sqrt())
        };
        let transforms = [transform(rng), transform(rng)];
        let biases = [
            gaussian_vector(rng, d, cfg.camera_bias),
            gaussian_vector(rng, d, cfg.camera_bias),
        ];
        Self {
            embed,
            complement,
            transforms,
            biases,
            signal_scale: 1.0 / (2.0 * l as f64).sqrt(),
        }
    }

    fn latent(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> DVector<f64> {
        gaussian_vector(rng, cfg.latent_dim, self.signal_scale)
    }

    /// Frames of one identity seen by camera `cam`.
    fn frames(&self, cfg: &SynthConfig, cam: usize, latent: &DVector<f64>, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
        let nuisance = gaussian_vector(rng, cfg.feature_dim - cfg.latent_dim, cfg.nuisance);
        let clean = &self.transforms[cam] * (&self.embed * latent + &self.complement * nuisance) + &self.biases[cam];
        let count = rng.random_range(cfg.frames_min..=cfg.frames_max);
        (0..count)
            .map(|_| &clean + gaussian_vector(rng, cfg.feature_dim, cfg.noise))
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Record {
    person: u32,
    half: u8,
    frames: Vec<DVector<f64>>,
}

fn build_camera(mut records: Vec<Record>, rng: &mut ChaCha8Rng) -> Result<(CameraGraph, Vec<(u32, u8)>)> {
    records.shuffle(rng);
    let keys = records.iter().map(|r| (r.person, r.half)).collect();
    let tracklets = records
        .into_iter()
        .map(|r| Tracklet::new(Some(r.person), r.frames))
        .collect::<Result<Vec<_>>>()?;
    Ok((CameraGraph::new(tracklets)?, keys))
}

fn split_halves(person: u32, frames: Vec<DVector<f64>>) -> [Record; 2] {
    let mid = frames.len().div_ceil(2);
    let mut first = frames;
    let second = first.split_off(mid);
    [
        Record { person, half: 0, frames: first },
        Record { person, half: 1, frames: second },
    ]
}

/// Generates the training camera pair.
///
/// Distractors appear in one camera only; segmented identities are split into
/// two tracklets in the cameras that selected them. Split halves pair with the
/// same half on the other side, or the first half with an unsplit tracklet.
pub fn generate_benchmark(cfg: &SynthConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let world = World::new(cfg, &mut stream(cfg.seed, 0));
    let mut rng = stream(cfg.seed, 1);

    let n = cfg.num_identities;
    let extra = cfg.num_distractors();
    let latents: Vec<DVector<f64>> = (0..n + 2 * extra).map(|_| world.latent(cfg, &mut rng)).collect();

    let mut cameras = Vec::with_capacity(2);
    for cam in 0..2 {
        let mut split = vec![false; n];
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        for &i in ids.iter().take(cfg.num_segmented()) {
            split[i] = true;
        }
        let distractors = n + cam * extra..n + (cam + 1) * extra;
        let mut records = Vec::new();
        for person in (0..n).chain(distractors) {
            let frames = world.frames(cfg, cam, &latents[person], &mut rng);
            if person < n && split[person] {
                records.extend(split_halves(person as u32, frames));
            } else {
                records.push(Record { person: person as u32, half: 0, frames });
            }
        }
        cameras.push(build_camera(records, &mut rng)?);
    }
    let (camera_b, keys_b) = cameras.pop().expect("two cameras");
    let (camera_a, keys_a) = cameras.pop().expect("two cameras");

    let truth = keys_a
        .iter()
        .map(|&(person, half)| {
            let in_b: Vec<usize> = (0..keys_b.len()).filter(|&j| keys_b[j].0 == person).collect();
            match in_b.as_slice() {
                [only] if half == 0 => Some(*only),
                [_, _] => in_b.iter().copied().find(|&j| keys_b[j].1 == half),
                _ => None,
            }
        })
        .collect();

    Ok(Benchmark {
        camera_a,
        camera_b,
        truth,
    })
}

/// Held-out query (camera A) and gallery (camera B) tracklets of fresh
/// identities under the same camera model, one tracklet each, uncorrupted.
pub fn generate_test_split(cfg: &SynthConfig) -> Result<(CameraGraph, CameraGraph)> {
    cfg.validate()?;
    if cfg.test_identities == 0 {
        return Err(DgmError::ConfigInvalid("test split needs at least one identity".into()));
    }
    let world = World::new(cfg, &mut stream(cfg.seed, 0));
    let mut rng = stream(cfg.seed, 2);
    let first_id = cfg.num_identities + 2 * cfg.num_distractors();
    let latents: Vec<DVector<f64>> = (0..cfg.test_identities).map(|_| world.latent(cfg, &mut rng)).collect();
    let mut graphs = Vec::with_capacity(2);
    for cam in 0..2 {
        let records = latents
            .iter()
            .enumerate()
            .map(|(i, z)| Record {
                person: (first_id + i) as u32,
                half: 0,
                frames: world.frames(cfg, cam, z, &mut rng),
            })
            .collect();
        graphs.push(build_camera(records, &mut rng)?.0);
    }
    let gallery = graphs.pop().expect("two cameras");
    let query = graphs.pop().expect("two cameras");
    Ok((query, gallery))
}
