//! Deterministic synthetic head phantoms with a class-dependent disease model.
//!
//! Each subject gets an ellipsoidal head (per-subject scale and position jitter)
//! made of three nested tissue bands. Atrophy enlarges the central ventricle
//! band; hypometabolism lowers PET uptake inside fixed spherical regions placed
//! on the ± axes of the head. Every (subject, session) draws from its own
//! generator stream, so any sample can be regenerated in isolation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    write_manifest, write_volume, DataError, Diagnosis, Manifest, Modality, Sample, SampleRecord,
    Volume,
};

pub const MIN_EXTENT: usize = 16;
pub const NUM_REGIONS: usize = 6;

const HEAD_FRACTION: f64 = 0.42;
const WHITE_RADIUS: f64 = 0.75;
const VENTRICLE_RADIUS: f64 = 0.3;
const REGION_DISTANCE: f64 = 0.8;
const REGION_RADIUS: f64 = 0.22;
const SCALE_JITTER: f64 = 0.05;
const SHIFT_JITTER: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub subjects: usize,
    pub sessions_per_subject: usize,
    pub class_probabilities: [f64; 3],
    pub paired_fraction: f64,
    pub noise_sigma: f64,
    pub mci_uptake_factor: f64,
    pub ad_uptake_factor: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            subjects: 40,
            sessions_per_subject: 1,
            class_probabilities: [1.0 / 3.0; 3],
            paired_fraction: 0.38,
            noise_sigma: 0.03,
            mci_uptake_factor: 0.85,
            ad_uptake_factor: 0.70,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if self.dims.iter().any(|&d| d < MIN_EXTENT) {
            return bad(format!(
                "phantom dims {:?} are too small for the region template (each axis needs at least {MIN_EXTENT} voxels)",
                self.dims
            ));
        }
        if self.subjects == 0 || self.sessions_per_subject == 0 {
            return bad("subjects and sessions_per_subject must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.paired_fraction) {
            return bad(format!(
                "paired_fraction must be in [0, 1], got {}",
                self.paired_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        for (name, f) in [
            ("mci_uptake_factor", self.mci_uptake_factor),
            ("ad_uptake_factor", self.ad_uptake_factor),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {f}"));
            }
        }
        let p = &self.class_probabilities;
        if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad(format!(
                "class probabilities must be non-negative and sum to 1, got {p:?}"
            ));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.subjects * self.sessions_per_subject
    }

    /// Uptake multiplier inside `region` for `label`.
    pub fn region_factor(&self, label: Diagnosis, region: usize) -> f64 {
        match label {
            Diagnosis::Cn => 1.0,
            Diagnosis::Mci if region < 2 => self.mci_uptake_factor,
            Diagnosis::Ad if region < 4 => self.ad_uptake_factor,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Cortex,
    White,
    Ventricle,
}

impl Tissue {
    pub fn mri_intensity(self) -> f64 {
        match self {
            Tissue::Background => 0.0,
            Tissue::Cortex => 0.9,
            Tissue::White => 0.6,
            Tissue::Ventricle => 0.2,
        }
    }

    pub fn pet_uptake(self) -> f64 {
        match self {
            Tissue::Background => 0.0,
            Tissue::Cortex => 1.0,
            Tissue::White => 0.7,
            Tissue::Ventricle => 0.1,
        }
    }
}

/// Per-subject head placement in voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadGeometry {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl HeadGeometry {
    /// Position relative to the head, scaled so the head surface is the unit sphere.
    fn normalized(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.center[a]) / self.semi_axes[a])
    }

    pub fn tissue(&self, label: Diagnosis, p: [f64; 3]) -> Tissue {
        let dilation = match label {
            Diagnosis::Cn => 0.0,
            Diagnosis::Mci => 1.0,
            Diagnosis::Ad => 2.0,
        };
        let q = self.normalized(p);
        let rho2: f64 = q.iter().map(|v| v * v).sum();
        let vent2: f64 = (0..3)
            .map(|a| {
                ((p[a] - self.center[a]) / (VENTRICLE_RADIUS * self.semi_axes[a] + dilation))
                    .powi(2)
            })
            .sum();
        if vent2 <= 1.0 {
            Tissue::Ventricle
        } else if rho2 <= WHITE_RADIUS * WHITE_RADIUS {
            Tissue::White
        } else if rho2 <= 1.0 {
            Tissue::Cortex
        } else {
            Tissue::Background
        }
    }

    /// Index of the hypometabolism region containing `p`. Regions sit on the
    /// +x, −x, +y, −y, +z, −z axes (x = W, y = H, z = D).
    pub fn region(&self, p: [f64; 3]) -> Option<usize> {
        let q = self.normalized(p);
        (0..NUM_REGIONS).find(|&k| {
            let axis = 2 - k / 2;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let d2: f64 = (0..3)
                .map(|a| {
                    let c = if a == axis {
                        sign * REGION_DISTANCE
                    } else {
                        0.0
                    };
                    (q[a] - c).powi(2)
                })
                .sum();
            d2 <= REGION_RADIUS * REGION_RADIUS
        })
    }
}

fn stream(cfg: &PhantomConfig, subject: usize, session: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tag = session.map_or(0, |s| s as u64 + 1);
    rng.set_stream(((subject as u64) << 20) | tag);
    rng
}

/// Label and head geometry of `subject`; independent of sessions.
pub fn subject_profile(cfg: &PhantomConfig, subject: usize) -> (Diagnosis, HeadGeometry) {
    let mut rng = stream(cfg, subject, None);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut label = Diagnosis::Ad;
    for (d, p) in Diagnosis::ALL.iter().zip(cfg.class_probabilities) {
        acc += p;
        if u < acc {
            label = *d;
            break;
        }
    }
    let semi_axes = std::array::from_fn(|a| {
        HEAD_FRACTION * cfg.dims[a] as f64 * (1.0 + rng.gen_range(-SCALE_JITTER..=SCALE_JITTER))
    });
    let center = std::array::from_fn(|a| {
        (cfg.dims[a] as f64 - 1.0) / 2.0 + rng.gen_range(-SHIFT_JITTER..=SHIFT_JITTER)
    });
    (label, HeadGeometry { center, semi_axes })
}

fn render(
    cfg: &PhantomConfig,
    modality: Modality,
    mut value: impl FnMut([f64; 3]) -> f64,
    noise: Option<&mut ChaCha8Rng>,
) -> Volume {
    let [d, h, w] = cfg.dims;
    let mut data = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                data.push(value([z as f64, y as f64, x as f64]));
            }
        }
    }
    if let Some(rng) = noise.filter(|_| cfg.noise_sigma > 0.0) {
        let n = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for v in &mut data {
            *v += n.sample(rng);
        }
    }
    Volume::new(
        cfg.dims,
        modality,
        data.into_iter().map(|v| v as f32).collect(),
    )
    .expect("dims validated")
}

pub fn render_mri(
    cfg: &PhantomConfig,
    geom: &HeadGeometry,
    label: Diagnosis,
    noise: Option<&mut ChaCha8Rng>,
) -> Volume {
    render(
        cfg,
        Modality::Mri,
        |p| geom.tissue(label, p).mri_intensity(),
        noise,
    )
}

pub fn render_pet(
    cfg: &PhantomConfig,
    geom: &HeadGeometry,
    label: Diagnosis,
    noise: Option<&mut ChaCha8Rng>,
) -> Volume {
    render(
        cfg,
        Modality::Pet,
        |p| {
            let base = geom.tissue(label, p).pet_uptake();
            match geom.region(p) {
                Some(k) => base * cfg.region_factor(label, k),
                None => base,
            }
        },
        noise,
    )
}

/// Mean value of `v` inside each region (NaN for an empty region).
pub fn region_means(v: &Volume, geom: &HeadGeometry) -> [f64; NUM_REGIONS] {
    let [d, h, w] = v.dims();
    let mut sum = [0.0; NUM_REGIONS];
    let mut count = [0usize; NUM_REGIONS];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if let Some(k) = geom.region([z as f64, y as f64, x as f64]) {
                    sum[k] += v.at(z, y, x) as f64;
                    count[k] += 1;
                }
            }
        }
    }
    std::array::from_fn(|k| sum[k] / count[k] as f64)
}

/// One generated study, in memory.
#[derive(Clone, Debug)]
pub struct PhantomSample {
    pub subject: usize,
    pub session: usize,
    pub label: Diagnosis,
    pub geometry: HeadGeometry,
    pub mri: Volume,
    pub pet: Volume,
}

pub fn generate_sample(cfg: &PhantomConfig, subject: usize, session: usize) -> PhantomSample {
    let (label, geometry) = subject_profile(cfg, subject);
    let mut rng = stream(cfg, subject, Some(session));
    let mri = render_mri(cfg, &geometry, label, Some(&mut rng));
    let pet = render_pet(cfg, &geometry, label, Some(&mut rng));
    PhantomSample {
        subject,
        session,
        label,
        geometry,
        mri,
        pet,
    }
}

/// Sample indices (`subject · sessions + session`) that receive a PET volume:
/// exactly `round(paired_fraction · n)` of them, chosen by a seeded shuffle.
pub fn paired_indices(cfg: &PhantomConfig) -> Vec<bool> {
    let n = cfg.num_samples();
    let k = (cfg.paired_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let mut paired = vec![false; n];
    for &i in &order[..k.min(n)] {
        paired[i] = true;
    }
    paired
}

pub fn subject_id(subject: usize) -> String {
    format!("sub-{subject:04}")
}

pub fn session_id(session: usize) -> String {
    format!("ses-{session:02}")
}

/// The dataset [`generate_phantom_dataset`] would write, preprocessed in
/// memory at `dims` without touching the disk.
pub fn phantom_samples(cfg: &PhantomConfig, dims: [usize; 3]) -> Result<Vec<Sample>, DataError> {
    cfg.validate()?;
    let paired = paired_indices(cfg);
    let mut out = Vec::with_capacity(cfg.num_samples());
    for subject in 0..cfg.subjects {
        for session in 0..cfg.sessions_per_subject {
            let s = generate_sample(cfg, subject, session);
            let pet = paired[subject * cfg.sessions_per_subject + session].then_some(&s.pet);
            out.push(Sample::from_volumes(
                subject_id(subject),
                session_id(session),
                s.label,
                &s.mri,
                pet,
                dims,
            ));
        }
    }
    Ok(out)
}

/// Writes every MRI (and the paired PETs) below `out_dir` and a
/// `manifest.csv` with paths relative to `out_dir`.
pub fn generate_phantom_dataset(
    cfg: &PhantomConfig,
    out_dir: &Path,
) -> Result<Manifest, DataError> {
    cfg.validate()?;
    let paired = paired_indices(cfg);
    let mut records = Vec::with_capacity(cfg.num_samples());
    for subject in 0..cfg.subjects {
        for session in 0..cfg.sessions_per_subject {
            let s = generate_sample(cfg, subject, session);
            let stem = format!("{}_{}", subject_id(subject), session_id(session));
            let mri_rel = PathBuf::from("mri").join(format!("{stem}.raw"));
            write_volume(&s.mri, &out_dir.join(&mri_rel))?;
            let pet_rel = if paired[subject * cfg.sessions_per_subject + session] {
                let rel = PathBuf::from("pet").join(format!("{stem}.raw"));
                write_volume(&s.pet, &out_dir.join(&rel))?;
                Some(rel)
            } else {
                None
            };
            records.push(SampleRecord {
                subject_id: subject_id(subject),
                session_id: session_id(session),
                mri_path: mri_rel,
                pet_path: pet_rel,
                label: s.label,
            });
        }
    }
    let manifest = Manifest {
        records,
        root: out_dir.to_path_buf(),
    };
    write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
