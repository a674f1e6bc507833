//! Synthetic organ phantoms and their preprocessing.
//!
//! Phantoms stand in for clinical masks: a superellipsoid base deformed by
//! smooth Gaussian bumps, with abnormal cases carrying one extra localized
//! lesion (a bulge or a dent). Everything downstream of a `(config, seed)`
//! pair is a pure function, so datasets regenerate bit-identically.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::rng::SeededRng;
use crate::voxel::{VoxelError, VoxelGrid, NEIGHBORS_6};

/// Superellipsoid exponent is drawn per case; >2 flattens toward a box.
const EXPONENT_RANGE: (f64, f64) = (2.0, 2.5);
/// Bump width as a fraction of the mean base radius.
const BUMP_WIDTH_FRACTION: (f64, f64) = (0.18, 0.38);
const RETRY_LIMIT: u64 = 10;

#[derive(Debug, Error)]
pub enum ShapegenError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error("phantom generation failed for label {label} seed {seed} after {attempts} attempts: {reason}")]
    GenerationFailed {
        label: Label,
        seed: u64,
        attempts: u64,
        reason: String,
    },
    #[error("empty mask")]
    EmptyMask,
    #[error("corruption target {target} unreachable: {reason}")]
    CorruptionUnreachable { target: f64, reason: String },
    #[error("fold split needs >= {fold_count} cases per class, class {label} has {count}")]
    ClassTooSmall {
        label: Label,
        count: usize,
        fold_count: usize,
    },
    #[error("fold count must be >= 2, got {0}")]
    BadFoldCount(usize),
    #[error("duplicate case id {0}")]
    DuplicateCaseId(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal = 0,
    Abnormal = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }

    /// Classifier target.
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbnormalMode {
    Bulge,
    Dent,
    Mixed,
}

impl AbnormalMode {
    pub fn parse(s: &str) -> Option<AbnormalMode> {
        match s {
            "bulge" => Some(AbnormalMode::Bulge),
            "dent" => Some(AbnormalMode::Dent),
            "mixed" => Some(AbnormalMode::Mixed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AbnormalMode::Bulge => "bulge",
            AbnormalMode::Dent => "dent",
            AbnormalMode::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub grid_size: usize,
    /// Inclusive radius interval per grid axis, in voxels.
    pub base_radii_range: [(f64, f64); 3],
    pub bump_count: usize,
    pub bump_amplitude_range: (f64, f64),
    /// Lesion effect size; 0 disables the lesion entirely.
    pub lesion_amplitude: f64,
    pub lesion_radius_range: (f64, f64),
    pub abnormal_mode: AbnormalMode,
}

impl PhantomConfig {
    /// Desk-scale defaults: raw phantoms on a 48-cube.
    pub fn default_desk() -> Self {
        PhantomConfig {
            grid_size: 48,
            base_radii_range: [(9.5, 10.5), (12.5, 13.5), (16.5, 17.5)],
            bump_count: 4,
            bump_amplitude_range: (0.03, 0.08),
            lesion_amplitude: 1.0,
            lesion_radius_range: (6.0, 10.0),
            abnormal_mode: AbnormalMode::Mixed,
        }
    }

    pub fn validate(&self) -> Result<(), ShapegenError> {
        let g = self.grid_size as f64;
        for (axis, &(lo, hi)) in self.base_radii_range.iter().enumerate() {
            if !(lo > 0.0 && hi >= lo) {
                return Err(ShapegenError::InvalidConfig(format!(
                    "radius range for axis {axis} must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                )));
            }
            // Margin of 2 voxels between the largest radius and the grid face.
            if hi > g / 2.0 - 2.0 {
                return Err(ShapegenError::InvalidConfig(format!(
                    "axis {axis} radius {hi} leaves less than a 2-voxel margin in a {}-cube",
                    self.grid_size
                )));
            }
        }
        let (alo, ahi) = self.bump_amplitude_range;
        if !(alo >= 0.0 && ahi >= alo) {
            return Err(ShapegenError::InvalidConfig(format!(
                "bump amplitude range must satisfy 0 <= lo <= hi, got ({alo}, {ahi})"
            )));
        }
        if !(self.lesion_amplitude >= 0.0 && self.lesion_amplitude.is_finite()) {
            return Err(ShapegenError::InvalidConfig(format!(
                "lesion amplitude must be finite and >= 0, got {}",
                self.lesion_amplitude
            )));
        }
        let (rlo, rhi) = self.lesion_radius_range;
        if !(rlo > 0.0 && rhi >= rlo) {
            return Err(ShapegenError::InvalidConfig(format!(
                "lesion radius range must satisfy 0 < lo <= hi, got ({rlo}, {rhi})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub case_id: String,
    pub label: Label,
    pub grid: VoxelGrid,
    pub seed: u64,
    pub corruption_dsc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    cases: Vec<CaseRecord>,
}

#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub fold_count: usize,
    /// case_id -> fold index in 0..fold_count.
    pub assignment: std::collections::BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, case_id: &str) -> Option<usize> {
        self.assignment.get(case_id).copied()
    }
}

struct Bump {
    center: [f64; 3],
    amplitude: f64,
    inv_two_sigma_sq: f64,
    cutoff_sq: f64,
}

struct ImplicitShape {
    center: [f64; 3],
    radii: [f64; 3],
    exponent: f64,
    bumps: Vec<Bump>,
}

impl ImplicitShape {
    fn value(&self, p: [f64; 3]) -> f64 {
        let mut f = 0.0;
        for a in 0..3 {
            f += ((p[a] - self.center[a]).abs() / self.radii[a]).powf(self.exponent);
        }
        for b in &self.bumps {
            let d0 = p[0] - b.center[0];
            let d1 = p[1] - b.center[1];
            let d2 = p[2] - b.center[2];
            let dist_sq = d0 * d0 + d1 * d1 + d2 * d2;
            if dist_sq <= b.cutoff_sq {
                f += b.amplitude * (-dist_sq * b.inv_two_sigma_sq).exp();
            }
        }
        f
    }
}

/// Draws the base shape for one attempt. The draw order here is part of the
/// determinism contract: normal and abnormal cases share it, so a zero-effect
/// lesion leaves matched seeds voxelwise identical.
fn draw_shape(cfg: &PhantomConfig, rng: &mut SeededRng) -> ImplicitShape {
    let g = cfg.grid_size as f64;
    let center = [(g - 1.0) / 2.0; 3];
    let exponent = rng.uniform(EXPONENT_RANGE.0, EXPONENT_RANGE.1);
    let mut radii = [0.0; 3];
    for a in 0..3 {
        radii[a] = rng.uniform(cfg.base_radii_range[a].0, cfg.base_radii_range[a].1);
    }
    let mean_radius = (radii[0] + radii[1] + radii[2]) / 3.0;
    let mut bumps = Vec::with_capacity(cfg.bump_count);
    for _ in 0..cfg.bump_count {
        let dir = rng.unit_vector();
        let magnitude = rng.uniform(cfg.bump_amplitude_range.0, cfg.bump_amplitude_range.1);
        let sign = rng.sign();
        let width = rng.uniform(BUMP_WIDTH_FRACTION.0, BUMP_WIDTH_FRACTION.1) * mean_radius;
        // Place the bump center on the superellipsoid surface along `dir`.
        let mut s = 0.0;
        for a in 0..3 {
            s += (dir[a].abs() / radii[a]).powf(exponent);
        }
        let t = s.powf(-1.0 / exponent);
        let bump_center = [
            center[0] + t * dir[0],
            center[1] + t * dir[1],
            center[2] + t * dir[2],
        ];
        let sigma_sq = width * width;
        bumps.push(Bump {
            center: bump_center,
            amplitude: sign * magnitude,
            inv_two_sigma_sq: 1.0 / (2.0 * sigma_sq),
            // Beyond 3 sigma the contribution is below 1.2% of the amplitude.
            cutoff_sq: 9.0 * sigma_sq,
        });
    }
    ImplicitShape {
        center,
        radii,
        exponent,
        bumps,
    }
}

fn voxelize(shape: &ImplicitShape, grid_size: usize) -> VoxelGrid {
    let mut g = VoxelGrid::new([grid_size; 3]);
    for z in 0..grid_size {
        for y in 0..grid_size {
            for x in 0..grid_size {
                let p = [z as f64, y as f64, x as f64];
                if shape.value(p) <= 1.0 {
                    g.set([z, y, x], true);
                }
            }
        }
    }
    g
}

/// Foreground voxels with at least one background face neighbor.
fn surface_voxels(grid: &VoxelGrid) -> Vec<[usize; 3]> {
    grid.foreground_positions()
        .into_iter()
        .filter(|&p| grid.is_boundary(p))
        .collect()
}

fn apply_sphere(grid: &mut VoxelGrid, center: [usize; 3], radius: f64, fill: bool) {
    let dims = grid.dims();
    let r_ceil = radius.ceil() as isize;
    let r_sq = radius * radius;
    for dz in -r_ceil..=r_ceil {
        for dy in -r_ceil..=r_ceil {
            for dx in -r_ceil..=r_ceil {
                let d_sq = (dz * dz + dy * dy + dx * dx) as f64;
                if d_sq > r_sq {
                    continue;
                }
                let q = [
                    center[0] as isize + dz,
                    center[1] as isize + dy,
                    center[2] as isize + dx,
                ];
                if q[0] < 0 || q[1] < 0 || q[2] < 0 {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if q[0] >= dims[0] || q[1] >= dims[1] || q[2] >= dims[2] {
                    continue;
                }
                grid.set(q, fill);
            }
        }
    }
}

pub fn generate_phantom(
    cfg: &PhantomConfig,
    label: Label,
    seed: u64,
) -> Result<CaseRecord, ShapegenError> {
    cfg.validate()?;
    let base = SeededRng::new(seed);
    let mut last_reason = String::new();
    for attempt in 0..RETRY_LIMIT {
        let mut rng = base.fork(attempt);
        let shape = draw_shape(cfg, &mut rng);
        let mut grid = voxelize(&shape, cfg.grid_size);
        if label == Label::Abnormal {
            let mode = match cfg.abnormal_mode {
                AbnormalMode::Bulge => AbnormalMode::Bulge,
                AbnormalMode::Dent => AbnormalMode::Dent,
                AbnormalMode::Mixed => {
                    if rng.sign() > 0.0 {
                        AbnormalMode::Bulge
                    } else {
                        AbnormalMode::Dent
                    }
                }
            };
            let surface = surface_voxels(&grid);
            if surface.is_empty() {
                last_reason = "no surface voxels for lesion placement".into();
                continue;
            }
            let site = surface[rng.below(surface.len())];
            let radius =
                cfg.lesion_amplitude * rng.uniform(cfg.lesion_radius_range.0, cfg.lesion_radius_range.1);
            // Zero effect size must leave the grid untouched; the draws above
            // still happen so the stream stays aligned across effect sizes.
            if cfg.lesion_amplitude > 0.0 {
                apply_sphere(&mut grid, site, radius, mode == AbnormalMode::Bulge);
            }
        }
        if grid.is_empty_mask() {
            last_reason = "empty foreground".into();
            continue;
        }
        if !grid.is_single_component() {
            last_reason = "disconnected foreground".into();
            continue;
        }
        return Ok(CaseRecord {
            case_id: String::new(),
            label,
            grid,
            seed,
            corruption_dsc: None,
        });
    }
    Err(ShapegenError::GenerationFailed {
        label,
        seed,
        attempts: RETRY_LIMIT,
        reason: last_reason,
    })
}

/// Generates `n_normal` + `n_abnormal` cases with per-case seeds drawn from a
/// master stream; ids are `n0000...`, `a0000...`.
pub fn generate_dataset(
    cfg: &PhantomConfig,
    n_normal: usize,
    n_abnormal: usize,
    seed: u64,
) -> Result<Dataset, ShapegenError> {
    let mut master = SeededRng::new(seed);
    let mut cases = Vec::with_capacity(n_normal + n_abnormal);
    for i in 0..n_normal {
        let case_seed = master.next_u64();
        let mut rec = generate_phantom(cfg, Label::Normal, case_seed)?;
        rec.case_id = format!("n{i:04}");
        cases.push(rec);
    }
    for i in 0..n_abnormal {
        let case_seed = master.next_u64();
        let mut rec = generate_phantom(cfg, Label::Abnormal, case_seed)?;
        rec.case_id = format!("a{i:04}");
        cases.push(rec);
    }
    Dataset::new(cases)
}

/// Rotation about the grid center with nearest-neighbor sampling. Angles are
/// degrees about grid axes 0, 1, 2 (depth, height, width), applied in that
/// fixed order; the output voxel pulls from the inverse-mapped source.
pub fn rotate_mask(grid: &VoxelGrid, angles_deg: [f64; 3]) -> Result<VoxelGrid, ShapegenError> {
    if grid.is_empty_mask() {
        return Err(ShapegenError::EmptyMask);
    }
    let r = compose_rotation(angles_deg);
    let dims = grid.dims();
    let c = [
        (dims[0] - 1) as f64 / 2.0,
        (dims[1] - 1) as f64 / 2.0,
        (dims[2] - 1) as f64 / 2.0,
    ];
    let mut out = VoxelGrid::new(dims);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let v = [z as f64 - c[0], y as f64 - c[1], x as f64 - c[2]];
                // Inverse map: transpose of the forward rotation.
                let mut src = [0.0; 3];
                for a in 0..3 {
                    src[a] = r[0][a] * v[0] + r[1][a] * v[1] + r[2][a] * v[2] + c[a];
                }
                let q = [src[0].round(), src[1].round(), src[2].round()];
                if q[0] < 0.0 || q[1] < 0.0 || q[2] < 0.0 {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if q[0] >= dims[0] || q[1] >= dims[1] || q[2] >= dims[2] {
                    continue;
                }
                if grid.get(q) {
                    out.set([z, y, x], true);
                }
            }
        }
    }
    Ok(out)
}

/// Forward rotation matrix for rotations about axes 0, 1, 2 in that order.
fn compose_rotation(angles_deg: [f64; 3]) -> [[f64; 3]; 3] {
    let mut r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for (axis, &deg) in angles_deg.iter().enumerate() {
        let rad = deg.to_radians();
        let (sin, cos) = (rad.sin(), rad.cos());
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut step = [[0.0; 3]; 3];
        step[axis][axis] = 1.0;
        step[u][u] = cos;
        step[u][v] = -sin;
        step[v][u] = sin;
        step[v][v] = cos;
        r = mat_mul(step, r);
    }
    r
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Resamples the minimal foreground bounding box to a `target` cube with
/// nearest-neighbor lookups.
pub fn crop_and_rescale(grid: &VoxelGrid, target: usize) -> Result<VoxelGrid, ShapegenError> {
    assert!(target > 0, "zero rescale target");
    let (lo, hi) = grid.bounding_box().ok_or(ShapegenError::EmptyMask)?;
    let extent = [
        hi[0] - lo[0] + 1,
        hi[1] - lo[1] + 1,
        hi[2] - lo[2] + 1,
    ];
    let map = |i: usize, ext: usize| -> usize {
        // Pixel-center mapping; exact identity when ext == target.
        (((i as f64 + 0.5) * ext as f64 / target as f64) as usize).min(ext - 1)
    };
    Ok(VoxelGrid::from_fn([target; 3], |p| {
        grid.get([
            lo[0] + map(p[0], extent[0]),
            lo[1] + map(p[1], extent[1]),
            lo[2] + map(p[2], extent[2]),
        ])
    }))
}

/// Degrades a mask toward a DSC target by flipping randomly chosen boundary
/// voxels (both shells) until DSC(original, corrupted) lands in the
/// `target ± 0.02` band. Simulates imperfect upstream segmentation.
pub fn corrupt_mask(
    grid: &VoxelGrid,
    target_dsc: f64,
    seed: u64,
) -> Result<VoxelGrid, ShapegenError> {
    if !(target_dsc > 0.0 && target_dsc < 1.0) {
        return Err(ShapegenError::CorruptionUnreachable {
            target: target_dsc,
            reason: "target must lie in (0, 1)".into(),
        });
    }
    let n_original = grid.count_foreground();
    if n_original == 0 {
        return Err(ShapegenError::EmptyMask);
    }
    let mut work = grid.clone();
    let mut n_work = n_original;
    let mut n_common = n_original;

    // Candidate boundary voxels as linear indices, with a slot map so flips
    // update the set in O(1). Selection only ever reads the vector, so the
    // process is a pure function of the seed.
    let mut slots: HashMap<usize, usize> = HashMap::new();
    let mut candidates: Vec<usize> = Vec::new();
    let total = grid.voxel_count();
    for idx in 0..total {
        if work.is_boundary(work.position(idx)) {
            slots.insert(idx, candidates.len());
            candidates.push(idx);
        }
    }

    let mut rng = SeededRng::new(seed);
    let flip_cap = 50 * n_original;
    for _ in 0..flip_cap {
        if candidates.is_empty() {
            return Err(ShapegenError::CorruptionUnreachable {
                target: target_dsc,
                reason: "boundary exhausted".into(),
            });
        }
        let idx = candidates[rng.below(candidates.len())];
        let p = work.position(idx);
        let was_fg = work.get(p);
        if was_fg && n_work == 1 {
            return Err(ShapegenError::CorruptionUnreachable {
                target: target_dsc,
                reason: "foreground exhausted".into(),
            });
        }
        work.set(p, !was_fg);
        if was_fg {
            n_work -= 1;
            if grid.get(p) {
                n_common -= 1;
            }
        } else {
            n_work += 1;
            if grid.get(p) {
                n_common += 1;
            }
        }
        // The flip changes boundary membership only for the voxel itself and
        // its face neighbors.
        refresh_candidate(&work, idx, &mut slots, &mut candidates);
        for d in NEIGHBORS_6 {
            let q = [
                p[0] as isize + d[0],
                p[1] as isize + d[1],
                p[2] as isize + d[2],
            ];
            if q[0] < 0 || q[1] < 0 || q[2] < 0 {
                continue;
            }
            let q = [q[0] as usize, q[1] as usize, q[2] as usize];
            let dims = work.dims();
            if q[0] >= dims[0] || q[1] >= dims[1] || q[2] >= dims[2] {
                continue;
            }
            refresh_candidate(&work, work.index(q), &mut slots, &mut candidates);
        }
        // The band test runs after each flip: even a target near 1 degrades
        // the mask at least once.
        let dsc = 2.0 * n_common as f64 / (n_original + n_work) as f64;
        if dsc <= target_dsc + 0.02 {
            if dsc >= target_dsc - 0.02 {
                return Ok(work);
            }
            return Err(ShapegenError::CorruptionUnreachable {
                target: target_dsc,
                reason: format!("overshot to {dsc:.4}; mask too small for the band"),
            });
        }
    }
    Err(ShapegenError::CorruptionUnreachable {
        target: target_dsc,
        reason: format!("band not reached within {flip_cap} flips"),
    })
}

fn refresh_candidate(
    work: &VoxelGrid,
    idx: usize,
    slots: &mut HashMap<usize, usize>,
    candidates: &mut Vec<usize>,
) {
    let should_be = work.is_boundary(work.position(idx));
    match (slots.contains_key(&idx), should_be) {
        (false, true) => {
            slots.insert(idx, candidates.len());
            candidates.push(idx);
        }
        (true, false) => {
            let slot = slots.remove(&idx).expect("present");
            let last = candidates.len() - 1;
            candidates.swap_remove(slot);
            if slot != last {
                slots.insert(candidates[slot], slot);
            }
        }
        _ => {}
    }
}

/// Stratified fold split: ids are sorted before shuffling, so the assignment
/// depends only on (membership, fold_count, seed), not on dataset order.
pub fn split_folds(
    dataset: &Dataset,
    fold_count: usize,
    seed: u64,
) -> Result<FoldAssignment, ShapegenError> {
    if fold_count < 2 {
        return Err(ShapegenError::BadFoldCount(fold_count));
    }
    let mut rng = SeededRng::new(seed);
    let mut assignment = std::collections::BTreeMap::new();
    for label in [Label::Normal, Label::Abnormal] {
        let mut ids: Vec<&str> = dataset
            .cases
            .iter()
            .filter(|c| c.label == label)
            .map(|c| c.case_id.as_str())
            .collect();
        if ids.len() < fold_count {
            return Err(ShapegenError::ClassTooSmall {
                label,
                count: ids.len(),
                fold_count,
            });
        }
        ids.sort_unstable();
        rng.shuffle(&mut ids);
        for (j, id) in ids.into_iter().enumerate() {
            assignment.insert(id.to_string(), j % fold_count);
        }
    }
    Ok(FoldAssignment {
        fold_count,
        assignment,
    })
}

impl Dataset {
    pub fn new(cases: Vec<CaseRecord>) -> Result<Self, ShapegenError> {
        let mut seen = std::collections::HashSet::new();
        for c in &cases {
            if !seen.insert(c.case_id.clone()) {
                return Err(ShapegenError::DuplicateCaseId(c.case_id.clone()));
            }
        }
        Ok(Dataset { cases })
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn count_with_label(&self, label: Label) -> usize {
        self.cases.iter().filter(|c| c.label == label).count()
    }

    /// Writes `manifest.csv` plus one mask file per case under `masks/`.
    pub fn save(&self, dir: &Path) -> Result<(), ShapegenError> {
        fs::create_dir_all(dir.join("masks"))?;
        let mut manifest = fs::File::create(dir.join("manifest.csv"))?;
        writeln!(manifest, "# case_id,label,relative_path,seed")?;
        for c in &self.cases {
            let rel = format!("masks/{}.pdm", c.case_id);
            c.grid.save(&dir.join(&rel))?;
            writeln!(manifest, "{},{},{},{}", c.case_id, c.label, rel, c.seed)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ShapegenError> {
        let text = fs::read_to_string(dir.join("manifest.csv"))?;
        let mut cases = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(ShapegenError::Manifest {
                    line: lineno + 1,
                    reason: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let label = fields[1]
                .parse::<u8>()
                .ok()
                .and_then(Label::from_u8)
                .ok_or_else(|| ShapegenError::Manifest {
                    line: lineno + 1,
                    reason: format!("label must be 0 or 1, got {:?}", fields[1]),
                })?;
            let seed = fields[3].parse::<u64>().map_err(|_| ShapegenError::Manifest {
                line: lineno + 1,
                reason: format!("bad seed {:?}", fields[3]),
            })?;
            let grid = VoxelGrid::load(&dir.join(fields[2]))?;
            cases.push(CaseRecord {
                case_id: fields[0].to_string(),
                label,
                grid,
                seed,
                corruption_dsc: None,
            });
        }
        Dataset::new(cases)
    }
}
