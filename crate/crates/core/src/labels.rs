//! Ground-truth navigation labels: every grid pose is mapped to the nearest
//! grid pose whose confidence clears the threshold.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ConfidenceField;
use crate::format::{round_sig, Provenance};
use crate::policy::Proposal;
use crate::seed;
use crate::world::{GridIndex, Observation, Pose, PoseGrid, WorldConfig};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Signed move from a grid pose to its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigationLabel {
    pub dtheta: f64,
    pub dr: f64,
    pub reachable: bool,
}

impl NavigationLabel {
    pub fn proposal(&self) -> Proposal {
        Proposal::new(self.dtheta, self.dr)
    }
}

/// Result of a threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub index: GridIndex,
    pub reachable: bool,
}

/// Signed angular index offset from `from` to `to` on an `n`-angle circle,
/// in `(-n/2, n/2]`.
pub(crate) fn signed_angle_steps(from: usize, to: usize, n: usize) -> i64 {
    let k = (to + n - from) % n;
    if 2 * k <= n {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: GridIndex,
    dist_sq: f64,
    angle_steps: i64,
    radius_steps: i64,
}

impl Candidate {
    /// Closer first; on equal distance prefer positive rotation, then the
    /// smaller radial move, then outward over inward.
    fn rank(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then_with(|| (other.angle_steps > 0).cmp(&(self.angle_steps > 0)))
            .then_with(|| self.radius_steps.abs().cmp(&other.radius_steps.abs()))
            .then_with(|| (other.radius_steps > 0).cmp(&(self.radius_steps > 0)))
    }
}

/// Precomputed qualifying set for repeated nearest-above-threshold queries.
///
/// Qualifying angle indices are kept per radius ring, so a query walks rings
/// outward from the source radius and stops once the radial offset alone
/// exceeds the best distance found.
#[derive(Debug, Clone)]
pub struct ThresholdSearch {
    grid: PoseGrid,
    radial_weight: f64,
    rings: Vec<Vec<usize>>,
    reachable: bool,
}

impl ThresholdSearch {
    /// `values` is the angle-major confidence table of `grid`. If nothing
    /// reaches `p_thres` the maximum-confidence points become the targets.
    pub fn new(grid: &PoseGrid, values: &[f64], p_thres: f64, radial_weight: f64) -> Self {
        assert_eq!(values.len(), grid.len());
        let reachable = values.iter().any(|&v| v >= p_thres);
        let cutoff = if reachable {
            p_thres
        } else {
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let mut rings = vec![Vec::new(); grid.n_radii];
        for idx in grid.indices() {
            if values[grid.flat(idx)] >= cutoff {
                rings[idx.radius].push(idx.angle);
            }
        }
        Self {
            grid: *grid,
            radial_weight,
            rings,
            reachable,
        }
    }

    pub fn reachable(&self) -> bool {
        self.reachable
    }

    fn candidate(&self, source: GridIndex, angle: usize, radius: usize) -> Candidate {
        let angle_steps = signed_angle_steps(source.angle, angle, self.grid.n_angles);
        let radius_steps = radius as i64 - source.radius as i64;
        let arc = angle_steps as f64 * self.grid.angle_step() * self.grid.radius_of(source.radius);
        let radial = self.radial_weight * radius_steps as f64 * self.grid.radius_step();
        Candidate {
            index: GridIndex::new(angle, radius),
            dist_sq: arc * arc + radial * radial,
            angle_steps,
            radius_steps,
        }
    }

    /// Best candidate on one radius ring: the nearest qualifying angle on
    /// either side of the source bearing.
    fn best_in_ring(&self, source: GridIndex, radius: usize) -> Option<Candidate> {
        let ring = &self.rings[radius];
        if ring.is_empty() {
            return None;
        }
        let pos = ring.partition_point(|&a| a < source.angle);
        let forward = ring[pos % ring.len()];
        let backward = if pos < ring.len() && ring[pos] == source.angle {
            source.angle
        } else {
            ring[(pos + ring.len() - 1) % ring.len()]
        };
        let a = self.candidate(source, forward, radius);
        let b = self.candidate(source, backward, radius);
        Some(if b.rank(&a) == Ordering::Less { b } else { a })
    }

    pub fn nearest(&self, source: GridIndex) -> Target {
        let step = self.radial_weight * self.grid.radius_step();
        let mut best: Option<Candidate> = None;
        for offset in 0..self.grid.n_radii {
            if let Some(b) = &best {
                let bound = step * offset as f64;
                if bound * bound > b.dist_sq {
                    break;
                }
            }
            let rings = [
                source.radius.checked_add(offset).filter(|&j| j < self.grid.n_radii),
                if offset > 0 {
                    source.radius.checked_sub(offset)
                } else {
                    None
                },
            ];
            for radius in rings.into_iter().flatten() {
                if let Some(c) = self.best_in_ring(source, radius) {
                    if best.is_none_or(|b| c.rank(&b) == Ordering::Less) {
                        best = Some(c);
                    }
                }
            }
        }
        Target {
            index: best.expect("search set is never empty").index,
            reachable: self.reachable,
        }
    }
}

/// Nearest grid point (arc length at the source radius combined with
/// weighted radial travel) whose confidence is at least `p_thres`.
pub fn nearest_above(
    field: &ConfidenceField,
    grid: &PoseGrid,
    source: GridIndex,
    p_thres: f64,
    radial_weight: f64,
) -> Result<Target> {
    check_index(grid, source)?;
    let table = field.export_manifold(grid);
    Ok(ThresholdSearch::new(grid, &table.values, p_thres, radial_weight).nearest(source))
}

fn check_index(grid: &PoseGrid, idx: GridIndex) -> Result<()> {
    grid.pose_at(idx.angle, idx.radius).map(|_| ())
}

/// Signed label from `source` to `target`; positive `dtheta` is rotation to
/// the right around the object.
pub fn label_from_target(
    grid: &PoseGrid,
    source: GridIndex,
    target: GridIndex,
    reachable: bool,
) -> Result<NavigationLabel> {
    check_index(grid, source)?;
    check_index(grid, target)?;
    let steps = signed_angle_steps(source.angle, target.angle, grid.n_angles);
    Ok(NavigationLabel {
        dtheta: steps as f64 * grid.angle_step(),
        dr: grid.radius_of(target.radius) - grid.radius_of(source.radius),
        reachable,
    })
}

/// Maps a label into `[0, 1]²`.
pub fn normalize(label: &NavigationLabel, grid: &PoseGrid) -> [f64; 2] {
    normalize_parts(label.dtheta, label.dr, grid)
}

pub(crate) fn normalize_parts(dtheta: f64, dr: f64, grid: &PoseGrid) -> [f64; 2] {
    let span = grid.radial_span();
    let v = if span > 0.0 { (dr + span) / (2.0 * span) } else { 0.5 };
    [(dtheta + PI) / TAU, v]
}

/// Inverse of [`normalize`].
pub fn denormalize(norm: [f64; 2], grid: &PoseGrid) -> Proposal {
    let span = grid.radial_span();
    Proposal::new(norm[0] * TAU - PI, norm[1] * 2.0 * span - span)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: GridIndex,
    pub pose: Pose,
    pub observation: Observation,
    pub p: f64,
    pub label: NavigationLabel,
    pub label_norm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: WorldConfig,
    pub field: ConfidenceField,
    pub p_thres: f64,
    pub radial_weight: f64,
    pub noise_seed: u64,
    pub provenance: Option<Provenance>,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record at a grid index, if present.
    pub fn record_at(&self, idx: GridIndex) -> Option<&DatasetRecord> {
        self.records
            .binary_search_by(|r| r.index.cmp(&idx))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Copy keeping only records with reachable labels.
    pub fn reachable_only(&self) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| r.label.reachable).cloned().collect(),
            ..self.clone()
        }
    }
}

pub fn validate_threshold(p_thres: f64) -> Result<()> {
    if p_thres > 0.0 && p_thres < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("p_thres must lie in (0, 1), got {p_thres}")))
    }
}

/// Builds one labelled record per grid point, angle-major. Each record's
/// observation noise is seeded from its grid position, so the result does
/// not depend on evaluation order.
pub fn generate_dataset(
    world: &WorldConfig,
    field: &ConfidenceField,
    p_thres: f64,
    radial_weight: f64,
    noise_seed: u64,
) -> Result<Dataset> {
    validate_threshold(p_thres)?;
    if !(radial_weight > 0.0) {
        return Err(Error::InvalidConfig("radial_weight must be positive".into()));
    }
    let grid = world.grid;
    let table = field.export_manifold(&grid);
    let search = ThresholdSearch::new(&grid, &table.values, p_thres, radial_weight);
    let encoder = world.encoder();
    let records = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let index = grid.unflat(flat);
            let pose = grid.pose(index);
            let target = search.nearest(index);
            let label = label_from_target(&grid, index, target.index, target.reachable)?;
            let obs_seed = seed::derive(noise_seed, "observation", &[flat as u64]);
            Ok(DatasetRecord {
                index,
                pose,
                observation: encoder.encode(world, pose, obs_seed),
                p: table.values[flat],
                label_norm: normalize(&label, &grid),
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        world: *world,
        field: field.clone(),
        p_thres,
        radial_weight,
        noise_seed,
        provenance: None,
        records,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedsLine {
    encoder: u64,
    noise: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema_version: u32,
    n_angles: usize,
    n_radii: usize,
    r_min: f64,
    r_max: f64,
    p_thres: f64,
    radial_weight: f64,
    obs_dim: usize,
    obs_noise_sigma: f64,
    n_records: usize,
    seeds: SeedsLine,
    field_params: ConfidenceField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    ai: usize,
    ri: usize,
    theta: f64,
    r: f64,
    p: f64,
    dtheta: f64,
    dr: f64,
    reachable: bool,
    label_norm: [f64; 2],
    obs: Vec<f64>,
}

/// Writes the dataset as JSON Lines: a header object, then one record per
/// line. Record floats keep 9 significant digits.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = HeaderLine {
        schema_version: DATASET_SCHEMA_VERSION,
        n_angles: dataset.world.grid.n_angles,
        n_radii: dataset.world.grid.n_radii,
        r_min: dataset.world.grid.r_min,
        r_max: dataset.world.grid.r_max,
        p_thres: dataset.p_thres,
        radial_weight: dataset.radial_weight,
        obs_dim: dataset.world.obs_dim,
        obs_noise_sigma: dataset.world.obs_noise_sigma,
        n_records: dataset.records.len(),
        seeds: SeedsLine {
            encoder: dataset.world.encoder_seed,
            noise: dataset.noise_seed,
        },
        field_params: dataset.field.clone(),
        provenance: dataset.provenance.clone(),
    };
    write_json_line(&mut out, path, &header)?;
    for rec in &dataset.records {
        let line = RecordLine {
            ai: rec.index.angle,
            ri: rec.index.radius,
            theta: round_sig(rec.pose.theta),
            r: round_sig(rec.pose.r),
            p: round_sig(rec.p),
            dtheta: round_sig(rec.label.dtheta),
            dr: round_sig(rec.label.dr),
            reachable: rec.label.reachable,
            label_norm: rec.label_norm.map(round_sig),
            obs: rec.observation.features.iter().map(|&f| round_sig(f)).collect(),
        };
        write_json_line(&mut out, path, &line)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header_text = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::schema(path, 1, "missing header line")),
    };
    let header: HeaderLine = serde_json::from_str(&header_text)
        .map_err(|e| Error::schema(path, 1, format!("bad header: {e}")))?;
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::schema(
            path,
            1,
            format!(
                "unsupported schema_version {} (expected {DATASET_SCHEMA_VERSION})",
                header.schema_version
            ),
        ));
    }
    let grid = PoseGrid::new(header.n_angles, header.n_radii, header.r_min, header.r_max)
        .map_err(|e| Error::schema(path, 1, e.to_string()))?;
    let world = WorldConfig::new(grid, header.obs_dim, header.obs_noise_sigma, header.seeds.encoder)
        .map_err(|e| Error::schema(path, 1, e.to_string()))?;
    header
        .field_params
        .validate()
        .map_err(|e| Error::schema(path, 1, e.to_string()))?;
    validate_threshold(header.p_thres).map_err(|e| Error::schema(path, 1, e.to_string()))?;

    let mut records = Vec::with_capacity(header.n_records);
    let mut line_no = 1;
    for line in lines {
        line_no += 1;
        let text = line.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            return Err(Error::schema(path, line_no, "blank line"));
        }
        let rec: RecordLine = serde_json::from_str(&text)
            .map_err(|e| Error::schema(path, line_no, format!("bad record: {e}")))?;
        let index = GridIndex::new(rec.ai, rec.ri);
        check_index(&grid, index).map_err(|e| Error::schema(path, line_no, e.to_string()))?;
        if let Some(prev) = records.last().map(|r: &DatasetRecord| r.index) {
            if index <= prev {
                return Err(Error::schema(path, line_no, "records are not in angle-major order"));
            }
        }
        if rec.obs.len() != header.obs_dim {
            return Err(Error::schema(
                path,
                line_no,
                format!("observation has {} features, expected {}", rec.obs.len(), header.obs_dim),
            ));
        }
        records.push(DatasetRecord {
            index,
            pose: Pose {
                theta: rec.theta,
                r: rec.r,
            },
            observation: Observation { features: rec.obs },
            p: rec.p,
            label: NavigationLabel {
                dtheta: rec.dtheta,
                dr: rec.dr,
                reachable: rec.reachable,
            },
            label_norm: rec.label_norm,
        });
        if records.len() > header.n_records {
            return Err(Error::schema(
                path,
                line_no,
                format!("more records than the {} declared in the header", header.n_records),
            ));
        }
    }
    if records.len() != header.n_records {
        return Err(Error::schema(
            path,
            line_no + 1,
            format!(
                "file ends after {} records, header declares {}",
                records.len(),
                header.n_records
            ),
        ));
    }
    Ok(Dataset {
        world,
        field: header.field_params,
        p_thres: header.p_thres,
        radial_weight: header.radial_weight,
        noise_seed: header.seeds.noise,
        provenance: header.provenance,
        records,
    })
}
