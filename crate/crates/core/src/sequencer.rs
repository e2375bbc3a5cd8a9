//! Coarse-to-fine stroke plan generation from a target image and per-pixel
//! label, normal and attention rasters.
//!
//! Regions are visited in label-table order. Inside a region, stamp positions
//! are drawn from the attention map, scored by `100 * var_hat + attn_hat`
//! (both min-max normalized over the region) and emitted in ascending score
//! order with linearly decaying brush sizes.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::brush::{render_painter, BrushMode, Stamp, TextureBank};
use crate::canvas::{Canvas, Mask, Rgb};
use crate::diff::{optimize_strokes, LossTrace, OptimConfig, ParamLayout, RenderSettings, Scene};
use crate::error::{Error, Result};

pub const MAX_ORDERED_LABELS: usize = 15;
pub const NORMAL_WINDOW: usize = 8;
pub const SCORE_VARIANCE_WEIGHT: f64 = 100.0;
const SAMPLE_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderEntry {
    pub id: u32,
    pub name: String,
    pub ignore: bool,
}

/// Label ids, coarsest first. Lines read `id name [ignore]`; `#` starts a
/// comment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OrderTable {
    entries: Vec<OrderEntry>,
}

impl OrderTable {
    pub fn new(entries: Vec<OrderEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(Error::Invalid(format!("label {} listed twice", e.id)));
            }
        }
        let ordered = entries.iter().filter(|e| !e.ignore).count();
        if ordered > MAX_ORDERED_LABELS {
            return Err(Error::Invalid(format!(
                "at most {MAX_ORDERED_LABELS} ordered labels allowed, got {ordered}"
            )));
        }
        Ok(OrderTable { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts
                .next()
                .and_then(|t| t.parse::<u32>().ok())
                .ok_or_else(|| Error::Invalid(format!("order table line {}: expected a label id", n + 1)))?;
            let name = parts
                .next()
                .ok_or_else(|| Error::Invalid(format!("order table line {}: missing label name", n + 1)))?
                .to_string();
            let ignore = match parts.next() {
                None => false,
                Some("ignore") => true,
                Some(t) => {
                    return Err(Error::Invalid(format!("order table line {}: unexpected token {t:?}", n + 1)))
                }
            };
            entries.push(OrderEntry { id, name, ignore });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                if e.ignore {
                    format!("{} {} ignore\n", e.id, e.name)
                } else {
                    format!("{} {}\n", e.id, e.name)
                }
            })
            .collect()
    }

    pub fn entries(&self) -> &[OrderEntry] {
        &self.entries
    }

    /// Non-ignored label ids, coarsest first.
    pub fn ordered_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().filter(|e| !e.ignore).map(|e| e.id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    ids: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: ids.len(),
            });
        }
        Ok(LabelMap { width, height, ids })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.ids[y * self.width + x]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self, id: u32) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.get(x, y) == id)
    }

    /// Every pixel's label must appear in the table.
    pub fn check_against(&self, table: &OrderTable) -> Result<()> {
        let known: HashSet<u32> = table.entries().iter().map(|e| e.id).collect();
        match self.ids.iter().find(|id| !known.contains(id)) {
            Some(id) => Err(Error::Invalid(format!("label {id} is not in the order table"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl NormalMap {
    pub const NORM_TOLERANCE: f64 = 1e-3;

    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        for n in &data {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !((len - 1.0).abs() <= Self::NORM_TOLERANCE) {
                return Err(Error::param("normal length", len, "must be 1 within 1e-3"));
            }
        }
        Ok(NormalMap { width, height, data })
    }

    pub fn constant(width: usize, height: usize, n: [f64; 3]) -> Result<Self> {
        Self::new(width, height, vec![n; width * height])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::param("attention", *v, "must be finite and >= 0"));
        }
        Ok(AttentionMap { width, height, data })
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        AttentionMap {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Mean over the three components of the population variance inside the
/// 8×8 window `[x-4, x+3] × [y-4, y+3]`, truncated at the raster border.
pub fn local_normal_variance(normals: &NormalMap, x: usize, y: usize) -> Result<f64> {
    let (w, h) = normals.dims();
    if x >= w || y >= h {
        return Err(Error::Invalid(format!("pixel ({x}, {y}) outside {w}x{h} raster")));
    }
    let half = NORMAL_WINDOW / 2;
    let (x0, x1) = (x.saturating_sub(half), (x + half).min(w));
    let (y0, y1) = (y.saturating_sub(half), (y + half).min(h));
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let mut sum = [0.0; 3];
    for j in y0..y1 {
        for i in x0..x1 {
            let v = normals.get(i, j);
            (0..3).for_each(|c| sum[c] += v[c]);
        }
    }
    let mean = sum.map(|s| s / n);
    let mut var = 0.0;
    for j in y0..y1 {
        for i in x0..x1 {
            let v = normals.get(i, j);
            var += (0..3).map(|c| (v[c] - mean[c]).powi(2)).sum::<f64>();
        }
    }
    Ok(var / (3.0 * n))
}

/// Draws `n` pixel positions inside `mask` with probability proportional to
/// attention (uniform when the mask carries no attention). A draw within
/// 1 px of an earlier one is re-drawn up to 16 times; the last attempt is
/// kept.
pub fn sample_positions(attn: &AttentionMap, mask: &Mask, n: usize, seed: u64) -> Result<Vec<[usize; 2]>> {
    if attn.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: attn.dims(),
            actual: mask.dims(),
        });
    }
    if n == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let pixels: Vec<[usize; 2]> = mask.pixels().map(|(x, y)| [x, y]).collect();
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let weights: Vec<f64> = pixels.iter().map(|p| attn.get(p[0], p[1])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weighted = WeightedIndex::new(&weights).ok();
    let uniform = Uniform::new(0, pixels.len());
    let draw = |rng: &mut ChaCha8Rng| match &weighted {
        Some(d) => d.sample(rng),
        None => uniform.sample(rng),
    };
    let mut taken: HashSet<[usize; 2]> = HashSet::new();
    let near = |taken: &HashSet<[usize; 2]>, p: [usize; 2]| {
        let [x, y] = p;
        taken.contains(&p)
            || taken.contains(&[x + 1, y])
            || taken.contains(&[x, y + 1])
            || (x > 0 && taken.contains(&[x - 1, y]))
            || (y > 0 && taken.contains(&[x, y - 1]))
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = pixels[draw(&mut rng)];
        for _ in 0..SAMPLE_RETRIES {
            if !near(&taken, p) {
                break;
            }
            p = pixels[draw(&mut rng)];
        }
        taken.insert(p);
        out.push(p);
    }
    Ok(out)
}

/// Min-max normalization to `[0, 1]`; a constant input maps to zeros.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPosition {
    pub x: usize,
    pub y: usize,
    pub variance: f64,
    pub attention: f64,
    pub score: f64,
    /// Index in draw order.
    pub index: usize,
}

/// Sorts by ascending `100 * variance + attention`, ties by draw index.
pub fn score_and_order(positions: &[[usize; 2]], variance: &[f64], attention: &[f64]) -> Result<Vec<ScoredPosition>> {
    if variance.len() != positions.len() || attention.len() != positions.len() {
        return Err(Error::LengthMismatch {
            expected: positions.len(),
            actual: variance.len().min(attention.len()),
        });
    }
    let mut items: Vec<ScoredPosition> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| ScoredPosition {
            x: p[0],
            y: p[1],
            variance: variance[i],
            attention: attention[i],
            score: SCORE_VARIANCE_WEIGHT * variance[i] + attention[i],
            index: i,
        })
        .collect();
    items.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(items)
}

/// `r_max - (r_max - r_min) k / (n - 1)` for `k = 0..n`.
pub fn assign_brush_sizes(n: usize, r_max: f64, r_min: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Invalid("size count must be at least 1".into()));
    }
    if !(r_min > 0.0) || !r_min.is_finite() {
        return Err(Error::param("r_min", r_min, "must be positive"));
    }
    if !(r_max >= r_min) || !r_max.is_finite() {
        return Err(Error::param("r_max", r_max, "must be >= r_min"));
    }
    if n == 1 {
        return Ok(vec![r_max]);
    }
    let span = r_max - r_min;
    Ok((0..n).map(|k| r_max - span * k as f64 / (n - 1) as f64).collect())
}

/// Splits `budget` across regions proportionally to `weights` (largest
/// remainder, ties to the earlier region), then lifts empty allocations to 1
/// by taking from the largest ones.
pub fn allocate_budget(weights: &[f64], budget: usize) -> Result<Vec<usize>> {
    if weights.len() > budget {
        return Err(Error::Invalid(format!(
            "budget {budget} cannot give each of {} regions a stroke",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Invalid("region weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| budget as f64 * w / total).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = budget - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    while let Some(zero) = alloc.iter().position(|&n| n == 0) {
        let donor = (0..alloc.len()).max_by_key(|&i| (alloc[i], std::cmp::Reverse(i))).expect("nonempty");
        alloc[donor] -= 1;
        alloc[zero] = 1;
    }
    Ok(alloc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencerConfig {
    /// Total number of stamps across all regions.
    pub budget: usize,
    pub mode: BrushMode,
    pub r_region_min: f64,
    /// Region maximum size as a fraction of the region's bounding-box diagonal.
    pub r_region_max_fraction: f64,
    pub initial_pressure: f64,
    /// Per-label multipliers on region area for budget allocation.
    pub label_weights: BTreeMap<u32, f64>,
    pub background: Rgb,
    pub optim: OptimConfig,
    pub render: RenderSettings,
    /// Optimize all stamps at once; otherwise region by region.
    pub joint: bool,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        SequencerConfig {
            budget: 300,
            mode: BrushMode::Gaussian2d,
            r_region_min: 2.0,
            r_region_max_fraction: 0.25,
            initial_pressure: 0.8,
            label_weights: BTreeMap::new(),
            background: [1.0; 3],
            optim: OptimConfig::default(),
            render: RenderSettings::default(),
            joint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionPlan {
    pub label: u32,
    pub budget: usize,
    pub r_max: f64,
    pub r_min: f64,
    /// Emission order.
    pub positions: Vec<ScoredPosition>,
    pub sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStamp {
    pub stamp: Stamp,
    pub label: Option<u32>,
}

/// Ordered stamps plus per-stamp region annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokePlan {
    pub mode: BrushMode,
    pub stamps: Vec<PlannedStamp>,
}

impl StrokePlan {
    pub fn stamps(&self) -> Vec<Stamp> {
        self.stamps.iter().map(|p| p.stamp.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }
}

fn region_seed(seed: u64, label: u32) -> u64 {
    seed ^ (label as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples, scores, orders and sizes one region.
pub fn plan_region(
    label: u32,
    mask: &Mask,
    normals: &NormalMap,
    attn: &AttentionMap,
    n: usize,
    cfg: &SequencerConfig,
    seed: u64,
) -> Result<RegionPlan> {
    let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let r_min = cfg.r_region_min;
    let r_max = (cfg.r_region_max_fraction * (bbox.w as f64).hypot(bbox.h as f64)).max(r_min);
    let positions = sample_positions(attn, mask, n, seed)?;
    let var = positions
        .iter()
        .map(|p| local_normal_variance(normals, p[0], p[1]))
        .collect::<Result<Vec<_>>>()?;
    let att: Vec<f64> = positions.iter().map(|p| attn.get(p[0], p[1])).collect();
    let ordered = score_and_order(&positions, &normalize_min_max(&var), &normalize_min_max(&att))?;
    let sizes = assign_brush_sizes(n, r_max, r_min)?;
    Ok(RegionPlan {
        label,
        budget: n,
        r_max,
        r_min,
        positions: ordered,
        sizes,
    })
}

/// Region plans in label order for every non-empty, non-ignored label.
pub fn plan_regions(
    labels: &LabelMap,
    table: &OrderTable,
    normals: &NormalMap,
    attn: &AttentionMap,
    cfg: &SequencerConfig,
    seed: u64,
) -> Result<Vec<RegionPlan>> {
    let dims = labels.dims();
    for other in [normals.dims(), attn.dims()] {
        if other != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: other,
            });
        }
    }
    if table.ordered_ids().next().is_none() {
        return Err(Error::Invalid("order table has no ordered labels".into()));
    }
    labels.check_against(table)?;
    let regions: Vec<(u32, Mask)> = table
        .ordered_ids()
        .map(|id| (id, labels.mask(id)))
        .filter(|(_, m)| !m.is_empty())
        .collect();
    if regions.is_empty() {
        return Err(Error::EmptyMask);
    }
    let weights: Vec<f64> = regions
        .iter()
        .map(|(id, m)| m.count() as f64 * cfg.label_weights.get(id).copied().unwrap_or(1.0))
        .collect();
    let alloc = allocate_budget(&weights, cfg.budget)?;
    regions
        .iter()
        .zip(alloc)
        .map(|((id, mask), n)| plan_region(*id, mask, normals, attn, n, cfg, region_seed(seed, *id)))
        .collect()
}

/// Initial stamps of a region plan: target color at each position, theta 0.
pub fn region_stamps(region: &RegionPlan, target: &Canvas, cfg: &SequencerConfig) -> Vec<PlannedStamp> {
    region
        .positions
        .iter()
        .zip(&region.sizes)
        .map(|(p, &size)| PlannedStamp {
            stamp: Stamp::with_mode(
                &cfg.mode,
                p.x as f64 + 0.5,
                p.y as f64 + 0.5,
                size,
                0.0,
                cfg.initial_pressure,
                target.pixel(p.x, p.y),
            ),
            label: Some(region.label),
        })
        .collect()
}

pub fn build_stroke_plan(
    target: &Canvas,
    labels: &LabelMap,
    table: &OrderTable,
    normals: &NormalMap,
    attn: &AttentionMap,
    cfg: &SequencerConfig,
    seed: u64,
) -> Result<StrokePlan> {
    if target.dims() != labels.dims() {
        return Err(Error::DimensionMismatch {
            expected: labels.dims(),
            actual: target.dims(),
        });
    }
    let regions = plan_regions(labels, table, normals, attn, cfg, seed)?;
    let stamps = regions.iter().flat_map(|r| region_stamps(r, target, cfg)).collect();
    Ok(StrokePlan {
        mode: cfg.mode.clone(),
        stamps,
    })
}

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub initial: StrokePlan,
    pub plan: StrokePlan,
    /// One trace for joint optimization, one per region otherwise.
    pub traces: Vec<LossTrace>,
    /// Painter's-algorithm canvas after every stamp.
    pub snapshots: Vec<Canvas>,
}

/// Optimize `plan` against `target`, jointly or one region at a time.
pub fn optimize_plan(
    plan: &StrokePlan,
    target: &Canvas,
    textures: &TextureBank,
    cfg: &SequencerConfig,
) -> Result<(StrokePlan, Vec<LossTrace>)> {
    let (w, h) = target.dims();
    let background = Canvas::new(w, h, cfg.background);
    let scene = Scene::new(&background, textures).with_settings(cfg.render);
    let mut stamps = plan.stamps();
    let groups: Vec<Vec<bool>> = if cfg.joint {
        vec![vec![true; stamps.len()]]
    } else {
        let mut labels: Vec<Option<u32>> = plan.stamps.iter().map(|s| s.label).collect();
        labels.dedup();
        labels
            .iter()
            .map(|l| plan.stamps.iter().map(|s| s.label == *l).collect())
            .collect()
    };
    let mut traces = Vec::new();
    for free in groups {
        let layout = ParamLayout::with_free(w, h, stamps.clone(), |i, _| free[i])?;
        let (best, trace) = optimize_strokes(&layout.encode(), &layout, &scene, target, &cfg.optim)?;
        stamps = layout.decode(&best)?;
        traces.push(trace);
    }
    let out = plan
        .stamps
        .iter()
        .zip(stamps)
        .map(|(p, stamp)| PlannedStamp { stamp, label: p.label })
        .collect();
    Ok((
        StrokePlan {
            mode: plan.mode.clone(),
            stamps: out,
        },
        traces,
    ))
}

/// Canvas after each stamp when painted in order onto `background`.
pub fn replay_snapshots(stamps: &[Stamp], background: &Canvas, textures: &TextureBank) -> Result<Vec<Canvas>> {
    let mut canvas = background.clone();
    let mut out = Vec::with_capacity(stamps.len());
    for s in stamps {
        render_painter(&mut canvas, std::slice::from_ref(s), textures, 0.0)?;
        out.push(canvas.clone());
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_dataset_entry(
    target: &Canvas,
    labels: &LabelMap,
    table: &OrderTable,
    normals: &NormalMap,
    attn: &AttentionMap,
    textures: &TextureBank,
    cfg: &SequencerConfig,
    seed: u64,
) -> Result<DatasetEntry> {
    let initial = build_stroke_plan(target, labels, table, normals, attn, cfg, seed)?;
    let (plan, traces) = optimize_plan(&initial, target, textures, cfg)?;
    let background = Canvas::new(target.width(), target.height(), cfg.background);
    let snapshots = replay_snapshots(&plan.stamps(), &background, textures)?;
    Ok(DatasetEntry {
        initial,
        plan,
        traces,
        snapshots,
    })
}
