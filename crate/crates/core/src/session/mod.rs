//! Interactive painting session: committed history with undo/redo, the four
//! assisted workflows, background stroke refinement and the wire protocol.

mod protocol;
mod refine;
mod server;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use crate::brush::{
    render_painter, BrushMode, PressureConfig, Stamp, StampSampler, StampShape, TextureBank, TextureId, Tip,
};
use crate::canvas::{Canvas, Mask, Rect, Rgb};
use crate::diff::{loss_mse, optimize_strokes, LossTrace, OptimConfig, ParamLayout, RenderSettings, Scene};
use crate::error::{Error, Result};
use crate::io::{
    load_session, quantize_stamp, quantize_stroke, save_session, HistoryRecord, LoadWarning, SessionFile, SmoothingParams,
    StampRecord,
};
use crate::predictor::{propose_next_stroke, IntentProvider, Proposal, ProposerConfig, ReferenceOracle};
use crate::sequencer::{plan_region, region_stamps, AttentionMap, NormalMap, SequencerConfig};
use crate::stroke::{plan_stamps, StrokeRecord};

pub use protocol::{decode_patch, ClientMessage, ErrorCode, HistoryEventKind, ProtocolHandler, ServerMessage};
pub use refine::{JobEvent, RefineJob, RefineStatus};
pub use server::{handle_connection, serve, POLL_INTERVAL};

/// Number of most recent undo (and redo) states that keep a full canvas.
pub const DEFAULT_UNDO_SNAPSHOTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub background: Rgb,
    /// `r_min / r_max` for expanding user strokes.
    pub pressure_min_ratio: f64,
    pub undo_snapshots: usize,
    /// Used by history optimization, completion and refinement.
    pub optim: OptimConfig,
    pub proposer: ProposerConfig,
    pub completion_mode: BrushMode,
    /// Completion steps over which the proposed radius decays from
    /// `r_max` to `r_min`.
    pub completion_horizon: usize,
    /// Region inpainting; `budget` is the stamp count per call.
    pub inpaint: SequencerConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            background: [1.0; 3],
            pressure_min_ratio: 0.1,
            undo_snapshots: DEFAULT_UNDO_SNAPSHOTS,
            optim: OptimConfig::default(),
            proposer: ProposerConfig::default(),
            completion_mode: BrushMode::Gaussian2d,
            completion_horizon: 100,
            inpaint: SequencerConfig {
                budget: 40,
                ..SequencerConfig::default()
            },
        }
    }
}

/// One committed history entry. User strokes keep their record; the stamps
/// are what is displayed and may differ from the record's expansion after
/// optimization or refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub id: u64,
    pub stroke: Option<StrokeRecord>,
    pub stamps: Vec<Stamp>,
}

#[derive(Debug, Clone)]
struct UndoState {
    history: Vec<Arc<HistoryEntry>>,
    /// Dropped for old states; rebuilt by replay.
    canvas: Option<Canvas>,
}

/// Which part of the canvas a commit changed, for superseding refine jobs.
#[derive(Debug, Clone, Copy)]
enum Touched {
    Region(Rect),
    All,
}

#[derive(Debug, Clone)]
pub struct HistoryOptimization {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// False when the optimized stamps did not lower the displayed loss and
    /// the history was left unchanged.
    pub accepted: bool,
    pub trace: LossTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompletionOutcome {
    Committed { id: u64, stamp: Stamp },
    /// The canvas matches the intent wherever strokes may be placed.
    Complete,
    /// No candidate stamp lowered the loss; nothing was committed.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintOutcome {
    /// `None` when no stamp was kept.
    pub id: Option<u64>,
    pub stamps: Vec<Stamp>,
    pub proposed: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Region-local `[0, 1]²` coordinates to canvas pixels.
pub fn local_to_global(rect: Rect, uv: [f64; 2]) -> [f64; 2] {
    [rect.x as f64 + uv[0] * rect.w as f64, rect.y as f64 + uv[1] * rect.h as f64]
}

pub fn global_to_local(rect: Rect, xy: [f64; 2]) -> [f64; 2] {
    [(xy[0] - rect.x as f64) / rect.w as f64, (xy[1] - rect.y as f64) / rect.h as f64]
}

/// Mean channel-summed squared error over the selected pixels.
pub fn masked_mse(a: &Canvas, b: &Canvas, mask: &Mask) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if mask.dims() != a.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: mask.dims(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in mask.pixels() {
        let (p, q) = (a.pixel(x, y), b.pixel(x, y));
        sum += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

fn scaled(stamp: &Stamp, f: f64) -> Stamp {
    let mut s = stamp.clone();
    match &mut s.shape {
        StampShape::Tip { radius, .. } => *radius *= f,
        StampShape::Gaussian { sigma_x, sigma_y } => {
            *sigma_x *= f;
            *sigma_y *= f;
        }
    }
    s
}

fn translate_all(stamps: &[Stamp], dx: f64, dy: f64) -> Vec<Stamp> {
    stamps.iter().map(|s| s.translated(dx, dy)).collect()
}

fn stamps_support(stamps: &[Stamp], textures: &TextureBank) -> Result<Rect> {
    let mut acc = Rect::new(0, 0, 0, 0);
    for s in stamps {
        acc = acc.union(&StampSampler::new(s, textures, 0.0)?.support());
    }
    Ok(acc)
}

fn crop_normals(n: &NormalMap, r: Rect) -> Result<NormalMap> {
    let (w, _) = n.dims();
    let data = (0..r.h)
        .flat_map(|j| (0..r.w).map(move |i| (i, j)))
        .map(|(i, j)| n.data()[(r.y as usize + j) * w + r.x as usize + i])
        .collect();
    NormalMap::new(r.w, r.h, data)
}

fn crop_attention(a: &AttentionMap, r: Rect) -> Result<AttentionMap> {
    let (w, _) = a.dims();
    let data = (0..r.h)
        .flat_map(|j| (0..r.w).map(move |i| (i, j)))
        .map(|(i, j)| a.data()[(r.y as usize + j) * w + r.x as usize + i])
        .collect();
    AttentionMap::new(r.w, r.h, data)
}

type JobResult = std::result::Result<Vec<Stamp>, String>;

struct JobQueue {
    jobs: HashMap<u64, RefineJob>,
    /// Stamps of the target entry at submission, to detect later edits.
    submitted: HashMap<u64, Vec<Stamp>>,
    order: VecDeque<u64>,
    results: HashMap<u64, JobResult>,
    events: Vec<JobEvent>,
    next: u64,
    tx: Sender<(u64, JobResult)>,
    rx: Receiver<(u64, JobResult)>,
}

impl JobQueue {
    fn new() -> Self {
        let (tx, rx) = channel();
        JobQueue {
            jobs: HashMap::new(),
            submitted: HashMap::new(),
            order: VecDeque::new(),
            results: HashMap::new(),
            events: Vec::new(),
            next: 1,
            tx,
            rx,
        }
    }

    fn set_status(&mut self, job_id: u64, status: RefineStatus) {
        if let Some(job) = self.jobs.get_mut(&job_id) {
            job.status = status;
            self.events.push(JobEvent {
                job_id,
                stroke_id: job.stroke_id,
                status,
            });
        }
    }

    fn supersede(&mut self, touched: Touched) {
        let hit: Vec<u64> = self
            .order
            .iter()
            .copied()
            .filter(|id| {
                let job = &self.jobs[id];
                job.status == RefineStatus::Pending
                    && match touched {
                        Touched::All => true,
                        Touched::Region(r) => r.intersects(&job.crop),
                    }
            })
            .collect();
        for id in hit {
            self.set_status(id, RefineStatus::Superseded);
        }
    }
}

/// Canvas, history and workflow state of one painting session. All mutation
/// goes through `&mut self`, so commits are atomic to observers.
pub struct Session {
    cfg: SessionConfig,
    width: usize,
    height: usize,
    textures: Arc<TextureBank>,
    canvas: Canvas,
    history: Vec<Arc<HistoryEntry>>,
    next_id: u64,
    lasso: Option<Mask>,
    intent: Option<Arc<dyn IntentProvider>>,
    guidance: Option<(NormalMap, AttentionMap)>,
    undo: Vec<UndoState>,
    redo: Vec<UndoState>,
    completion_steps: usize,
    jobs: JobQueue,
}

impl Session {
    pub fn new(width: usize, height: usize, cfg: SessionConfig) -> Result<Self> {
        Session::with_textures(width, height, cfg, Arc::new(TextureBank::new()))
    }

    pub fn with_textures(width: usize, height: usize, cfg: SessionConfig, textures: Arc<TextureBank>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("canvas must not be empty, got {width}x{height}")));
        }
        if !(cfg.pressure_min_ratio > 0.0 && cfg.pressure_min_ratio <= 1.0) {
            return Err(Error::param("pressure_min_ratio", cfg.pressure_min_ratio, "must lie in (0, 1]"));
        }
        Ok(Session {
            canvas: Canvas::new(width, height, cfg.background),
            cfg,
            width,
            height,
            textures,
            history: Vec::new(),
            next_id: 1,
            lasso: None,
            intent: None,
            guidance: None,
            undo: Vec::new(),
            redo: Vec::new(),
            completion_steps: 0,
            jobs: JobQueue::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn canvas(&self) -> &Canvas {
        &self.canvas
    }

    pub fn textures(&self) -> &Arc<TextureBank> {
        &self.textures
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &HistoryEntry> + '_ {
        self.history.iter().map(|e| e.as_ref())
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn entry(&self, id: u64) -> Option<&HistoryEntry> {
        self.history.iter().find(|e| e.id == id).map(|e| e.as_ref())
    }

    pub fn can_undo(&self) -> bool {
        !self.undo.is_empty()
    }

    pub fn can_redo(&self) -> bool {
        !self.redo.is_empty()
    }

    pub fn lasso(&self) -> Option<&Mask> {
        self.lasso.as_ref()
    }

    fn blank(&self) -> Canvas {
        Canvas::new(self.width, self.height, self.cfg.background)
    }

    fn render_entries(&self, entries: &[Arc<HistoryEntry>]) -> Result<Canvas> {
        let mut canvas = self.blank();
        for e in entries {
            render_painter(&mut canvas, &e.stamps, &self.textures, 0.0)?;
        }
        Ok(canvas)
    }

    /// Paint the whole history onto a blank canvas.
    pub fn replay(&self) -> Result<Canvas> {
        self.render_entries(&self.history)
    }

    pub fn set_intent(&mut self, provider: Arc<dyn IntentProvider>) {
        self.intent = Some(provider);
    }

    /// Use a fixed reference image as the intent.
    pub fn set_reference(&mut self, reference: Canvas) -> Result<()> {
        self.canvas.ensure_same_dims(&reference)?;
        self.intent = Some(Arc::new(ReferenceOracle::new(reference)));
        Ok(())
    }

    pub fn clear_intent(&mut self) {
        self.intent = None;
    }

    /// Set or clear the lasso from a polygon in canvas coordinates.
    pub fn set_lasso_polygon(&mut self, polygon: Option<&[[f64; 2]]>) -> Result<()> {
        let mask = polygon
            .map(|p| Mask::from_polygon(self.width, self.height, p))
            .transpose()?;
        self.set_lasso(mask)
    }

    pub fn set_lasso(&mut self, mask: Option<Mask>) -> Result<()> {
        if let Some(m) = &mask {
            if m.dims() != (self.width, self.height) {
                return Err(Error::DimensionMismatch {
                    expected: (self.width, self.height),
                    actual: m.dims(),
                });
            }
            if m.is_empty() {
                return Err(Error::EmptyMask);
            }
        }
        self.lasso = mask;
        Ok(())
    }

    /// Normal and attention maps used when sampling inpainting positions.
    /// Without them every pixel is equally likely and normals are flat.
    pub fn set_guidance(&mut self, normals: NormalMap, attention: AttentionMap) -> Result<()> {
        for dims in [normals.dims(), attention.dims()] {
            if dims != (self.width, self.height) {
                return Err(Error::DimensionMismatch {
                    expected: (self.width, self.height),
                    actual: dims,
                });
            }
        }
        self.guidance = Some((normals, attention));
        Ok(())
    }

    fn intent_image(&self) -> Result<Canvas> {
        let provider = self.intent.as_ref().ok_or(Error::NoIntent)?;
        let intent = provider.intent(&self.canvas)?;
        self.canvas.ensure_same_dims(&intent)?;
        Ok(intent)
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn keep_recent_canvases(stack: &mut [UndoState], keep: usize) {
        if stack.len() > keep {
            let i = stack.len() - 1 - keep;
            stack[i].canvas = None;
        }
    }

    fn current_state(&mut self) -> UndoState {
        UndoState {
            history: self.history.clone(),
            canvas: Some(self.canvas.clone()),
        }
    }

    fn restore(&mut self, state: UndoState) -> Result<()> {
        let canvas = match state.canvas {
            Some(c) => c,
            None => self.render_entries(&state.history)?,
        };
        self.history = state.history;
        self.canvas = canvas;
        Ok(())
    }

    fn commit(&mut self, history: Vec<Arc<HistoryEntry>>, canvas: Canvas, touched: Option<Touched>) {
        let prev = self.current_state();
        self.undo.push(prev);
        Self::keep_recent_canvases(&mut self.undo, self.cfg.undo_snapshots);
        self.redo.clear();
        self.history = history;
        self.canvas = canvas;
        if let Some(t) = touched {
            self.jobs.supersede(t);
        }
    }

    /// Revert the last commit. Returns false when there is nothing to undo.
    pub fn undo(&mut self) -> Result<bool> {
        let Some(state) = self.undo.pop() else {
            return Ok(false);
        };
        let cur = self.current_state();
        self.restore(state)?;
        self.redo.push(cur);
        Self::keep_recent_canvases(&mut self.redo, self.cfg.undo_snapshots);
        self.jobs.supersede(Touched::All);
        Ok(true)
    }

    /// Reapply the last undone commit. Returns false when there is nothing
    /// to redo.
    pub fn redo(&mut self) -> Result<bool> {
        let Some(state) = self.redo.pop() else {
            return Ok(false);
        };
        let cur = self.current_state();
        self.restore(state)?;
        self.undo.push(cur);
        Self::keep_recent_canvases(&mut self.undo, self.cfg.undo_snapshots);
        self.jobs.supersede(Touched::All);
        Ok(true)
    }

    fn commit_generated(&mut self, stamps: Vec<Stamp>, canvas: Canvas) -> Result<u64> {
        let touched = stamps_support(&stamps, &self.textures)?;
        let id = self.alloc_id();
        let mut history = self.history.clone();
        history.push(Arc::new(HistoryEntry { id, stroke: None, stamps }));
        self.commit(history, canvas, Some(Touched::Region(touched)));
        Ok(id)
    }

    /// Render a tablet stroke and append it to the history.
    pub fn apply_user_stroke(&mut self, stroke: StrokeRecord) -> Result<u64> {
        let stroke = quantize_stroke(&stroke);
        let pcfg = PressureConfig::from_base_size(stroke.base_size, self.cfg.pressure_min_ratio)?;
        let stamps = plan_stamps(&stroke, &pcfg)?;
        let mut canvas = self.canvas.clone();
        render_painter(&mut canvas, &stamps, &self.textures, 0.0)?;
        let touched = stamps_support(&stamps, &self.textures)?;
        let id = self.alloc_id();
        let mut history = self.history.clone();
        history.push(Arc::new(HistoryEntry {
            id,
            stroke: Some(stroke),
            stamps,
        }));
        self.commit(history, canvas, Some(Touched::Region(touched)));
        Ok(id)
    }

    /// Jointly optimize every committed stamp toward the intent. The result
    /// is kept only if it lowers the displayed loss; either way the call is
    /// one undo unit.
    pub fn optimize_history(&mut self) -> Result<HistoryOptimization> {
        if self.history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let intent = self.intent_image()?;
        let stamps: Vec<Stamp> = self.history.iter().flat_map(|e| e.stamps.iter().cloned()).collect();
        let background = self.blank();
        let scene = Scene::new(&background, &self.textures).with_settings(RenderSettings::for_stamps(&stamps));
        let layout = ParamLayout::new(self.width, self.height, stamps)?;
        let (best, trace) = optimize_strokes(&layout.encode(), &layout, &scene, &intent, &self.cfg.optim)?;
        let candidate: Vec<Stamp> = layout.decode(&best)?.iter().map(quantize_stamp).collect();
        let initial_loss = loss_mse(&self.canvas, &intent)?;
        let mut canvas = background;
        render_painter(&mut canvas, &candidate, &self.textures, 0.0)?;
        let after = loss_mse(&canvas, &intent)?;
        let accepted = after < initial_loss;
        let (history, canvas, final_loss) = if accepted {
            let mut rest = candidate.into_iter();
            let history = self
                .history
                .iter()
                .map(|e| {
                    Arc::new(HistoryEntry {
                        id: e.id,
                        stroke: e.stroke.clone(),
                        stamps: rest.by_ref().take(e.stamps.len()).collect(),
                    })
                })
                .collect();
            (history, canvas, after)
        } else {
            (self.history.clone(), self.canvas.clone(), initial_loss)
        };
        self.commit(history, canvas, Some(Touched::All));
        Ok(HistoryOptimization {
            initial_loss,
            final_loss,
            accepted,
            trace,
        })
    }

    /// Optimize one stamp against the intent inside a crop around it.
    fn optimize_local(&self, stamps: &[Stamp], crop: Rect, background: &Canvas, intent: &Canvas) -> Result<Vec<Stamp>> {
        if crop.is_empty() {
            return Ok(stamps.to_vec());
        }
        let (dx, dy) = (crop.x as f64, crop.y as f64);
        let local = translate_all(stamps, -dx, -dy);
        let bg = background.crop(crop);
        let target = intent.crop(crop);
        let scene = Scene::new(&bg, &self.textures).with_settings(RenderSettings::for_stamps(&local));
        let layout = ParamLayout::new(crop.w, crop.h, local)?;
        let (best, _) = optimize_strokes(&layout.encode(), &layout, &scene, &target, &self.cfg.optim)?;
        Ok(translate_all(&layout.decode(&best)?, dx, dy))
    }

    /// Propose, refine and commit one stamp. Commits only when the loss
    /// against the intent strictly drops; with an active lasso the stamp
    /// center always lies inside it.
    pub fn stroke_completion_step(&mut self) -> Result<CompletionOutcome> {
        let intent = self.intent_image()?;
        let context: Vec<Stamp> = self.history.iter().flat_map(|e| e.stamps.iter().cloned()).collect();
        let horizon = self.cfg.completion_horizon.max(1);
        let progress = (self.completion_steps as f64 / horizon as f64).min(1.0);
        let proposal = propose_next_stroke(
            &self.canvas,
            &intent,
            &context,
            self.lasso.as_ref(),
            progress,
            &self.cfg.proposer,
        )?;
        let vector = match proposal {
            Proposal::Complete => return Ok(CompletionOutcome::Complete),
            Proposal::Stroke(v) => v,
        };
        let proposed = vector.to_stamp(&self.cfg.completion_mode, self.width, self.height);
        let crop = stamps_support(std::slice::from_ref(&proposed), &self.textures)?
            .pad(2)
            .clip(self.width, self.height);

        let mut candidates = self.optimize_local(std::slice::from_ref(&proposed), crop, &self.canvas, &intent)?;
        candidates.push(proposed.clone());
        let mut smaller = scaled(&proposed, 0.5);
        while smaller.nominal_radius() >= 0.5 {
            candidates.push(smaller.clone());
            smaller = scaled(&smaller, 0.5);
        }
        // A one-pixel opaque dab at the proposal pixel always lowers a nonzero residual.
        let (px, py) = (proposed.x.floor(), proposed.y.floor());
        if px >= 0.0 && py >= 0.0 && (px as usize) < self.width && (py as usize) < self.height {
            let color = intent.pixel(px as usize, py as usize);
            candidates.push(Stamp::hard_round(px + 0.5, py + 0.5, 0.5, 1.0, color));
        }

        let before = loss_mse(&self.canvas, &intent)?;
        for cand in candidates.iter().map(quantize_stamp) {
            if cand.validate().is_err() {
                continue;
            }
            if self.lasso.as_ref().is_some_and(|m| !m.contains_point(cand.x, cand.y)) {
                continue;
            }
            let mut canvas = self.canvas.clone();
            render_painter(&mut canvas, std::slice::from_ref(&cand), &self.textures, 0.0)?;
            if loss_mse(&canvas, &intent)? < before {
                let id = self.commit_generated(vec![cand.clone()], canvas)?;
                self.completion_steps += 1;
                return Ok(CompletionOutcome::Committed { id, stamp: cand });
            }
        }
        Ok(CompletionOutcome::Stalled)
    }

    /// Generate stamps for the selected region with the sequencer, optimize
    /// them against the intent crop and commit them as one undo unit.
    /// Stamps are planned in region-local coordinates and mapped through the
    /// mask's bounding box. A stamp is kept only if its center lies in the
    /// mask and it does not raise the masked loss.
    pub fn region_inpaint(&mut self, mask: &Mask, label: u32, seed: u64) -> Result<InpaintOutcome> {
        if mask.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: mask.dims(),
            });
        }
        let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
        let intent = self.intent_image()?;
        let local_mask = mask.crop(bbox);
        let target = intent.crop(bbox);
        let (normals, attention) = match &self.guidance {
            Some((n, a)) => (crop_normals(n, bbox)?, crop_attention(a, bbox)?),
            None => (NormalMap::constant(bbox.w, bbox.h, [0.0, 0.0, 1.0])?, AttentionMap::uniform(bbox.w, bbox.h)),
        };
        let icfg = &self.cfg.inpaint;
        let region = plan_region(label, &local_mask, &normals, &attention, icfg.budget, icfg, seed)?;
        let initial: Vec<Stamp> = region_stamps(&region, &target, icfg).into_iter().map(|p| p.stamp).collect();
        let proposed = initial.len();

        let optimized = if initial.is_empty() {
            initial
        } else {
            let bg = self.canvas.crop(bbox);
            let scene = Scene::new(&bg, &self.textures).with_settings(RenderSettings::for_stamps(&initial));
            let layout = ParamLayout::new(bbox.w, bbox.h, initial)?;
            let (best, _) = optimize_strokes(&layout.encode(), &layout, &scene, &target, &icfg.optim)?;
            layout.decode(&best)?
        };
        let placed = optimized.into_iter().map(|s| {
            let uv = [s.x / bbox.w as f64, s.y / bbox.h as f64];
            let [x, y] = local_to_global(bbox, uv);
            quantize_stamp(&Stamp { x, y, ..s })
        });

        let loss_before = masked_mse(&self.canvas, &intent, mask)?;
        let mut loss = loss_before;
        let mut canvas = self.canvas.clone();
        let mut kept = Vec::new();
        for s in placed {
            if !mask.contains_point(s.x, s.y) {
                continue;
            }
            let mut next = canvas.clone();
            render_painter(&mut next, std::slice::from_ref(&s), &self.textures, 0.0)?;
            let l = masked_mse(&next, &intent, mask)?;
            if l <= loss {
                canvas = next;
                loss = l;
                kept.push(s);
            }
        }
        let id = if kept.is_empty() {
            None
        } else {
            Some(self.commit_generated(kept.clone(), canvas)?)
        };
        Ok(InpaintOutcome {
            id,
            stamps: kept,
            proposed,
            loss_before,
            loss_after: loss,
        })
    }

    /// Queue background refinement of one history entry. The job optimizes
    /// the entry's stamps inside its padded bounding box and commits through
    /// [`Session::poll_jobs`] in submission order.
    pub fn dynamic_brush_refine(&mut self, stroke_id: u64) -> Result<u64> {
        self.dynamic_brush_refine_delayed(stroke_id, Duration::ZERO)
    }

    /// Like [`Session::dynamic_brush_refine`] with the worker sleeping for
    /// `delay` before it starts.
    pub fn dynamic_brush_refine_delayed(&mut self, stroke_id: u64, delay: Duration) -> Result<u64> {
        let idx = self
            .history
            .iter()
            .position(|e| e.id == stroke_id)
            .ok_or(Error::UnknownEntry(stroke_id))?;
        let intent = self.intent_image()?;
        let entry = self.history[idx].clone();
        let crop = refine::crop_for(&entry.stamps, self.width, self.height)?;
        let background = self.render_entries(&self.history[..idx])?.crop(crop);
        let job_id = self.jobs.next;
        self.jobs.next += 1;
        let input = refine::RefineInput {
            stamps: entry.stamps.clone(),
            crop,
            background,
            target: intent.crop(crop),
            textures: self.textures.clone(),
            optim: self.cfg.optim.clone(),
            delay,
        };
        self.jobs.jobs.insert(
            job_id,
            RefineJob {
                job_id,
                stroke_id,
                crop,
                status: RefineStatus::Pending,
                result: None,
                error: None,
            },
        );
        self.jobs.submitted.insert(job_id, entry.stamps.clone());
        self.jobs.order.push_back(job_id);
        let tx = self.jobs.tx.clone();
        std::thread::spawn(move || {
            let result = refine::run(input).map_err(|e| e.to_string());
            let _ = tx.send((job_id, result));
        });
        Ok(job_id)
    }

    pub fn job(&self, job_id: u64) -> Option<&RefineJob> {
        self.jobs.jobs.get(&job_id)
    }

    pub fn pending_jobs(&self) -> usize {
        self.jobs.order.len()
    }

    fn commit_ready_jobs(&mut self) -> Result<()> {
        while let Some(&job_id) = self.jobs.order.front() {
            if self.jobs.jobs[&job_id].status != RefineStatus::Pending {
                self.jobs.order.pop_front();
                continue;
            }
            let Some(result) = self.jobs.results.remove(&job_id) else {
                break;
            };
            self.jobs.order.pop_front();
            let stroke_id = self.jobs.jobs[&job_id].stroke_id;
            let submitted = self.jobs.submitted.remove(&job_id).unwrap_or_default();
            match result {
                Err(msg) => {
                    self.jobs.jobs.get_mut(&job_id).expect("queued job").error = Some(msg);
                    self.jobs.set_status(job_id, RefineStatus::Failed);
                }
                Ok(stamps) => {
                    let stamps: Vec<Stamp> = stamps.iter().map(quantize_stamp).collect();
                    let idx = self.history.iter().position(|e| e.id == stroke_id);
                    match idx {
                        Some(i) if self.history[i].stamps == submitted => {
                            let mut history = self.history.clone();
                            history[i] = Arc::new(HistoryEntry {
                                id: stroke_id,
                                stroke: history[i].stroke.clone(),
                                stamps: stamps.clone(),
                            });
                            let canvas = self.render_entries(&history)?;
                            self.commit(history, canvas, None);
                            self.jobs.jobs.get_mut(&job_id).expect("queued job").result = Some(stamps);
                            self.jobs.set_status(job_id, RefineStatus::Done);
                        }
                        _ => self.jobs.set_status(job_id, RefineStatus::Superseded),
                    }
                }
            }
        }
        Ok(())
    }

    /// Collect finished jobs and commit every job whose predecessors are
    /// resolved. Returns the status changes since the last call.
    pub fn poll_jobs(&mut self) -> Result<Vec<JobEvent>> {
        while let Ok((id, result)) = self.jobs.rx.try_recv() {
            self.jobs.results.insert(id, result);
        }
        self.commit_ready_jobs()?;
        Ok(std::mem::take(&mut self.jobs.events))
    }

    /// Block until every queued job is committed or discarded.
    pub fn drain_jobs(&mut self) -> Result<Vec<JobEvent>> {
        let mut events = self.poll_jobs()?;
        while !self.jobs.order.is_empty() {
            let (id, result) = self
                .jobs
                .rx
                .recv()
                .map_err(|_| Error::Invalid("refine worker channel closed".into()))?;
            self.jobs.results.insert(id, result);
            events.extend(self.poll_jobs()?);
        }
        Ok(events)
    }

    /// Serializable form of the session.
    pub fn to_file(&self) -> Result<SessionFile> {
        let mut file = SessionFile::new(self.width, self.height, self.cfg.background);
        file.pressure_min_ratio = self.cfg.pressure_min_ratio;
        file.textures = self.referenced_textures();
        for e in &self.history {
            let records = || e.stamps.iter().map(|s| StampRecord::from_stamp(s, None)).collect();
            file.strokes.push(match &e.stroke {
                Some(stroke) => {
                    let pcfg = PressureConfig::from_base_size(stroke.base_size, self.cfg.pressure_min_ratio)?;
                    let edited = plan_stamps(stroke, &pcfg)? != e.stamps;
                    HistoryRecord::User {
                        id: e.id,
                        stroke: stroke.clone(),
                        stamps: edited.then(records),
                    }
                }
                None => HistoryRecord::Generated {
                    id: e.id,
                    stamps: records(),
                },
            });
        }
        Ok(file)
    }

    /// Rebuild a session from a file; the canvas is the replayed history.
    /// Background, pressure ratio and canvas size come from the file.
    pub fn from_file(file: &SessionFile, textures: Arc<TextureBank>, mut cfg: SessionConfig) -> Result<Self> {
        if file.smoothing != SmoothingParams::default() {
            return Err(Error::Schema {
                path: "smoothing".into(),
                message: "only the 0.7/0.3 pressure filter is supported".into(),
            });
        }
        for id in &file.textures {
            textures.get(id)?;
        }
        cfg.background = file.background;
        cfg.pressure_min_ratio = file.pressure_min_ratio;
        let mut session = Session::with_textures(file.canvas.width, file.canvas.height, cfg, textures)?;
        let mut seen = BTreeSet::new();
        for (i, rec) in file.strokes.iter().enumerate() {
            if !seen.insert(rec.id()) {
                return Err(Error::Schema {
                    path: format!("strokes[{i}].id"),
                    message: format!("duplicate history id {}", rec.id()),
                });
            }
            let to_stamps = |records: &[StampRecord]| records.iter().map(StampRecord::to_stamp).collect::<Result<Vec<_>>>();
            let entry = match rec {
                HistoryRecord::User { id, stroke, stamps } => {
                    let stamps = match stamps {
                        Some(r) => to_stamps(r)?,
                        None => {
                            let pcfg = PressureConfig::from_base_size(stroke.base_size, session.cfg.pressure_min_ratio)?;
                            plan_stamps(stroke, &pcfg)?
                        }
                    };
                    HistoryEntry {
                        id: *id,
                        stroke: Some(stroke.clone()),
                        stamps,
                    }
                }
                HistoryRecord::Generated { id, stamps } => HistoryEntry {
                    id: *id,
                    stroke: None,
                    stamps: to_stamps(stamps)?,
                },
            };
            session.history.push(Arc::new(entry));
        }
        session.next_id = seen.last().map_or(1, |m| m + 1);
        session.canvas = session.replay()?;
        Ok(session)
    }

    pub fn save(&self) -> Result<Vec<u8>> {
        save_session(&self.to_file()?)
    }

    pub fn load(bytes: &[u8], textures: Arc<TextureBank>, cfg: SessionConfig) -> Result<(Self, Vec<LoadWarning>)> {
        let (file, warnings) = load_session(bytes)?;
        Ok((Session::from_file(&file, textures, cfg)?, warnings))
    }

    /// Texture ids referenced by committed stamps.
    pub fn referenced_textures(&self) -> Vec<TextureId> {
        let set: BTreeSet<TextureId> = self
            .history
            .iter()
            .flat_map(|e| e.stamps.iter())
            .filter_map(|s| match &s.shape {
                StampShape::Tip {
                    tip: Tip::Texture(id), ..
                } => Some(id.clone()),
                _ => None,
            })
            .collect();
        set.into_iter().collect()
    }
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("history_len", &self.history.len())
            .field("undo", &self.undo.len())
            .field("redo", &self.redo.len())
            .field("pending_jobs", &self.jobs.order.len())
            .finish()
    }
}

#[cfg(test)]
mod tests;
