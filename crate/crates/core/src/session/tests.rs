use super::*;
use crate::brush::BrushMode;
use crate::stroke::TabletSample;

fn stroke(x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb) -> StrokeRecord {
    StrokeRecord {
        tool: BrushMode::HardRound,
        base_size: 3.0,
        color,
        smoothing: true,
        samples: (0..5)
            .map(|i| {
                let t = i as f64 / 4.0;
                TabletSample::new(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, 0.6 + 0.1 * t, i as f64 * 8.0)
            })
            .collect(),
    }
}

fn quick_cfg() -> SessionConfig {
    let mut cfg = SessionConfig::default();
    cfg.optim.iterations = 8;
    cfg.inpaint.budget = 12;
    cfg.inpaint.optim.iterations = 8;
    cfg
}

fn reference(w: usize, h: usize) -> Canvas {
    let mut c = Canvas::new(w, h, [1.0; 3]);
    for y in 0..h {
        for x in 0..w {
            if x < w / 2 && y < h / 2 {
                c.set_pixel(x, y, [0.8, 0.2, 0.1]);
            } else if x >= w / 2 && y >= h / 2 {
                c.set_pixel(x, y, [0.1, 0.3, 0.7]);
            }
        }
    }
    c
}

#[test]
fn stroke_then_undo_restores_canvas() {
    let mut s = Session::new(32, 32, quick_cfg()).unwrap();
    let blank = s.canvas().clone();
    let a = s.apply_user_stroke(stroke(4.0, 4.0, 20.0, 10.0, [0.2, 0.4, 0.6])).unwrap();
    let b = s.apply_user_stroke(stroke(10.0, 25.0, 28.0, 5.0, [0.9, 0.1, 0.1])).unwrap();
    assert!(a < b);
    assert_eq!(s.history_len(), 2);
    assert_eq!(&s.replay().unwrap(), s.canvas());
    let after_two = s.canvas().clone();
    assert!(s.undo().unwrap());
    assert!(s.undo().unwrap());
    assert_eq!(s.canvas(), &blank);
    assert!(!s.undo().unwrap());
    assert!(s.redo().unwrap());
    assert!(s.redo().unwrap());
    assert_eq!(s.canvas(), &after_two);
    assert!(!s.redo().unwrap());
}

#[test]
fn new_commit_clears_redo() {
    let mut s = Session::new(16, 16, quick_cfg()).unwrap();
    s.apply_user_stroke(stroke(2.0, 2.0, 10.0, 10.0, [0.0; 3])).unwrap();
    s.undo().unwrap();
    assert!(s.can_redo());
    s.apply_user_stroke(stroke(3.0, 3.0, 12.0, 4.0, [0.5; 3])).unwrap();
    assert!(!s.can_redo());
}

#[test]
fn malformed_stroke_is_rejected_without_change() {
    let mut s = Session::new(16, 16, quick_cfg()).unwrap();
    let mut bad = stroke(1.0, 1.0, 5.0, 5.0, [0.1; 3]);
    bad.samples.clear();
    assert!(matches!(s.apply_user_stroke(bad), Err(Error::EmptyStroke)));
    assert_eq!(s.history_len(), 0);
    assert!(!s.can_undo());
}

#[test]
fn old_undo_states_fall_back_to_replay() {
    let cfg = SessionConfig {
        undo_snapshots: 2,
        ..quick_cfg()
    };
    let mut s = Session::new(24, 24, cfg).unwrap();
    let mut states = vec![s.canvas().clone()];
    for i in 0..6 {
        let f = i as f64;
        s.apply_user_stroke(stroke(f * 3.0, 2.0, 20.0 - f, 20.0, [0.1 * f, 0.5, 0.2])).unwrap();
        states.push(s.canvas().clone());
    }
    assert_eq!(s.undo.iter().filter(|u| u.canvas.is_some()).count(), 2);
    for expected in states.iter().rev().skip(1) {
        s.undo().unwrap();
        assert_eq!(s.canvas(), expected);
    }
    for expected in states.iter().skip(1) {
        s.redo().unwrap();
        assert_eq!(s.canvas(), expected);
    }
}

#[test]
fn workflows_need_intent_and_history() {
    let mut s = Session::new(16, 16, quick_cfg()).unwrap();
    assert!(matches!(s.optimize_history(), Err(Error::EmptyHistory)));
    s.apply_user_stroke(stroke(2.0, 2.0, 10.0, 10.0, [0.0; 3])).unwrap();
    assert!(matches!(s.optimize_history(), Err(Error::NoIntent)));
    assert!(matches!(s.stroke_completion_step(), Err(Error::NoIntent)));
    assert!(matches!(s.dynamic_brush_refine(99), Err(Error::UnknownEntry(99))));
}

#[test]
fn optimize_history_at_optimum_keeps_parameters() {
    let mut s = Session::new(24, 24, quick_cfg()).unwrap();
    s.apply_user_stroke(stroke(3.0, 3.0, 20.0, 18.0, [0.3, 0.6, 0.9])).unwrap();
    let before: Vec<HistoryEntry> = s.history().cloned().collect();
    s.set_reference(s.canvas().clone()).unwrap();
    let r = s.optimize_history().unwrap();
    assert!(!r.accepted);
    assert_eq!(r.initial_loss, 0.0);
    let after: Vec<HistoryEntry> = s.history().cloned().collect();
    assert_eq!(after, before);
}

#[test]
fn optimize_history_moves_misplaced_stamp_toward_intent() {
    let mut s = Session::new(32, 32, quick_cfg()).unwrap();
    let target_stamp = Stamp::gaussian(18.0, 15.0, 4.0, 4.0, 0.0, [0.2, 0.3, 0.8]);
    let mut reference = Canvas::new(32, 32, [1.0; 3]);
    render_painter(&mut reference, std::slice::from_ref(&target_stamp), &TextureBank::new(), 0.0).unwrap();
    let blank = s.canvas().clone();
    let misplaced = target_stamp.translated(-2.5, 1.5);
    let mut canvas = blank.clone();
    render_painter(&mut canvas, std::slice::from_ref(&misplaced), &TextureBank::new(), 0.0).unwrap();
    s.commit_generated(vec![misplaced], canvas).unwrap();
    s.set_reference(reference).unwrap();
    let r = s.optimize_history().unwrap();
    assert!(r.accepted);
    assert!(r.final_loss < r.initial_loss);
    assert_eq!(s.history_len(), 1);
    assert_eq!(&s.replay().unwrap(), s.canvas());
    s.undo().unwrap();
    assert_eq!(s.history().next().unwrap().stamps[0].x, 15.5);
}

#[test]
fn completion_is_monotone_and_ends_complete() {
    let mut s = Session::new(16, 16, quick_cfg()).unwrap();
    s.set_reference(s.canvas().clone()).unwrap();
    assert_eq!(s.stroke_completion_step().unwrap(), CompletionOutcome::Complete);

    let reference = reference(16, 16);
    s.set_reference(reference.clone()).unwrap();
    let mut last = loss_mse(s.canvas(), &reference).unwrap();
    for _ in 0..30 {
        match s.stroke_completion_step().unwrap() {
            CompletionOutcome::Committed { .. } => {}
            other => panic!("unexpected {other:?}"),
        }
        let l = loss_mse(s.canvas(), &reference).unwrap();
        assert!(l < last);
        last = l;
    }
    assert_eq!(&s.replay().unwrap(), s.canvas());
}

#[test]
fn completion_respects_lasso() {
    let mut s = Session::new(24, 24, quick_cfg()).unwrap();
    s.set_reference(reference(24, 24)).unwrap();
    s.set_lasso_polygon(Some(&[[2.0, 14.0], [10.0, 14.0], [10.0, 22.0], [2.0, 22.0]])).unwrap();
    let mask = s.lasso().unwrap().clone();
    for _ in 0..10 {
        if let CompletionOutcome::Committed { stamp, .. } = s.stroke_completion_step().unwrap() {
            assert!(mask.contains_point(stamp.x, stamp.y));
        }
    }
    assert!(s.set_lasso_polygon(Some(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])).is_err());
}

#[test]
fn local_global_round_trip() {
    let r = Rect::new(5, 7, 13, 9);
    for uv in [[0.0, 0.0], [1.0, 1.0], [0.3, 0.77], [0.999, 0.001]] {
        let back = global_to_local(r, local_to_global(r, uv));
        assert!((back[0] - uv[0]).abs() < 1e-12 && (back[1] - uv[1]).abs() < 1e-12);
    }
    assert_eq!(local_to_global(r, [0.5, 0.5]), [11.5, 11.5]);
}

#[test]
fn inpaint_stays_in_mask_and_lowers_masked_loss() {
    let mut s = Session::new(32, 32, quick_cfg()).unwrap();
    let mut reference = Canvas::new(32, 32, [1.0; 3]);
    for y in 8..24 {
        for x in 6..20 {
            reference.set_pixel(x, y, [0.2, 0.5, 0.3]);
        }
    }
    s.set_reference(reference.clone()).unwrap();
    let mask = Mask::from_fn(32, 32, |x, y| (6..20).contains(&x) && (8..24).contains(&y));
    let bbox = mask.bounding_box().unwrap();
    let out = s.region_inpaint(&mask, 1, 7).unwrap();
    assert_eq!(out.proposed, 12);
    assert!(out.id.is_some());
    assert!(out.loss_after <= out.loss_before);
    assert!(out.loss_after < 0.5 * out.loss_before);
    for st in &out.stamps {
        assert!(mask.contains_point(st.x, st.y));
        let [u, v] = global_to_local(bbox, [st.x, st.y]);
        assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v));
    }
    assert_eq!(masked_mse(s.canvas(), &reference, &mask).unwrap(), out.loss_after);
    assert_eq!(&s.replay().unwrap(), s.canvas());
    s.undo().unwrap();
    assert_eq!(s.history_len(), 0);
    assert!(matches!(s.region_inpaint(&Mask::new(32, 32), 1, 7), Err(Error::EmptyMask)));
}

fn refine_fixture() -> (Session, u64, u64) {
    let mut s = Session::new(48, 24, quick_cfg()).unwrap();
    let mut reference = Canvas::new(48, 24, [1.0; 3]);
    for y in 4..14 {
        for x in 4..16 {
            reference.set_pixel(x, y, [0.9, 0.2, 0.2]);
        }
        for x in 30..44 {
            reference.set_pixel(x, y, [0.1, 0.2, 0.9]);
        }
    }
    s.set_reference(reference).unwrap();
    let a = s.apply_user_stroke(stroke(5.0, 6.0, 13.0, 11.0, [0.6, 0.3, 0.3])).unwrap();
    let b = s.apply_user_stroke(stroke(32.0, 6.0, 41.0, 12.0, [0.3, 0.3, 0.6])).unwrap();
    (s, a, b)
}

#[test]
fn refine_commits_into_history() {
    let (mut s, a, _) = refine_fixture();
    let before = s.entry(a).unwrap().stamps.clone();
    let job = s.dynamic_brush_refine(a).unwrap();
    assert_eq!(s.job(job).unwrap().status, RefineStatus::Pending);
    let events = s.drain_jobs().unwrap();
    assert_eq!(events.last().unwrap().status, RefineStatus::Done);
    let refined = s.job(job).unwrap().result.clone().unwrap();
    assert_eq!(s.entry(a).unwrap().stamps, refined);
    assert_ne!(refined, before);
    assert_eq!(&s.replay().unwrap(), s.canvas());
    s.undo().unwrap();
    assert_eq!(s.entry(a).unwrap().stamps, before);
}

#[test]
fn refine_jobs_commit_in_submission_order() {
    let (mut s, a, b) = refine_fixture();
    let first = s.dynamic_brush_refine_delayed(a, Duration::from_millis(150)).unwrap();
    let second = s.dynamic_brush_refine(b).unwrap();
    std::thread::sleep(Duration::from_millis(60));
    assert!(s.poll_jobs().unwrap().is_empty());
    assert_eq!(s.job(second).unwrap().status, RefineStatus::Pending);
    let events = s.drain_jobs().unwrap();
    let order: Vec<u64> = events.iter().map(|e| e.job_id).collect();
    assert_eq!(order, vec![first, second]);
    assert!(events.iter().all(|e| e.status == RefineStatus::Done));
}

#[test]
fn edit_in_region_supersedes_refine() {
    let (mut s, a, _) = refine_fixture();
    let job = s.dynamic_brush_refine_delayed(a, Duration::from_millis(50)).unwrap();
    s.apply_user_stroke(stroke(6.0, 8.0, 12.0, 8.0, [0.0; 3])).unwrap();
    let canvas = s.canvas().clone();
    let events = s.drain_jobs().unwrap();
    assert_eq!(events, vec![JobEvent { job_id: job, stroke_id: a, status: RefineStatus::Superseded }]);
    assert_eq!(s.canvas(), &canvas);
    assert!(s.job(job).unwrap().result.is_none());
}

#[test]
fn session_file_round_trip() {
    let (mut s, a, _) = refine_fixture();
    s.dynamic_brush_refine(a).unwrap();
    s.drain_jobs().unwrap();
    s.stroke_completion_step().unwrap();
    let bytes = s.save().unwrap();
    let (back, warnings) = Session::load(&bytes, s.textures().clone(), quick_cfg()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(back.history_len(), 3);
    assert_eq!(back.save().unwrap(), bytes);
    assert_eq!(back.canvas(), s.canvas());
    let file = s.to_file().unwrap();
    assert!(matches!(file.strokes[0], HistoryRecord::User { stamps: Some(_), .. }));
    assert!(matches!(file.strokes[1], HistoryRecord::User { stamps: None, .. }));
    assert!(matches!(file.strokes[2], HistoryRecord::Generated { .. }));
    let mut other = back;
    let id = other.apply_user_stroke(stroke(1.0, 1.0, 3.0, 3.0, [0.0; 3])).unwrap();
    assert_eq!(id, 4);
}

#[test]
fn protocol_round_trip() {
    let mut h = ProtocolHandler::new(Session::new(16, 16, quick_cfg()).unwrap());
    let msg = serde_json::to_string(&ClientMessage::Stroke {
        stroke: stroke(2.0, 2.0, 12.0, 12.0, [0.1, 0.2, 0.3]),
    })
    .unwrap();
    let out = h.handle_line(&msg);
    assert!(matches!(&out[0], ServerMessage::HistoryEvent { kind: HistoryEventKind::Commit, ids, history_len: 1 } if ids == &vec![1]));
    let ServerMessage::CanvasPatch { seq: 1, x, y, w, h: ph, png } = &out[1] else {
        panic!("{out:?}");
    };
    let tile = decode_patch(png).unwrap();
    assert_eq!(tile.dims(), (*w, *ph));
    let expected = h.session().canvas().crop(Rect::new(*x as i64, *y as i64, *w, *ph));
    for (a, b) in tile.data().iter().zip(expected.data()) {
        assert!((crate::io::linear_to_srgb(*a) - crate::io::linear_to_srgb(*b)).abs() <= 0.5 / 255.0 + 1e-12);
    }

    let out = h.handle_line("{\"type\":\"undo\"}");
    assert!(matches!(out[0], ServerMessage::HistoryEvent { kind: HistoryEventKind::Undo, history_len: 0, .. }));
    assert!(matches!(out[1], ServerMessage::CanvasPatch { seq: 2, .. }));
    let out = h.handle_line("{\"type\":\"undo\"}");
    assert_eq!(out.len(), 1);
    assert!(matches!(out[0], ServerMessage::HistoryEvent { kind: HistoryEventKind::Noop, .. }));

    let out = h.handle_line("{\"type\":\"launch\"}");
    assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::BadRequest, .. }));
    let out = h.handle_line("{\"type\":\"complete_step\",\"count\":3}");
    assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::NoIntent, .. }));
    let out = h.handle_line("{\"type\":\"set_reference\",\"image_id\":\"nope\"}");
    assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::UnknownImage, .. }));

    let png = BASE64_STANDARD.encode(crate::io::export_image(&reference(16, 16), crate::io::PngDepth::Eight).unwrap());
    assert!(h.handle_line(&format!("{{\"type\":\"upload\",\"image_id\":\"ref\",\"png\":\"{png}\"}}")).is_empty());
    assert!(h.handle_line("{\"type\":\"set_reference\",\"image_id\":\"ref\"}").is_empty());
    let out = h.handle_line("{\"type\":\"complete_step\",\"count\":3}");
    assert!(matches!(&out[0], ServerMessage::HistoryEvent { kind: HistoryEventKind::Commit, ids, .. } if ids.len() == 3));
    assert!(matches!(out[1], ServerMessage::CanvasPatch { .. }));

    let out = h.handle_line("{\"type\":\"inpaint\",\"label\":1,\"seed\":3}");
    assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::EmptyMask, .. }));
    let out = h.handle_line("{\"type\":\"snapshot\"}");
    assert!(matches!(out[0], ServerMessage::CanvasPatch { x: 0, y: 0, w: 16, h: 16, .. }));
}

use base64::engine::general_purpose::STANDARD as BASE64_STANDARD;
use base64::Engine;
