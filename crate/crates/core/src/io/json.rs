use std::f64::consts::PI;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::brush::{BrushMode, Stamp, StampShape, Tip, TextureId, SMOOTHING_CURRENT, SMOOTHING_PREV};
use crate::canvas::Rgb;
use crate::error::{Error, Result};
use crate::sequencer::{PlannedStamp, StrokePlan};
use crate::stroke::{StrokeRecord, TabletSample};

pub const SESSION_VERSION: u64 = 1;
pub const PLAN_VERSION: u64 = 1;
pub const SESSION_EXTENSION: &str = ".pcsession.json";
pub const PLAN_EXTENSION: &str = ".pcplan.json";

/// Smallest radius or sigma a loaded plan stamp is clamped to.
pub const MIN_PLAN_SIZE: f64 = 0.5;

/// Round to 9 significant decimal digits. Idempotent.
pub fn quantize(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// A stamp with every number rounded as it would be written to a file.
pub fn quantize_stamp(stamp: &Stamp) -> Stamp {
    let shape = match &stamp.shape {
        StampShape::Tip { tip, radius, pressure } => StampShape::Tip {
            tip: tip.clone(),
            radius: quantize(*radius),
            pressure: quantize(*pressure),
        },
        StampShape::Gaussian { sigma_x, sigma_y } => StampShape::Gaussian {
            sigma_x: quantize(*sigma_x),
            sigma_y: quantize(*sigma_y),
        },
    };
    Stamp {
        x: quantize(stamp.x),
        y: quantize(stamp.y),
        theta: quantize(stamp.theta),
        color: stamp.color.map(quantize),
        shape,
    }
}

/// A stroke with every number rounded as it would be written to a file.
pub fn quantize_stroke(stroke: &StrokeRecord) -> StrokeRecord {
    StrokeRecord {
        base_size: quantize(stroke.base_size),
        color: stroke.color.map(quantize),
        samples: stroke
            .samples
            .iter()
            .map(|s| TabletSample {
                x: quantize(s.x),
                y: quantize(s.y),
                pressure: quantize(s.pressure),
                t: quantize(s.t),
            })
            .collect(),
        ..stroke.clone()
    }
}

fn quantize_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let q = quantize(n.as_f64().expect("f64 number"));
            *v = Value::from(q);
        }
        Value::Array(items) => items.iter_mut().for_each(quantize_value),
        Value::Object(map) => map.values_mut().for_each(quantize_value),
        _ => {}
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Schema {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Pretty JSON with quantized floats and a trailing newline.
pub fn to_json_bytes<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(doc).map_err(json_error)?;
    quantize_value(&mut v);
    let mut out = serde_json::to_vec_pretty(&v).map_err(json_error)?;
    out.push(b'\n');
    Ok(out)
}

/// Parse, check `version`, then deserialize with field paths in errors.
pub fn from_json_bytes<T: DeserializeOwned>(bytes: &[u8], expected_version: u64) -> Result<T> {
    let v: Value = serde_json::from_slice(bytes).map_err(json_error)?;
    let obj = v.as_object().ok_or_else(|| Error::Schema {
        path: String::new(),
        message: "expected a JSON object".into(),
    })?;
    let version = obj.get("version").ok_or_else(|| Error::Schema {
        path: "version".into(),
        message: "missing field `version`".into(),
    })?;
    let found = version.as_u64().ok_or_else(|| Error::Schema {
        path: "version".into(),
        message: "version must be a non-negative integer".into(),
    })?;
    if found != expected_version {
        return Err(Error::Version {
            found,
            expected: expected_version,
        });
    }
    serde_path_to_error::deserialize(v).map_err(|e| {
        let outer = e.path().to_string();
        let msg = e.inner().to_string();
        match split_nested(&msg) {
            Some((inner, message)) => Error::Schema {
                path: join_path(&outer, inner),
                message: message.to_string(),
            },
            None => Error::Schema { path: outer, message: msg },
        }
    })
}

// Tagged enums buffer their content, which hides the path below the enum.
// Their deserializer re-runs path tracking and smuggles the inner path out
// through the error message between these markers.
const NESTED: char = '\u{1}';

fn split_nested(msg: &str) -> Option<(&str, &str)> {
    msg.strip_prefix(NESTED)?.split_once(NESTED)
}

fn join_path(outer: &str, inner: &str) -> String {
    match (outer, inner) {
        ("" | ".", i) => i.to_string(),
        (o, "" | ".") => o.to_string(),
        (o, i) if i.starts_with('[') => format!("{o}{i}"),
        (o, i) => format!("{o}.{i}"),
    }
}

fn nested_error<E: serde::de::Error>(e: serde_path_to_error::Error<serde_json::Error>) -> E {
    let path = e.path().to_string();
    let msg = e.inner().to_string();
    match split_nested(&msg) {
        Some((inner, message)) => E::custom(format!("{NESTED}{}{NESTED}{message}", join_path(&path, inner))),
        None => E::custom(format!("{NESTED}{path}{NESTED}{msg}")),
    }
}

/// A numeric field that was out of range and got clamped on load.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadWarning {
    pub path: String,
    pub original: f64,
    pub clamped: f64,
}

#[derive(Default)]
struct Clamper {
    warnings: Vec<LoadWarning>,
}

impl Clamper {
    fn finite(&self, path: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::Schema {
                path: path.into(),
                message: format!("{v} is not a finite number"),
            })
        }
    }

    fn clamp(&mut self, path: String, v: &mut f64, lo: f64, hi: f64) -> Result<()> {
        self.finite(&path, *v)?;
        let c = v.clamp(lo, hi);
        if c != *v {
            self.warnings.push(LoadWarning {
                path,
                original: *v,
                clamped: c,
            });
            *v = c;
        }
        Ok(())
    }

    fn wrap_angle(&mut self, path: String, v: &mut f64) -> Result<()> {
        self.finite(&path, *v)?;
        if !(-PI..=PI).contains(v) {
            let w = (*v + PI).rem_euclid(2.0 * PI) - PI;
            self.warnings.push(LoadWarning {
                path,
                original: *v,
                clamped: w,
            });
            *v = w;
        }
        Ok(())
    }

    fn color(&mut self, path: &str, c: &mut Rgb) -> Result<()> {
        for (i, v) in c.iter_mut().enumerate() {
            self.clamp(format!("{path}[{i}]"), v, 0.0, 1.0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSize {
    pub width: usize,
    pub height: usize,
}

/// Pressure filter coefficients stored alongside the per-stroke flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub previous: f64,
    pub current: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams {
            previous: SMOOTHING_PREV,
            current: SMOOTHING_CURRENT,
        }
    }
}

/// Serialized stamp. Tip stamps carry `radius` and `pressure`, Gaussian
/// stamps `sigma_x` and `sigma_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampRecord {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub color: Rgb,
    pub mode: BrushMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
}

impl StampRecord {
    pub fn from_stamp(stamp: &Stamp, label: Option<u32>) -> Self {
        let (radius, pressure, sigma_x, sigma_y) = match stamp.shape {
            StampShape::Tip { radius, pressure, .. } => (Some(radius), Some(pressure), None, None),
            StampShape::Gaussian { sigma_x, sigma_y } => (None, None, Some(sigma_x), Some(sigma_y)),
        };
        StampRecord {
            x: stamp.x,
            y: stamp.y,
            theta: stamp.theta,
            color: stamp.color,
            mode: stamp.mode(),
            radius,
            pressure,
            sigma_x,
            sigma_y,
            label,
        }
    }

    fn field(path: &str, name: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| Error::Schema {
            path: format!("{path}.{name}"),
            message: format!("missing field `{name}`"),
        })
    }

    fn to_stamp_at(&self, path: &str) -> Result<Stamp> {
        let shape = match &self.mode {
            BrushMode::Gaussian2d => StampShape::Gaussian {
                sigma_x: Self::field(path, "sigma_x", self.sigma_x)?,
                sigma_y: Self::field(path, "sigma_y", self.sigma_y)?,
            },
            mode => StampShape::Tip {
                tip: match mode {
                    BrushMode::BrushTip { texture } => Tip::Texture(texture.clone()),
                    _ => Tip::HardRound,
                },
                radius: Self::field(path, "radius", self.radius)?,
                pressure: Self::field(path, "pressure", self.pressure)?,
            },
        };
        let stamp = Stamp {
            x: self.x,
            y: self.y,
            theta: self.theta,
            color: self.color,
            shape,
        };
        stamp.validate().map_err(|e| Error::Schema {
            path: path.into(),
            message: e.to_string(),
        })?;
        Ok(stamp)
    }

    pub fn to_stamp(&self) -> Result<Stamp> {
        self.to_stamp_at("stamp")
    }

    fn clamp(&mut self, path: &str, c: &mut Clamper) -> Result<()> {
        c.finite(&format!("{path}.x"), self.x)?;
        c.finite(&format!("{path}.y"), self.y)?;
        c.wrap_angle(format!("{path}.theta"), &mut self.theta)?;
        c.color(&format!("{path}.color"), &mut self.color)?;
        for (name, v) in [
            ("radius", &mut self.radius),
            ("sigma_x", &mut self.sigma_x),
            ("sigma_y", &mut self.sigma_y),
        ] {
            if let Some(v) = v {
                c.clamp(format!("{path}.{name}"), v, MIN_PLAN_SIZE, f64::INFINITY)?;
            }
        }
        if let Some(p) = &mut self.pressure {
            c.clamp(format!("{path}.pressure"), p, 0.0, 1.0)?;
        }
        Ok(())
    }
}

/// One committed history entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum HistoryRecord {
    /// A recorded tablet stroke. `stamps` is present once the expanded
    /// stamps were edited (optimized or refined) and then overrides them.
    User {
        id: u64,
        stroke: StrokeRecord,
        #[serde(skip_serializing_if = "Option::is_none")]
        stamps: Option<Vec<StampRecord>>,
    },
    /// Stamps placed by an assisted workflow.
    Generated { id: u64, stamps: Vec<StampRecord> },
}

#[derive(Deserialize)]
struct UserBody {
    id: u64,
    stroke: StrokeRecord,
    #[serde(default)]
    stamps: Option<Vec<StampRecord>>,
}

#[derive(Deserialize)]
struct GeneratedBody {
    id: u64,
    stamps: Vec<StampRecord>,
}

impl<'de> Deserialize<'de> for HistoryRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = Map::deserialize(d)?;
        let source = match map.remove("source") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("`source` must be a string")),
            None => return Err(D::Error::missing_field("source")),
        };
        let body = Value::Object(map);
        match source.as_str() {
            "user" => serde_path_to_error::deserialize::<_, UserBody>(body)
                .map(|b| HistoryRecord::User {
                    id: b.id,
                    stroke: b.stroke,
                    stamps: b.stamps,
                })
                .map_err(nested_error),
            "generated" => serde_path_to_error::deserialize::<_, GeneratedBody>(body)
                .map(|b| HistoryRecord::Generated { id: b.id, stamps: b.stamps })
                .map_err(nested_error),
            other => Err(D::Error::unknown_variant(other, &["user", "generated"])),
        }
    }
}

impl HistoryRecord {
    pub fn id(&self) -> u64 {
        match self {
            HistoryRecord::User { id, .. } | HistoryRecord::Generated { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub version: u64,
    pub canvas: CanvasSize,
    pub background: Rgb,
    pub smoothing: SmoothingParams,
    /// `r_min / r_max` used to expand tip strokes.
    pub pressure_min_ratio: f64,
    /// Content hashes of the brush textures the strokes reference.
    pub textures: Vec<TextureId>,
    pub strokes: Vec<HistoryRecord>,
    /// Fields this version does not know; written back unchanged.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl SessionFile {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        SessionFile {
            version: SESSION_VERSION,
            canvas: CanvasSize { width, height },
            background,
            smoothing: SmoothingParams::default(),
            pressure_min_ratio: 0.1,
            textures: Vec::new(),
            strokes: Vec::new(),
            extra: Map::new(),
        }
    }
}

pub fn save_session(file: &SessionFile) -> Result<Vec<u8>> {
    to_json_bytes(file)
}

/// Parse a session file. Out-of-range colors, pressures and stamp sizes are
/// clamped and reported; structural problems are errors.
pub fn load_session(bytes: &[u8]) -> Result<(SessionFile, Vec<LoadWarning>)> {
    let mut file: SessionFile = from_json_bytes(bytes, SESSION_VERSION)?;
    let mut c = Clamper::default();
    c.color("background", &mut file.background)?;
    c.clamp("pressure_min_ratio".into(), &mut file.pressure_min_ratio, 1e-6, 1.0)?;
    for (i, rec) in file.strokes.iter_mut().enumerate() {
        match rec {
            HistoryRecord::User { stroke, stamps, .. } => {
                for (k, s) in stamps.iter_mut().flatten().enumerate() {
                    let path = format!("strokes[{i}].stamps[{k}]");
                    s.clamp(&path, &mut c)?;
                    s.to_stamp_at(&path)?;
                }
                let path = format!("strokes[{i}].stroke");
                c.color(&format!("{path}.color"), &mut stroke.color)?;
                for (k, s) in stroke.samples.iter_mut().enumerate() {
                    c.clamp(format!("{path}.samples[{k}].pressure"), &mut s.pressure, 0.0, 1.0)?;
                }
                stroke.validate().map_err(|e| Error::Schema {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
            HistoryRecord::Generated { stamps, .. } => {
                for (k, s) in stamps.iter_mut().enumerate() {
                    let path = format!("strokes[{i}].stamps[{k}]");
                    s.clamp(&path, &mut c)?;
                    s.to_stamp_at(&path)?;
                }
            }
        }
    }
    Ok((file, c.warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub version: u64,
    pub mode: BrushMode,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<CanvasSize>,
    pub stamps: Vec<StampRecord>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PlanFile {
    pub fn from_plan(plan: &StrokePlan, canvas: Option<(usize, usize)>) -> Self {
        PlanFile {
            version: PLAN_VERSION,
            mode: plan.mode.clone(),
            count: plan.len(),
            canvas: canvas.map(|(width, height)| CanvasSize { width, height }),
            stamps: plan
                .stamps
                .iter()
                .map(|p| StampRecord::from_stamp(&p.stamp, p.label))
                .collect(),
            extra: Map::new(),
        }
    }

    pub fn to_plan(&self) -> Result<StrokePlan> {
        let stamps = self
            .stamps
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let path = format!("stamps[{i}]");
                if r.mode != self.mode {
                    return Err(Error::Schema {
                        path: format!("{path}.mode"),
                        message: "stamp brush mode differs from the plan header".into(),
                    });
                }
                Ok(PlannedStamp {
                    stamp: r.to_stamp_at(&path)?,
                    label: r.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StrokePlan {
            mode: self.mode.clone(),
            stamps,
        })
    }
}

pub fn save_plan(plan: &StrokePlan, canvas: Option<(usize, usize)>) -> Result<Vec<u8>> {
    to_json_bytes(&PlanFile::from_plan(plan, canvas))
}

/// Parse a plan file; the header count must match the stamp list.
pub fn load_plan(bytes: &[u8]) -> Result<(PlanFile, StrokePlan, Vec<LoadWarning>)> {
    let mut file: PlanFile = from_json_bytes(bytes, PLAN_VERSION)?;
    if file.count != file.stamps.len() {
        return Err(Error::Schema {
            path: "count".into(),
            message: format!("header says {} stamps, file has {}", file.count, file.stamps.len()),
        });
    }
    let mut c = Clamper::default();
    for (i, s) in file.stamps.iter_mut().enumerate() {
        s.clamp(&format!("stamps[{i}]"), &mut c)?;
    }
    let plan = file.to_plan()?;
    Ok((file, plan, c.warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stroke::TabletSample;
    use proptest::prelude::*;

    #[test]
    fn quantize_is_nine_digits_and_idempotent() {
        assert_eq!(quantize(0.123456789123), 0.123456789);
        assert_eq!(quantize(1.0 / 3.0), 0.333333333);
        assert_eq!(quantize(quantize(PI)), quantize(PI));
        assert_eq!(quantize(0.0), 0.0);
        assert_eq!(quantize(-2.5e-7), -2.5e-7);
    }

    #[test]
    fn quantized_stamps_survive_a_file_unchanged() {
        let stamps = vec![
            Stamp::gaussian(1.0 / 3.0, 2.0 / 7.0, 1.234567890123, 2.5, -0.1234567891234, [0.1, 0.2, 1.0 / 9.0]),
            Stamp::gaussian(PI, 5.5, 2.0 / 3.0, 0.987654321987, 3.0, [1.0, 0.0, 0.5]),
        ];
        let q: Vec<Stamp> = stamps.iter().map(quantize_stamp).collect();
        assert_ne!(q, stamps);
        assert_eq!(q.iter().map(quantize_stamp).collect::<Vec<_>>(), q);
        let plan = StrokePlan {
            mode: BrushMode::Gaussian2d,
            stamps: q.iter().map(|s| PlannedStamp { stamp: s.clone(), label: None }).collect(),
        };
        let (_, back, _) = load_plan(&save_plan(&plan, None).unwrap()).unwrap();
        assert_eq!(back.stamps(), q);
    }

    #[test]
    fn empty_session_round_trip() {
        let f = SessionFile::new(64, 48, [1.0, 1.0, 1.0]);
        let bytes = save_session(&f).unwrap();
        let (back, warnings) = load_session(&bytes).unwrap();
        assert_eq!(back, f);
        assert!(warnings.is_empty());
        assert_eq!(save_session(&back).unwrap(), bytes);
    }

    #[test]
    fn key_order_is_fixed() {
        let text = String::from_utf8(save_session(&SessionFile::new(2, 2, [0.0; 3])).unwrap()).unwrap();
        let keys = ["\"version\"", "\"canvas\"", "\"background\"", "\"smoothing\"", "\"pressure_min_ratio\"", "\"textures\"", "\"strokes\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn unknown_fields_survive_rewrite() {
        let mut v: Value = serde_json::from_slice(&save_session(&SessionFile::new(4, 4, [0.5; 3])).unwrap()).unwrap();
        v["layers"] = serde_json::json!({"count": 2, "names": ["a", "b"]});
        let bytes = serde_json::to_vec(&v).unwrap();
        let (file, _) = load_session(&bytes).unwrap();
        assert_eq!(file.extra["layers"]["count"], 2);
        let again: Value = serde_json::from_slice(&save_session(&file).unwrap()).unwrap();
        assert_eq!(again["layers"], v["layers"]);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v: Value = serde_json::from_slice(&save_session(&SessionFile::new(4, 4, [0.5; 3])).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("strokes");
        let err = load_session(&serde_json::to_vec(&v).unwrap()).unwrap_err().to_string();
        assert!(err.contains("strokes"), "{err}");

        let mut f = SessionFile::new(4, 4, [0.5; 3]);
        f.strokes.push(HistoryRecord::User {
            id: 1,
            stroke: StrokeRecord {
                tool: BrushMode::HardRound,
                base_size: 3.0,
                color: [0.1, 0.2, 0.3],
                smoothing: true,
                samples: vec![TabletSample::new(1.0, 2.0, 0.5, 0.0)],
            },
            stamps: None,
        });
        let mut v: Value = serde_json::from_slice(&save_session(&f).unwrap()).unwrap();
        v["strokes"][0]["stroke"]["samples"][0].as_object_mut().unwrap().remove("pressure");
        let err = load_session(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        match err {
            Error::Schema { path, message } => {
                assert_eq!(path, "strokes[0].stroke.samples[0]");
                assert!(message.contains("pressure"));
            }
            e => panic!("{e}"),
        }
        let bytes = save_session(&f).unwrap();
        assert!(matches!(load_session(&bytes[..bytes.len() / 2]), Err(Error::Schema { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut v: Value = serde_json::from_slice(&save_session(&SessionFile::new(4, 4, [0.5; 3])).unwrap()).unwrap();
        v["version"] = 9.into();
        assert!(matches!(
            load_session(&serde_json::to_vec(&v).unwrap()),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn plan_round_trip_and_clamps() {
        let plan = StrokePlan {
            mode: BrushMode::Gaussian2d,
            stamps: vec![
                PlannedStamp {
                    stamp: Stamp::gaussian(3.25, 4.5, 2.0, 1.5, 0.25, [0.1, 0.2, 0.3]),
                    label: Some(4),
                },
                PlannedStamp {
                    stamp: Stamp::gaussian(7.0, 1.0, 0.75, 3.0, -1.0, [0.9, 0.8, 0.7]),
                    label: None,
                },
            ],
        };
        let bytes = save_plan(&plan, Some((16, 16))).unwrap();
        let (file, back, warnings) = load_plan(&bytes).unwrap();
        assert_eq!(back, plan);
        assert_eq!(file.canvas, Some(CanvasSize { width: 16, height: 16 }));
        assert!(warnings.is_empty());

        let mut v: Value = serde_json::from_slice(&bytes).unwrap();
        v["stamps"][1]["color"][0] = 1.5.into();
        v["stamps"][0]["sigma_x"] = 0.1.into();
        v["stamps"][0]["theta"] = 4.0.into();
        let (_, clamped, warnings) = load_plan(&serde_json::to_vec(&v).unwrap()).unwrap();
        assert_eq!(warnings.len(), 3);
        assert_eq!(warnings[1].path, "stamps[0].sigma_x");
        assert_eq!(clamped.stamps[1].stamp.color[0], 1.0);
        assert!((clamped.stamps[0].stamp.theta - (4.0 - 2.0 * PI)).abs() < 1e-12);

        v["count"] = 3.into();
        assert!(load_plan(&serde_json::to_vec(&v).unwrap()).is_err());
        v["count"] = 2.into();
        v["stamps"][0]["mode"] = serde_json::json!({"kind": "hard_round"});
        assert!(load_plan(&serde_json::to_vec(&v).unwrap()).is_err());
        v["stamps"][1]["x"] = Value::Null;
        assert!(load_plan(&serde_json::to_vec(&v).unwrap()).is_err());
    }

    fn q() -> impl Strategy<Value = f64> {
        (0.0f64..1.0).prop_map(quantize)
    }

    fn arb_stroke() -> impl Strategy<Value = StrokeRecord> {
        (
            prop::collection::vec((q(), q(), q()), 1..6),
            (0.5f64..20.0).prop_map(quantize),
            (q(), q(), q()),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(pts, base, c, smoothing, gauss)| StrokeRecord {
                tool: if gauss { BrushMode::Gaussian2d } else { BrushMode::HardRound },
                base_size: base,
                color: [c.0, c.1, c.2],
                smoothing,
                samples: pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| TabletSample::new(p.0 * 64.0, p.1 * 64.0, p.2, i as f64 * 0.008))
                    .map(|s| TabletSample::new(quantize(s.x), quantize(s.y), s.pressure, quantize(s.t)))
                    .collect(),
            })
    }

    fn arb_stamp() -> impl Strategy<Value = StampRecord> {
        (q(), q(), q(), (q(), q(), q()), any::<bool>()).prop_map(|(x, y, t, c, gauss)| {
            let size = quantize(0.5 + 10.0 * t);
            let stamp = if gauss {
                Stamp::gaussian(x * 64.0, y * 64.0, size, quantize(size * 0.5 + 0.5), quantize(t - 0.5), [c.0, c.1, c.2])
            } else {
                Stamp::hard_round(x * 64.0, y * 64.0, size, c.0, [c.0, c.1, c.2])
            };
            let mut r = StampRecord::from_stamp(&stamp, None);
            r.x = quantize(r.x);
            r.y = quantize(r.y);
            r
        })
    }

    fn arb_record() -> impl Strategy<Value = HistoryRecord> {
        prop_oneof![
            (arb_stroke(), prop::option::of(prop::collection::vec(arb_stamp(), 1..4)))
                .prop_map(|(stroke, stamps)| HistoryRecord::User { id: 0, stroke, stamps }),
            prop::collection::vec(arb_stamp(), 0..4).prop_map(|stamps| HistoryRecord::Generated { id: 0, stamps }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_sessions_round_trip_exactly(records in prop::collection::vec(arb_record(), 0..100)) {
            let mut f = SessionFile::new(64, 64, [1.0; 3]);
            for (i, mut r) in records.into_iter().enumerate() {
                match &mut r {
                    HistoryRecord::User { id, .. } | HistoryRecord::Generated { id, .. } => *id = i as u64 + 1,
                }
                f.strokes.push(r);
            }
            let bytes = save_session(&f).unwrap();
            let (back, warnings) = load_session(&bytes).unwrap();
            prop_assert!(warnings.is_empty());
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(save_session(&back).unwrap(), bytes);
        }
    }
}
