//! External stage processes.
//!
//! A stage plug-in is an executable that reads one request from stdin,
//! writes one response to stdout and exits (or keeps serving until stdin
//! closes). Every message is framed as
//!
//! ```text
//! u32 LE  total length N of what follows
//! u32 LE  header length H
//! H bytes UTF-8 JSON header
//! ...     blobs, concatenated in the order listed in header["blobs"]
//! ```
//!
//! `header["blobs"]` is a list of `{"name", "len"}`. Frames travel as blobs
//! `rgb.<i>` (PNG), `depth.<i>` (DPTH blob) and, when present, `mask.<i>`
//! (8-bit PNG), with per-frame metadata in `header["frames"][i]`
//! (`camera`, `gripper_pose`, `action`, `joints`, `has_mask`).
//!
//! Requests carry `header["op"]`:
//!
//! | op           | extra request fields                       | response                                  |
//! |--------------|--------------------------------------------|-------------------------------------------|
//! | `segment`    | `robot`                                    | blob `mask.0`                             |
//! | `translate`  | `source`, `target`, `previous` (joints?)   | frame 0 = layer (mask required), `errors` |
//! | `inpaint`    | hole masks as blobs `hole.<i>`             | frames                                    |
//! | `synthesize` | `perturbation` (7-number pose)             | frame 0, blob `holes.0`                   |
//!
//! A response has `"ok": true`, or `"ok": false` with `"error"`.

use std::io::{Cursor, Read, Write};
use std::process::{Command, Stdio};

use image::ImageFormat;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::camera::Camera;
use crate::geometry::{Action, Pose, RigidTransform};
use crate::kinematics::{ChainRegistry, JointConfig, KinematicChain};
use crate::raster::{DepthMap, Frame, Mask};
use crate::roaug::{
    GeometricTranslator, Inpainter, OracleSegmenter, PlateInpainter, RobotLayer, RobotTranslator, Segmenter,
    StageError,
};
use crate::viaug::{HoleMap, Reprojector, ViAugError, ViewSynthesizer};

/// Upper bound on a single message, to fail fast on garbage input.
pub const MAX_MESSAGE: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("plug-in reported: {0}")]
    Remote(String),
}

impl From<PluginError> for StageError {
    fn from(e: PluginError) -> Self {
        StageError::Plugin(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Message {
    pub header: Value,
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl Message {
    pub fn new(header: Value) -> Self {
        Self { header, blobs: Vec::new() }
    }

    pub fn blob(&self, name: &str) -> Result<&[u8], PluginError> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| PluginError::Malformed(format!("missing blob '{name}'")))
    }
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), PluginError> {
    let mut header = msg.header.clone();
    let list: Vec<Value> = msg.blobs.iter().map(|(n, b)| json!({ "name": n, "len": b.len() })).collect();
    header
        .as_object_mut()
        .ok_or_else(|| PluginError::Malformed("header must be a JSON object".into()))?
        .insert("blobs".into(), Value::Array(list));
    let header = serde_json::to_vec(&header).expect("JSON value serializes");
    let total = 4 + header.len() + msg.blobs.iter().map(|(_, b)| b.len()).sum::<usize>();
    let total = u32::try_from(total)
        .ok()
        .filter(|t| *t <= MAX_MESSAGE)
        .ok_or_else(|| PluginError::Malformed("message too large".into()))?;
    w.write_all(&total.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, b) in &msg.blobs {
        w.write_all(b)?;
    }
    w.flush()?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream before a new message.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, PluginError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let total = u32::from_le_bytes(len);
    if total > MAX_MESSAGE || total < 4 {
        return Err(PluginError::Malformed(format!("message length {total}")));
    }
    let mut body = vec![0u8; total as usize];
    r.read_exact(&mut body)?;
    let hlen = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
    if 4 + hlen > body.len() {
        return Err(PluginError::Malformed("header runs past message end".into()));
    }
    let mut header: Value =
        serde_json::from_slice(&body[4..4 + hlen]).map_err(|e| PluginError::Malformed(e.to_string()))?;
    let list = header
        .as_object_mut()
        .and_then(|o| o.remove("blobs"))
        .unwrap_or(Value::Array(Vec::new()));
    let list: Vec<BlobEntry> = serde_json::from_value(list).map_err(|e| PluginError::Malformed(e.to_string()))?;
    let mut offset = 4 + hlen;
    let mut blobs = Vec::with_capacity(list.len());
    for b in list {
        let end = offset
            .checked_add(b.len)
            .filter(|e| *e <= body.len())
            .ok_or_else(|| PluginError::Malformed(format!("blob '{}' runs past message end", b.name)))?;
        blobs.push((b.name, body[offset..end].to_vec()));
        offset = end;
    }
    Ok(Some(Message { header, blobs }))
}

#[derive(Deserialize)]
struct BlobEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    camera: Camera,
    gripper_pose: Pose,
    #[serde(default)]
    action: Option<Action>,
    #[serde(default)]
    joints: Option<JointConfig>,
    has_mask: bool,
}

fn png<P: image::PixelWithColorType, C: std::ops::Deref<Target = [P::Subpixel]>>(
    img: &image::ImageBuffer<P, C>,
) -> Vec<u8>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}

fn decode_png(bytes: &[u8]) -> Result<image::DynamicImage, PluginError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| PluginError::Malformed(e.to_string()))
}

fn mask_from_blob(bytes: &[u8]) -> Result<Mask, PluginError> {
    Ok(Mask::from_image(&decode_png(bytes)?.to_luma8()))
}

/// Adds `frames` to `msg` (metadata under `header["frames"]`).
pub fn put_frames(msg: &mut Message, frames: &[Frame]) -> Result<(), PluginError> {
    let mut metas = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        msg.blobs.push((format!("rgb.{i}"), png(&f.rgb)));
        let depth = f.depth.encode().map_err(|e| PluginError::Malformed(e.to_string()))?;
        msg.blobs.push((format!("depth.{i}"), depth));
        if let Some(m) = &f.mask {
            msg.blobs.push((format!("mask.{i}"), png(&m.to_image())));
        }
        metas.push(FrameMeta {
            camera: f.camera,
            gripper_pose: f.gripper_pose,
            action: f.action,
            joints: f.joints.clone(),
            has_mask: f.mask.is_some(),
        });
    }
    msg.header["frames"] = serde_json::to_value(metas).expect("frame metadata serializes");
    Ok(())
}

pub fn take_frames(msg: &Message) -> Result<Vec<Frame>, PluginError> {
    let metas: Vec<FrameMeta> = serde_json::from_value(msg.header.get("frames").cloned().unwrap_or(Value::Null))
        .map_err(|e| PluginError::Malformed(format!("frames: {e}")))?;
    metas
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let rgb = decode_png(msg.blob(&format!("rgb.{i}"))?)?.to_rgb8();
            let depth =
                DepthMap::decode(msg.blob(&format!("depth.{i}"))?).map_err(|e| PluginError::Malformed(e.to_string()))?;
            let mask = if m.has_mask {
                Some(mask_from_blob(msg.blob(&format!("mask.{i}"))?)?)
            } else {
                None
            };
            let frame = Frame {
                rgb,
                depth,
                mask,
                camera: m.camera,
                gripper_pose: m.gripper_pose,
                action: m.action,
                joints: m.joints,
            };
            frame.validate().map_err(|e| PluginError::Malformed(format!("frame {i}: {e}")))?;
            Ok(frame)
        })
        .collect()
}

/// A stage served by an external executable, started once per request.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalStage {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalStage {
    /// Splits a command line on whitespace.
    pub fn parse(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }

    pub fn call(&self, request: &Message) -> Result<Message, PluginError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            write_message(&mut stdin, request)?;
        }
        let mut stdout = child.stdout.take().expect("piped stdout");
        let response = read_message(&mut stdout)?;
        let status = child.wait()?;
        let response = response.ok_or_else(|| PluginError::Malformed(format!("no response (exit status {status})")))?;
        if response.header.get("ok").and_then(Value::as_bool) != Some(true) {
            let msg = response.header.get("error").and_then(Value::as_str).unwrap_or("unknown error");
            return Err(PluginError::Remote(msg.to_owned()));
        }
        Ok(response)
    }
}

impl Segmenter for ExternalStage {
    fn name(&self) -> &str {
        &self.program
    }

    fn segment(&self, frame: &Frame, robot: &KinematicChain) -> Result<Mask, StageError> {
        let mut req = Message::new(json!({ "op": "segment", "robot": robot.name() }));
        put_frames(&mut req, std::slice::from_ref(frame))?;
        let resp = self.call(&req)?;
        let mask = mask_from_blob(resp.blob("mask.0")?)?;
        if mask.dimensions() != frame.dimensions() {
            return Err(StageError::Invalid("plug-in mask has the wrong size".into()));
        }
        Ok(mask)
    }
}

impl RobotTranslator for ExternalStage {
    fn name(&self) -> &str {
        &self.program
    }

    fn translate(
        &self,
        frame: &Frame,
        source: &KinematicChain,
        target: &KinematicChain,
        previous: Option<&JointConfig>,
    ) -> Result<RobotLayer, StageError> {
        let mut req = Message::new(json!({
            "op": "translate",
            "source": source.name(),
            "target": target.name(),
            "previous": previous,
        }));
        put_frames(&mut req, std::slice::from_ref(frame))?;
        let resp = self.call(&req)?;
        let mut frames = take_frames(&resp)?;
        let layer = frames.pop().ok_or_else(|| StageError::Invalid("plug-in returned no layer".into()))?;
        let mask = layer.mask.ok_or_else(|| StageError::Invalid("plug-in layer has no mask".into()))?;
        let err = |k: &str| resp.header.get(k).and_then(Value::as_f64).unwrap_or(0.0);
        Ok(RobotLayer {
            rgb: layer.rgb,
            depth: layer.depth,
            mask,
            joints: layer.joints,
            position_error: err("position_error"),
            rotation_error: err("rotation_error"),
        })
    }
}

impl Inpainter for ExternalStage {
    fn name(&self) -> &str {
        &self.program
    }

    fn inpaint(&self, frames: &[Frame], holes: &[Mask]) -> Result<Vec<Frame>, StageError> {
        let mut req = Message::new(json!({ "op": "inpaint" }));
        put_frames(&mut req, frames)?;
        for (i, m) in holes.iter().enumerate() {
            req.blobs.push((format!("hole.{i}"), png(&m.to_image())));
        }
        let out = take_frames(&self.call(&req)?)?;
        if out.len() != frames.len() {
            return Err(StageError::Invalid(format!("plug-in returned {} of {} frames", out.len(), frames.len())));
        }
        Ok(out)
    }
}

impl ViewSynthesizer for ExternalStage {
    fn name(&self) -> &str {
        &self.program
    }

    fn synthesize(&self, frame: &Frame, perturbation: &RigidTransform) -> Result<(Frame, HoleMap), ViAugError> {
        let fail = |e: PluginError| ViAugError::Config(format!("plug-in {}: {e}", self.program));
        let mut req = Message::new(json!({ "op": "synthesize", "perturbation": perturbation }));
        put_frames(&mut req, std::slice::from_ref(frame)).map_err(fail)?;
        let resp = self.call(&req).map_err(fail)?;
        let mut frames = take_frames(&resp).map_err(fail)?;
        let out = frames.pop().ok_or_else(|| fail(PluginError::Malformed("no frame".into())))?;
        let holes = mask_from_blob(resp.blob("holes.0").map_err(fail)?).map_err(fail)?;
        Ok((out, HoleMap(holes)))
    }
}

fn handle(req: &Message, registry: &ChainRegistry) -> Result<Message, String> {
    let op = req.header.get("op").and_then(Value::as_str).unwrap_or("");
    let frames = take_frames(req).map_err(|e| e.to_string())?;
    let chain = |key: &str| {
        let name = req.header.get(key).and_then(Value::as_str).unwrap_or("");
        registry.get(name).map_err(|e| e.to_string())
    };
    let first = || frames.first().ok_or_else(|| "request has no frames".to_string());
    let mut resp = Message::new(json!({ "ok": true }));
    match op {
        "segment" => {
            let mask = OracleSegmenter.segment(first()?, chain("robot")?).map_err(|e| e.to_string())?;
            resp.blobs.push(("mask.0".into(), png(&mask.to_image())));
        }
        "translate" => {
            let previous: Option<JointConfig> =
                serde_json::from_value(req.header.get("previous").cloned().unwrap_or(Value::Null))
                    .map_err(|e| e.to_string())?;
            let frame = first()?;
            let layer = GeometricTranslator::default()
                .translate(frame, chain("source")?, chain("target")?, previous.as_ref())
                .map_err(|e| e.to_string())?;
            resp.header["position_error"] = json!(layer.position_error);
            resp.header["rotation_error"] = json!(layer.rotation_error);
            let out = Frame {
                rgb: layer.rgb,
                depth: layer.depth,
                mask: Some(layer.mask),
                joints: layer.joints,
                ..frame.clone()
            };
            put_frames(&mut resp, &[out]).map_err(|e| e.to_string())?;
        }
        "inpaint" => {
            let holes = (0..frames.len())
                .map(|i| req.blob(&format!("hole.{i}")).and_then(mask_from_blob))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let out = PlateInpainter.inpaint(&frames, &holes).map_err(|e| e.to_string())?;
            put_frames(&mut resp, &out).map_err(|e| e.to_string())?;
        }
        "synthesize" => {
            let p: Pose = serde_json::from_value(req.header.get("perturbation").cloned().unwrap_or(Value::Null))
                .map_err(|e| e.to_string())?;
            let (out, holes) = Reprojector::default().synthesize(first()?, &p).map_err(|e| e.to_string())?;
            put_frames(&mut resp, &[out]).map_err(|e| e.to_string())?;
            resp.blobs.push(("holes.0".into(), png(&holes.0.to_image())));
        }
        other => return Err(format!("unknown op '{other}'")),
    }
    Ok(resp)
}

/// Answers requests with the geometric default stages until `input` ends.
/// Errors in a request are reported in its response, not returned.
pub fn serve(input: &mut impl Read, output: &mut impl Write, registry: &ChainRegistry) -> Result<(), PluginError> {
    while let Some(req) = read_message(input)? {
        let resp = handle(&req, registry).unwrap_or_else(|e| Message::new(json!({ "ok": false, "error": e })));
        write_message(output, &resp)?;
    }
    Ok(())
}
