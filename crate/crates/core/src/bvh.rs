//! Reading and writing the supported BVH subset.
//!
//! Grammar (whitespace separated, `{`/`}` may touch neighbouring words):
//!
//! ```text
//! file      := "HIERARCHY" root "MOTION" "Frames:" INT "Frame" "Time:" NUM row*
//! root      := "ROOT" NAME body
//! body      := "{" "OFFSET" NUM NUM NUM channels (joint | endsite)* "}"
//! joint     := "JOINT" NAME body
//! endsite   := "End" "Site" "{" "OFFSET" NUM NUM NUM "}"
//! channels  := "CHANNELS" ("3" ROT ROT ROT | "6" (POS|ROT){6})
//! row       := one line holding exactly one value per declared channel
//! ```
//!
//! Each joint needs one rotation channel per axis; their listed order is the
//! Euler composition order. Position channels on joints other than the root
//! are read and ignored. Angles are degrees.
//!
//! On ingest the root OFFSET and the root position channels become the root
//! trajectory, joint 0 gets an identity local rotation (its rotation moves to
//! the root orientation), and every length is divided by the rest-pose height.
//! The writer always emits `Xposition Yposition Zposition` on the root and
//! `Zrotation Yrotation Xrotation` everywhere, with six decimals.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::motion::{Frame, Motion, Pose, RootTransform};
use crate::rotation::{self, add, mat_mul, mat_vec, scale, sub, Axis, Mat3, Vec3, IDENTITY_6D};
use crate::skeleton::{Joint, Skeleton};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BvhError {
    #[error("line {line}: unknown keyword '{word}'")]
    UnknownKeyword { line: usize, word: String },
    #[error("line {line}: expected {expected}, found '{found}'")]
    Unexpected { line: usize, expected: &'static str, found: String },
    #[error("line {line}: unexpected end of input, expected {expected}")]
    Eof { line: usize, expected: &'static str },
    #[error("line {line}: joint '{joint}' declares {count} channels, only 3 or 6 are supported")]
    ChannelDeclaration { line: usize, joint: String, count: String },
    #[error("line {line}: joint '{joint}' channel set is invalid: {reason}")]
    ChannelSet { line: usize, joint: String, reason: String },
    #[error("line {line}: frame row has {found} values, expected {expected}")]
    ChannelMismatch { line: usize, found: usize, expected: usize },
    #[error("line {line}: header declares {declared} frames but {found} data rows follow")]
    FrameCount { line: usize, declared: usize, found: usize },
    #[error("line {line}: non-finite number '{text}'")]
    NonFinite { line: usize, text: String },
    #[error("line {line}: invalid number '{text}'")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: {reason}")]
    Structure { line: usize, reason: String },
}

impl BvhError {
    pub fn line(&self) -> usize {
        match self {
            BvhError::UnknownKeyword { line, .. }
            | BvhError::Unexpected { line, .. }
            | BvhError::Eof { line, .. }
            | BvhError::ChannelDeclaration { line, .. }
            | BvhError::ChannelSet { line, .. }
            | BvhError::ChannelMismatch { line, .. }
            | BvhError::FrameCount { line, .. }
            | BvhError::NonFinite { line, .. }
            | BvhError::BadNumber { line, .. }
            | BvhError::Structure { line, .. } => *line,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Channel {
    Pos(usize),
    Rot(Axis),
}

struct RawJoint {
    name: String,
    parent: Option<usize>,
    offset: Vec3,
    end_site: Option<Vec3>,
    channels: Vec<Channel>,
    rot_order: [Axis; 3],
}

struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, expected: &'static str) -> Result<(usize, &'a str), BvhError> {
        match self.toks.get(self.pos) {
            Some(&t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(BvhError::Eof { line: self.last_line, expected }),
        }
    }

    fn expect(&mut self, word: &'static str) -> Result<usize, BvhError> {
        let (line, t) = self.next(word)?;
        if t == word {
            Ok(line)
        } else {
            Err(BvhError::Unexpected { line, expected: word, found: t.to_string() })
        }
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let (line, t) = self.next("a number")?;
        parse_number(line, t)
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.toks.get(self.pos).copied()
    }
}

fn parse_number(line: usize, t: &str) -> Result<f64, BvhError> {
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(BvhError::NonFinite { line, text: t.to_string() }),
        Err(_) => Err(BvhError::BadNumber { line, text: t.to_string() }),
    }
}

fn split_words(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in line.split_whitespace() {
        let mut rest = word;
        while !rest.is_empty() {
            match rest.find(['{', '}']) {
                Some(0) => {
                    out.push(&rest[..1]);
                    rest = &rest[1..];
                }
                Some(i) => {
                    out.push(&rest[..i]);
                    rest = &rest[i..];
                }
                None => {
                    out.push(rest);
                    rest = "";
                }
            }
        }
    }
    out
}

fn parse_channels(toks: &mut Tokens, name: &str) -> Result<(Vec<Channel>, [Axis; 3]), BvhError> {
    let line = toks.expect("CHANNELS")?;
    let (cl, count) = toks.next("a channel count")?;
    let n = match count {
        "3" => 3,
        "6" => 6,
        other => {
            return Err(BvhError::ChannelDeclaration { line: cl, joint: name.to_string(), count: other.to_string() })
        }
    };
    let mut chans = Vec::with_capacity(n);
    for _ in 0..n {
        let (l, t) = toks.next("a channel name")?;
        let c = match t {
            "Xposition" => Channel::Pos(0),
            "Yposition" => Channel::Pos(1),
            "Zposition" => Channel::Pos(2),
            "Xrotation" => Channel::Rot(Axis::X),
            "Yrotation" => Channel::Rot(Axis::Y),
            "Zrotation" => Channel::Rot(Axis::Z),
            other => {
                return Err(BvhError::Unexpected { line: l, expected: "a channel name", found: other.to_string() })
            }
        };
        if chans.contains(&c) {
            return Err(BvhError::ChannelSet { line, joint: name.to_string(), reason: format!("{t} repeated") });
        }
        chans.push(c);
    }
    let rots: Vec<Axis> = chans.iter().filter_map(|c| if let Channel::Rot(a) = c { Some(*a) } else { None }).collect();
    if rots.len() != 3 {
        return Err(BvhError::ChannelSet {
            line,
            joint: name.to_string(),
            reason: format!("{} rotation channels, need 3", rots.len()),
        });
    }
    Ok((chans, [rots[0], rots[1], rots[2]]))
}

fn parse_hierarchy(toks: &mut Tokens) -> Result<(Vec<RawJoint>, usize), BvhError> {
    toks.expect("HIERARCHY")?;
    let root_line = toks.expect("ROOT")?;
    let mut joints: Vec<RawJoint> = Vec::new();
    // Open joint bodies, innermost last.
    let mut stack: Vec<usize> = Vec::new();
    let mut pending_name = {
        let (_, n) = toks.next("a joint name")?;
        Some(n.to_string())
    };
    loop {
        if let Some(name) = pending_name.take() {
            toks.expect("{")?;
            toks.expect("OFFSET")?;
            let offset = [toks.number()?, toks.number()?, toks.number()?];
            let (channels, rot_order) = parse_channels(toks, &name)?;
            joints.push(RawJoint { name, parent: stack.last().copied(), offset, end_site: None, channels, rot_order });
            stack.push(joints.len() - 1);
            continue;
        }
        let (line, t) = toks.next("JOINT, End Site or '}'")?;
        match t {
            "JOINT" => {
                let (_, n) = toks.next("a joint name")?;
                pending_name = Some(n.to_string());
            }
            "End" => {
                toks.expect("Site")?;
                toks.expect("{")?;
                toks.expect("OFFSET")?;
                let o = [toks.number()?, toks.number()?, toks.number()?];
                toks.expect("}")?;
                let owner = *stack.last().expect("stack is non-empty inside a body");
                if joints[owner].end_site.is_some() {
                    return Err(BvhError::Structure {
                        line,
                        reason: format!("joint '{}' has two End Sites", joints[owner].name),
                    });
                }
                joints[owner].end_site = Some(o);
            }
            "}" => {
                stack.pop();
                if stack.is_empty() {
                    return Ok((joints, root_line));
                }
            }
            "ROOT" => return Err(BvhError::Structure { line, reason: "only one ROOT is supported".into() }),
            "OFFSET" | "CHANNELS" | "{" | "Site" | "MOTION" => {
                return Err(BvhError::Unexpected { line, expected: "JOINT, End Site or '}'", found: t.to_string() })
            }
            other => return Err(BvhError::UnknownKeyword { line, word: other.to_string() }),
        }
    }
}

/// Parses BVH text into a unit-height skeleton and its motion.
pub fn parse_bvh(text: &str) -> Result<(Skeleton, Motion), BvhError> {
    let lines: Vec<&str> = text.lines().collect();
    let motion_line = lines.iter().position(|l| l.trim_start().starts_with("MOTION"));
    let header_end = motion_line.unwrap_or(lines.len());
    let mut toks = Vec::new();
    for (i, l) in lines[..header_end].iter().enumerate() {
        toks.extend(split_words(l).into_iter().map(|w| (i + 1, w)));
    }
    let mut toks = Tokens { toks, pos: 0, last_line: header_end.max(1) };
    let (raw, root_line) = parse_hierarchy(&mut toks)?;
    if let Some((line, t)) = toks.peek() {
        return Err(BvhError::Unexpected { line, expected: "MOTION", found: t.to_string() });
    }
    let Some(ml) = motion_line else {
        return Err(BvhError::Eof { line: lines.len().max(1), expected: "MOTION" });
    };
    if lines[ml].trim() != "MOTION" {
        return Err(BvhError::Unexpected { line: ml + 1, expected: "MOTION", found: lines[ml].trim().to_string() });
    }

    // Header lines after MOTION: "Frames: N" and "Frame Time: dt".
    let mut cursor = ml + 1;
    let next_nonempty = |cursor: &mut usize, expected: &'static str| -> Result<(usize, Vec<&str>), BvhError> {
        while *cursor < lines.len() && lines[*cursor].trim().is_empty() {
            *cursor += 1;
        }
        if *cursor >= lines.len() {
            return Err(BvhError::Eof { line: lines.len(), expected });
        }
        *cursor += 1;
        Ok((*cursor, lines[*cursor - 1].split_whitespace().collect()))
    };
    let (fl, words) = next_nonempty(&mut cursor, "Frames:")?;
    let declared = match words.as_slice() {
        ["Frames:", n] => n.parse::<usize>().map_err(|_| BvhError::BadNumber { line: fl, text: n.to_string() })?,
        [w, ..] if *w == "Frames:" => {
            return Err(BvhError::Structure { line: fl, reason: "Frames: takes one count".into() })
        }
        [w, ..] => return Err(BvhError::Unexpected { line: fl, expected: "Frames:", found: w.to_string() }),
        [] => unreachable!(),
    };
    let (tl, words) = next_nonempty(&mut cursor, "Frame Time:")?;
    let frame_time = match words.as_slice() {
        ["Frame", "Time:", v] => parse_number(tl, v)?,
        [w, ..] => return Err(BvhError::Unexpected { line: tl, expected: "Frame Time:", found: w.to_string() }),
        [] => unreachable!(),
    };
    if !(frame_time > 0.0) {
        return Err(BvhError::Structure { line: tl, reason: format!("frame time must be positive, got {frame_time}") });
    }

    let width: usize = raw.iter().map(|j| j.channels.len()).sum();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut last_line = tl;
    for (i, l) in lines.iter().enumerate().skip(cursor) {
        if l.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        last_line = line;
        let vals = l.split_whitespace().map(|w| parse_number(line, w)).collect::<Result<Vec<f64>, _>>()?;
        if vals.len() != width {
            return Err(BvhError::ChannelMismatch { line, found: vals.len(), expected: width });
        }
        if rows.len() >= declared {
            return Err(BvhError::FrameCount {
                line,
                declared,
                found: declared + 1 + lines[i + 1..].iter().filter(|l| !l.trim().is_empty()).count(),
            });
        }
        rows.push(vals);
    }
    if rows.len() != declared {
        return Err(BvhError::FrameCount { line: last_line, declared, found: rows.len() });
    }
    if rows.is_empty() {
        return Err(BvhError::Structure { line: fl, reason: "motion has no frames".into() });
    }
    build(raw, root_line, &rows, 1.0 / frame_time)
}

fn build(
    raw: Vec<RawJoint>,
    root_line: usize,
    rows: &[Vec<f64>],
    frame_rate: f64,
) -> Result<(Skeleton, Motion), BvhError> {
    let structure = |reason: String| BvhError::Structure { line: root_line, reason };
    let root_offset = raw[0].offset;
    let joints: Vec<Joint> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| Joint {
            name: r.name.clone(),
            parent: r.parent,
            offset: if i == 0 { [0.0; 3] } else { r.offset },
            end_site: r.end_site,
        })
        .collect();
    let file_skeleton = Skeleton::new(joints, None, None).map_err(|e| structure(e.to_string()))?;
    let h = file_skeleton.height();
    let skeleton = file_skeleton.normalized().map_err(|e| structure(e.to_string()))?;

    let mut root_pos: Vec<Vec3> = Vec::with_capacity(rows.len());
    let mut frames = Vec::with_capacity(rows.len());
    for row in rows {
        let mut col = 0;
        let mut rotations = Vec::with_capacity(raw.len());
        let mut orientation = IDENTITY_6D;
        for (j, r) in raw.iter().enumerate() {
            let mut p = [0.0; 3];
            let mut deg = [0.0; 3];
            let mut k = 0;
            for c in &r.channels {
                match c {
                    Channel::Pos(a) => p[*a] = row[col],
                    Channel::Rot(_) => {
                        deg[k] = row[col];
                        k += 1;
                    }
                }
                col += 1;
            }
            let m = rotation::euler_to_matrix(r.rot_order, deg);
            let r6 = rotation::matrix_to_rot6d(&m).expect("Euler matrices are rotations");
            if j == 0 {
                orientation = r6;
                rotations.push(IDENTITY_6D);
                root_pos.push(add(root_offset, p));
            } else {
                rotations.push(r6);
            }
        }
        frames.push(Frame { pose: Pose { rotations }, root: RootTransform { orientation, velocity: [0.0; 3] } });
    }
    let t = frames.len();
    for i in 0..t.saturating_sub(1) {
        frames[i].root.velocity = scale(sub(root_pos[i + 1], root_pos[i]), 1.0 / h);
    }
    if t >= 2 {
        frames[t - 1].root.velocity = frames[t - 2].root.velocity;
    }
    let mut motion = Motion::new(frames, frame_rate).map_err(|e| structure(e.to_string()))?;
    motion.origin = scale(root_pos[0], 1.0 / h);
    Ok((skeleton, motion))
}

/// [`parse_bvh`] on raw bytes; invalid UTF-8 is reported at its line.
pub fn parse_bvh_bytes(bytes: &[u8]) -> Result<(Skeleton, Motion), BvhError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_bvh(text),
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
            Err(BvhError::Structure { line, reason: "invalid UTF-8".into() })
        }
    }
}

pub fn read_bvh(path: &Path) -> Result<(Skeleton, Motion)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_bvh_bytes(&bytes).map_err(|source| Error::Bvh { path: path.to_path_buf(), source })
}

pub fn write_bvh_file(path: &Path, skeleton: &Skeleton, motion: &Motion) -> Result<()> {
    let text = write_bvh(skeleton, motion)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fixed(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Degrees in (−180, 180] as printed with six decimals.
fn angle(v: f64) -> String {
    let mut a = v;
    if fixed(a).parse::<f64>().unwrap_or(a) <= -180.0 {
        a += 360.0;
    }
    fixed(a)
}

fn write_vec(out: &mut String, v: Vec3) {
    let _ = write!(out, "{} {} {}", fixed(v[0]), fixed(v[1]), fixed(v[2]));
}

/// Serializes in the units of the originating file (see [`Skeleton::file_scale`]).
pub fn write_bvh(skeleton: &Skeleton, motion: &Motion) -> Result<String> {
    motion.validate_for(skeleton)?;
    let s = skeleton.file_scale();
    let mut out = String::from("HIERARCHY\n");
    // Depth-first emission; joint order is already topological with parents first.
    let n = skeleton.joint_count();
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    while let Some(j) = stack.pop() {
        order.push(j);
        for &c in skeleton.children(j).iter().rev() {
            stack.push(c);
        }
    }
    let mut depth = vec![0usize; n];
    let close = |out: &mut String, d: usize| {
        let _ = writeln!(out, "{}}}", "\t".repeat(d));
    };
    let mut open: Vec<usize> = Vec::new();
    for &j in &order {
        let joint = &skeleton.joints()[j];
        while let Some(&top) = open.last() {
            if Some(top) == joint.parent {
                break;
            }
            open.pop();
            close(&mut out, depth[top]);
        }
        depth[j] = open.len();
        let ind = "\t".repeat(depth[j]);
        if j == 0 {
            let _ = writeln!(out, "ROOT {}", joint.name);
        } else {
            let _ = writeln!(out, "{ind}JOINT {}", joint.name);
        }
        let _ = writeln!(out, "{ind}{{");
        let _ = write!(out, "{ind}\tOFFSET ");
        write_vec(&mut out, if j == 0 { [0.0; 3] } else { scale(joint.offset, s) });
        out.push('\n');
        if j == 0 {
            let _ = writeln!(out, "{ind}\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation");
        } else {
            let _ = writeln!(out, "{ind}\tCHANNELS 3 Zrotation Yrotation Xrotation");
        }
        if let Some(e) = joint.end_site {
            let _ = writeln!(out, "{ind}\tEnd Site\n{ind}\t{{");
            let _ = write!(out, "{ind}\t\tOFFSET ");
            write_vec(&mut out, scale(e, s));
            let _ = writeln!(out, "\n{ind}\t}}");
        }
        open.push(j);
    }
    while let Some(top) = open.pop() {
        close(&mut out, depth[top]);
    }
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {}", motion.len(), 1.0 / motion.frame_rate);

    let roots = motion.root_positions();
    let off0 = skeleton.joints()[0].offset;
    for (t, f) in motion.frames.iter().enumerate() {
        let mats = f.pose.matrices().map_err(|(joint, source)| Error::Rotation { frame: t, joint, source })?;
        let g_r = rotation::rot6d_to_matrix(&f.root.orientation).map_err(|source| Error::Rotation {
            frame: t,
            joint: n,
            source,
        })?;
        let x0 = add(add(motion.origin, roots[t]), mat_vec(&g_r, off0));
        let mut row: Vec<String> = Vec::with_capacity(3 * n + 3);
        row.extend(scale(x0, s).map(fixed));
        for &j in &order {
            let m: Mat3 = if j == 0 { mat_mul(&g_r, &mats[0]) } else { mats[j] };
            row.extend(rotation::matrix_to_euler_zyx(&m).map(angle));
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}
