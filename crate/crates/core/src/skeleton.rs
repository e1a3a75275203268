use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{add, norm, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
    /// Tip offset of a leaf, kept so files can be written back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_site: Option<Vec3>,
}

impl Joint {
    pub fn new(name: impl Into<String>, parent: Option<usize>, offset: Vec3) -> Self {
        Self { name: name.into(), parent, offset, end_site: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonRepr {
    joints: Vec<Joint>,
    end_effectors: Vec<usize>,
    feet: Vec<usize>,
    file_scale: f64,
}

/// A joint tree in topological order together with its end-effector and foot sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonRepr")]
pub struct Skeleton {
    joints: Vec<Joint>,
    end_effectors: Vec<usize>,
    feet: Vec<usize>,
    file_scale: f64,
    #[serde(skip)]
    height: f64,
    #[serde(skip)]
    chain_lengths: Vec<f64>,
    #[serde(skip)]
    children: Vec<Vec<usize>>,
}

impl TryFrom<SkeletonRepr> for Skeleton {
    type Error = Error;

    fn try_from(r: SkeletonRepr) -> Result<Self> {
        let mut s = Skeleton::new(r.joints, Some(r.end_effectors), Some(r.feet))?;
        if !(r.file_scale.is_finite() && r.file_scale > 0.0) {
            return Err(Error::Skeleton(format!("file_scale must be positive, got {}", r.file_scale)));
        }
        s.file_scale = r.file_scale;
        Ok(s)
    }
}

fn is_foot_name(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    n.contains("foot") || n.contains("toe")
}

impl Skeleton {
    /// Validates the tree. `end_effectors` defaults to every leaf and `feet` to
    /// the end-effectors whose names mention a foot or toe.
    pub fn new(joints: Vec<Joint>, end_effectors: Option<Vec<usize>>, feet: Option<Vec<usize>>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        let mut children = vec![Vec::new(); joints.len()];
        for (i, j) in joints.iter().enumerate() {
            match j.parent {
                None if i == 0 => {}
                None => return Err(Error::Skeleton(format!("joint {i} ({}) is a second root", j.name))),
                Some(_) if i == 0 => return Err(Error::Skeleton("joint 0 must be the root".into())),
                Some(p) if p >= i => {
                    return Err(Error::Skeleton(format!("joint {i} ({}) has parent {p} not before it", j.name)))
                }
                Some(p) => children[p].push(i),
            }
            if j.offset.iter().chain(j.end_site.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::Skeleton(format!("joint {} has a non-finite offset", j.name)));
            }
        }
        for (i, a) in joints.iter().enumerate() {
            if joints[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Skeleton(format!("duplicate joint name {}", a.name)));
            }
        }
        let leaves: Vec<usize> = (0..joints.len()).filter(|&i| children[i].is_empty() && i != 0).collect();
        let end_effectors = end_effectors.unwrap_or_else(|| leaves.clone());
        for (k, &e) in end_effectors.iter().enumerate() {
            if !leaves.contains(&e) {
                return Err(Error::Skeleton(format!("end-effector {e} is not a leaf joint")));
            }
            if end_effectors[..k].contains(&e) {
                return Err(Error::Skeleton(format!("end-effector {e} listed twice")));
            }
        }
        let feet =
            feet.unwrap_or_else(|| end_effectors.iter().copied().filter(|&e| is_foot_name(&joints[e].name)).collect());
        for (k, &f) in feet.iter().enumerate() {
            if !end_effectors.contains(&f) {
                return Err(Error::Skeleton(format!("foot {f} is not an end-effector")));
            }
            if feet[..k].contains(&f) {
                return Err(Error::Skeleton(format!("foot {f} listed twice")));
            }
        }

        let mut s =
            Skeleton { joints, end_effectors, feet, file_scale: 1.0, height: 0.0, chain_lengths: Vec::new(), children };
        s.height = s.measure_height();
        if !(s.height > 0.0) {
            return Err(Error::Skeleton("rest pose has zero extent".into()));
        }
        s.chain_lengths = s.end_effectors.iter().map(|&e| s.chain_length(e)).collect();
        if let Some(k) = s.chain_lengths.iter().position(|&h| !(h > 0.0)) {
            return Err(Error::Skeleton(format!(
                "end-effector {} has a zero-length chain",
                s.joints[s.end_effectors[k]].name
            )));
        }
        Ok(s)
    }

    /// Vertical extent of the rest pose, or the largest extent along any axis
    /// when the rest pose is flat in Y.
    fn measure_height(&self) -> f64 {
        let rest = self.rest_positions();
        let extent = |axis: usize| {
            let lo = rest.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = rest.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        let y = extent(1);
        if y > 0.0 {
            y
        } else {
            extent(0).max(extent(2))
        }
    }

    fn chain_length(&self, mut j: usize) -> f64 {
        let mut h = 0.0;
        while let Some(p) = self.joints[j].parent {
            h += norm(self.joints[j].offset);
            j = p;
        }
        h
    }

    /// Joint positions with every local rotation at identity and the root at
    /// its offset from the origin.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let base = j.parent.map_or([0.0; 3], |p| out[p]);
            out.push(add(base, j.offset));
        }
        out
    }

    /// Copy with all lengths multiplied by `s`; `file_scale` compensates so
    /// written files keep their units.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Skeleton(format!("scale must be positive, got {s}")));
        }
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                parent: j.parent,
                offset: j.offset.map(|v| v * s),
                end_site: j.end_site.map(|e| e.map(|v| v * s)),
            })
            .collect();
        let mut out = Skeleton::new(joints, Some(self.end_effectors.clone()), Some(self.feet.clone()))?;
        out.file_scale = self.file_scale / s;
        Ok(out)
    }

    /// Rescales to unit height.
    pub fn normalized(&self) -> Result<Self> {
        self.scaled(1.0 / self.height)
    }

    pub fn with_sets(&self, end_effectors: Vec<usize>, feet: Vec<usize>) -> Result<Self> {
        let mut out = Skeleton::new(self.joints.clone(), Some(end_effectors), Some(feet))?;
        out.file_scale = self.file_scale;
        Ok(out)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn end_effectors(&self) -> &[usize] {
        &self.end_effectors
    }

    pub fn feet(&self) -> &[usize] {
        &self.feet
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Multiplier from internal lengths back to the units of the source file.
    pub fn file_scale(&self) -> f64 {
        self.file_scale
    }

    /// Chain length from the root for each end-effector, aligned with [`Self::end_effectors`].
    pub fn chain_lengths(&self) -> &[f64] {
        &self.chain_lengths
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn name(&self, j: usize) -> &str {
        &self.joints[j].name
    }

    /// Sorted names of the end-effectors; equal lists mark homeomorphic pairs.
    pub fn end_effector_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.end_effectors.iter().map(|&e| self.joints[e].name.clone()).collect();
        v.sort();
        v
    }

    /// Graph distance between two joints in the tree.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let depth = |mut j: usize| {
            let mut d = 0;
            while let Some(p) = self.joints[j].parent {
                j = p;
                d += 1;
            }
            d
        };
        let (mut a, mut b) = (a, b);
        let (mut da, mut db) = (depth(a), depth(b));
        let mut steps = 0;
        while da > db {
            a = self.joints[a].parent.unwrap();
            da -= 1;
            steps += 1;
        }
        while db > da {
            b = self.joints[b].parent.unwrap();
            db -= 1;
            steps += 1;
        }
        while a != b {
            a = self.joints[a].parent.unwrap();
            b = self.joints[b].parent.unwrap();
            steps += 2;
        }
        steps
    }

    /// Same names, parents and offsets within `tol`.
    pub fn matches(&self, other: &Skeleton, tol: f64) -> bool {
        self.joints.len() == other.joints.len()
            && self.joints.iter().zip(&other.joints).all(|(a, b)| {
                a.name == b.name
                    && a.parent == b.parent
                    && a.offset.iter().zip(&b.offset).all(|(x, y)| (x - y).abs() <= tol)
            })
    }

    /// Digest of names, parents and offsets rounded to 1e-5.
    pub fn signature(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for j in &self.joints {
            feed(j.name.as_bytes());
            feed(&j.parent.map_or(u64::MAX, |p| p as u64).to_le_bytes());
            for v in j.offset {
                feed(&((v * 1e5).round() as i64).to_le_bytes());
            }
        }
        format!("{h:016x}")
    }
}
