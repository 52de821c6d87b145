//! Flat parameter view with named segments and constraint tags.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTag {
    Free,
    Nonneg,
    /// Elementwise `u_k v_k ≥ 0` between this segment and its neighbour.
    /// Always emitted as two consecutive equal-length segments.
    NonnegProduct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub name: String,
    pub len: usize,
    pub tag: ConstraintTag,
}

impl SegmentInfo {
    pub fn new(name: impl Into<String>, len: usize, tag: ConstraintTag) -> Self {
        Self {
            name: name.into(),
            len,
            tag,
        }
    }
}

/// All trainable parameters of a network, flattened, plus the segment map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamView {
    pub values: Vec<f64>,
    pub segments: Vec<SegmentInfo>,
}

impl ParamView {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Start offset of every segment.
    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.segments)
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let offs = self.offsets();
        self.segments
            .iter()
            .zip(offs)
            .find(|(s, _)| s.name == name)
            .map(|(s, o)| &self.values[o..o + s.len])
    }

    /// Name of the segment holding flat index `i`.
    pub fn segment_of(&self, i: usize) -> Option<&str> {
        segment_of(&self.segments, i)
    }

    pub fn project(&mut self) {
        project_flat(&mut self.values, &self.segments);
    }

    pub fn check(&self) -> Result<()> {
        check_flat(&self.values, &self.segments)
    }
}

pub(crate) fn offsets(segs: &[SegmentInfo]) -> Vec<usize> {
    let mut acc = 0;
    segs.iter()
        .map(|s| {
            let o = acc;
            acc += s.len;
            o
        })
        .collect()
}

pub(crate) fn segment_of(segs: &[SegmentInfo], i: usize) -> Option<&str> {
    let mut acc = 0;
    for s in segs {
        if i < acc + s.len {
            return Some(&s.name);
        }
        acc += s.len;
    }
    None
}

/// Euclidean projection onto the constraint set described by the tags.
pub fn project_flat(values: &mut [f64], segs: &[SegmentInfo]) {
    let mut off = 0;
    let mut i = 0;
    while i < segs.len() {
        let s = &segs[i];
        match s.tag {
            ConstraintTag::Free => {}
            ConstraintTag::Nonneg => {
                for v in &mut values[off..off + s.len] {
                    // max() also maps -0.0 to +0.0, keeping the output canonical
                    *v = v.max(0.0);
                }
            }
            ConstraintTag::NonnegProduct => {
                let k = s.len;
                let (u, v) = values[off..off + 2 * k].split_at_mut(k);
                for j in 0..k {
                    if u[j] * v[j] < 0.0 {
                        if u[j].abs() <= v[j].abs() {
                            u[j] = 0.0;
                        } else {
                            v[j] = 0.0;
                        }
                    }
                }
                off += 2 * k;
                i += 2;
                continue;
            }
        }
        off += s.len;
        i += 1;
    }
}

pub fn check_flat(values: &[f64], segs: &[SegmentInfo]) -> Result<()> {
    let offs = offsets(segs);
    let mut i = 0;
    while i < segs.len() {
        let (s, o) = (&segs[i], offs[i]);
        if let Some(j) = values[o..o + s.len].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {}[{j}]", s.name)));
        }
        match s.tag {
            ConstraintTag::Free => {}
            ConstraintTag::Nonneg => {
                if let Some(j) = values[o..o + s.len].iter().position(|&v| v < 0.0) {
                    return Err(Error::Constraint(format!(
                        "{}[{j}] = {} must be nonnegative",
                        s.name,
                        values[o + j]
                    )));
                }
            }
            ConstraintTag::NonnegProduct => {
                let k = s.len;
                for j in 0..k {
                    if values[o + j] * values[o + k + j] < 0.0 {
                        return Err(Error::Constraint(format!(
                            "{}[{j}] * {}[{j}] must be nonnegative",
                            s.name,
                            segs[i + 1].name
                        )));
                    }
                }
                i += 2;
                continue;
            }
        }
        i += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segs() -> Vec<SegmentInfo> {
        vec![
            SegmentInfo::new("w", 2, ConstraintTag::Free),
            SegmentInfo::new("alpha", 2, ConstraintTag::Nonneg),
            SegmentInfo::new("u", 2, ConstraintTag::NonnegProduct),
            SegmentInfo::new("v", 2, ConstraintTag::NonnegProduct),
        ]
    }

    #[test]
    fn projection_satisfies_tags() {
        let mut v = vec![-1.0, 2.0, -0.5, 0.3, 1.0, -0.2, -2.0, 0.4];
        project_flat(&mut v, &segs());
        assert_eq!(v, vec![-1.0, 2.0, 0.0, 0.3, 0.0, 0.0, -2.0, 0.4]);
        // u_0 v_0 = -2 violated: |u| < |v| so u zeroed
        let mut v = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -2.0, 0.0];
        assert!(check_flat(&v, &segs()).is_err());
        project_flat(&mut v, &segs());
        assert_eq!(v[4], 0.0);
        assert_eq!(v[6], -2.0);
        check_flat(&v, &segs()).unwrap();
    }

    #[test]
    fn segment_lookup() {
        let view = ParamView {
            values: (0..8).map(f64::from).collect(),
            segments: segs(),
        };
        assert_eq!(view.segment("u"), Some(&[4.0, 5.0][..]));
        assert_eq!(view.segment_of(3), Some("alpha"));
        assert_eq!(view.segment_of(8), None);
    }
}
