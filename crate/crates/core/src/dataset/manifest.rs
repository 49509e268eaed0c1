//! Line-oriented dataset manifests.
//!
//! Each data line is `scene_id<TAB>role<TAB>relative_ev<TAB>path` where
//! `role` is `gt` or `input` and `path` is relative to the manifest's
//! directory. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::fnv1a;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// Deterministic bucket in `0..10` for a scene id.
pub fn split_bucket(scene_id: &str) -> u64 {
    fnv1a(scene_id.as_bytes()) % 10
}

/// File references for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub ground_truth: PathBuf,
    /// `(relative_ev, path)`, ascending by EV.
    pub renditions: Vec<(Real, PathBuf)>,
}

/// A scene with its images decoded.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub ground_truth: Image,
    /// `(relative_ev, image)`, ascending by EV.
    pub renditions: Vec<(Real, Image)>,
}

impl Scene {
    pub fn rendition(&self, ev: Real) -> Option<&Image> {
        self.renditions
            .iter()
            .find(|(e, _)| (e - ev).abs() < 1e-9)
            .map(|(_, img)| img)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    /// Sorted by `scene_id`.
    pub scenes: Vec<SceneRecord>,
}

impl DatasetManifest {
    /// Validates and canonically orders `scenes`.
    pub fn new(root: PathBuf, split: Split, mut scenes: Vec<SceneRecord>) -> Result<Self> {
        scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        if let Some(w) = scenes.windows(2).find(|w| w[0].scene_id == w[1].scene_id) {
            return Err(Error::Format(format!("duplicate scene id {}", w[0].scene_id)));
        }
        for s in &mut scenes {
            s.renditions.sort_by(|a, b| a.0.total_cmp(&b.0));
            if s.renditions.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Format(format!(
                    "scene {} repeats a relative EV",
                    s.scene_id
                )));
            }
        }
        Ok(DatasetManifest { root, split, scenes })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# exreg dataset manifest v1\n");
        let _ = writeln!(out, "# split={}", self.split.as_str());
        for s in &self.scenes {
            let _ = writeln!(out, "{}\tgt\t0\t{}", s.scene_id, s.ground_truth.display());
            for (ev, p) in &s.renditions {
                let _ = writeln!(out, "{}\tinput\t{}\t{}", s.scene_id, ev, p.display());
            }
        }
        out
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut split = None;
        let mut by_id: BTreeMap<String, (Option<PathBuf>, Vec<(Real, PathBuf)>)> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("split=") {
                    split = Some(v.parse()?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, role, ev, path] = fields[..] else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 4 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            let ev: Real = ev
                .parse()
                .map_err(|_| Error::Format(format!("manifest line {}: bad EV {ev:?}", n + 1)))?;
            let entry = by_id.entry(id.to_string()).or_default();
            match role {
                "gt" => {
                    if entry.0.replace(PathBuf::from(path)).is_some() {
                        return Err(Error::Format(format!("scene {id} has two ground truths")));
                    }
                }
                "input" => entry.1.push((ev, PathBuf::from(path))),
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: unknown role {other:?}",
                        n + 1
                    )))
                }
            }
        }
        let scenes = by_id
            .into_iter()
            .map(|(id, (gt, renditions))| {
                let ground_truth =
                    gt.ok_or_else(|| Error::Format(format!("scene {id} lacks a ground truth")))?;
                Ok(SceneRecord {
                    scene_id: id,
                    ground_truth,
                    renditions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(root, split.unwrap_or(Split::Train), scenes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; relative image paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    /// Decodes every referenced image, in canonical scene order.
    pub fn load_scenes(&self) -> Result<Vec<Scene>> {
        self.scenes
            .par_iter()
            .map(|r| {
                let ground_truth = Image::load_png(&self.root.join(&r.ground_truth))?;
                let renditions = r
                    .renditions
                    .iter()
                    .map(|(ev, p)| {
                        let img = Image::load_png(&self.root.join(p))?;
                        if !img.same_size(&ground_truth) {
                            return Err(Error::Format(format!(
                                "{}: rendition size differs from ground truth",
                                p.display()
                            )));
                        }
                        Ok((*ev, img))
                    })
                    .collect::<Result<_>>()?;
                Ok(Scene {
                    id: r.scene_id.clone(),
                    ground_truth,
                    renditions,
                })
            })
            .collect()
    }

    /// Splits off scenes whose id falls in `bucket` (for validation).
    pub fn partition_bucket(&self, bucket: u64) -> (DatasetManifest, DatasetManifest) {
        let (held, rest): (Vec<_>, Vec<_>) = self
            .scenes
            .iter()
            .cloned()
            .partition(|s| split_bucket(&s.scene_id) == bucket);
        (
            DatasetManifest {
                root: self.root.clone(),
                split: self.split,
                scenes: rest,
            },
            DatasetManifest {
                root: self.root.clone(),
                split: self.split,
                scenes: held,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, evs: &[Real]) -> SceneRecord {
        SceneRecord {
            scene_id: id.into(),
            ground_truth: format!("images/{id}_gt.png").into(),
            renditions: evs
                .iter()
                .map(|e| (*e, PathBuf::from(format!("images/{id}_{e}.png"))))
                .collect(),
        }
    }

    #[test]
    fn text_roundtrip_preserves_everything() {
        let m = DatasetManifest::new(
            PathBuf::from("/data"),
            Split::Test,
            vec![record("b", &[1.5, -1.0, 0.1]), record("a", &[0.0, -1.5])],
        )
        .unwrap();
        assert_eq!(m.scenes[0].scene_id, "a");
        let back = DatasetManifest::parse(&m.to_text(), PathBuf::from("/data")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_duplicate_evs_and_bad_lines() {
        assert!(DatasetManifest::new(PathBuf::new(), Split::Train, vec![record("a", &[1.0, 1.0])]).is_err());
        assert!(DatasetManifest::parse("a\tgt\t0\n", PathBuf::new()).is_err());
        assert!(DatasetManifest::parse("a\tinput\t0\tx.png\n", PathBuf::new()).is_err());
        assert!(DatasetManifest::parse("a\tfoo\t0\tx.png\n", PathBuf::new()).is_err());
    }

    #[test]
    fn buckets_are_stable_and_roughly_uniform() {
        let counts = (0..1000).fold([0usize; 10], |mut c, i| {
            c[split_bucket(&format!("scene_{i:04}")) as usize] += 1;
            c
        });
        assert!(counts.iter().all(|&c| c > 50), "{counts:?}");
    }
}
