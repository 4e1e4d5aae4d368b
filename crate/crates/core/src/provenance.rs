//! Records of which videos and identities each learned object saw.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub videos: BTreeSet<String>,
    pub identities: BTreeSet<String>,
}

impl Provenance {
    /// From `(video_id, identity_id)` pairs.
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut p = Provenance::default();
        for (v, i) in pairs {
            p.videos.insert(v.to_string());
            p.identities.insert(i.to_string());
        }
        p
    }

    pub fn merge(&mut self, other: &Provenance) {
        self.videos.extend(other.videos.iter().cloned());
        self.identities.extend(other.identities.iter().cloned());
    }
}

/// A fitted object and the data it was fit on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnedObject {
    pub name: String,
    pub provenance: Provenance,
}

/// Fails if any object saw a test video or a test identity.
pub fn check_leakage(fold: usize, objects: &[LearnedObject], test: &Provenance) -> Result<()> {
    for obj in objects {
        let identities: Vec<String> = obj
            .provenance
            .identities
            .intersection(&test.identities)
            .cloned()
            .collect();
        let videos_leak = obj.provenance.videos.intersection(&test.videos).next().is_some();
        if !identities.is_empty() || videos_leak {
            let identities = if identities.is_empty() {
                obj.provenance
                    .videos
                    .intersection(&test.videos)
                    .cloned()
                    .collect()
            } else {
                identities
            };
            return Err(Error::Leakage {
                fold,
                object: obj.name.clone(),
                identities,
            });
        }
    }
    Ok(())
}
