// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A class label, 1-based (`1..=C`). File formats that store 0-based
/// class indices are converted on ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(u32);

impl Label {
    pub fn new(one_based: u32, classes: usize) -> Result<Self> {
        if one_based == 0 || one_based as usize > classes {
            return Err(Error::LabelOutOfRange {
                label: one_based as usize,
                classes,
            });
        }
        Ok(Label(one_based))
    }

    /// Label for a 0-based class index.
    pub fn from_index(index: usize) -> Self {
        Label(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// 0-based class index, for addressing logit columns.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A subset of `{1..C}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSet {
    members: Vec<bool>,
}

impl LabelSet {
    pub fn empty(classes: usize) -> Self {
        LabelSet {
            members: vec![false; classes],
        }
    }

    pub fn full(classes: usize) -> Self {
        LabelSet {
            members: vec![true; classes],
        }
    }

    pub fn from_labels(classes: usize, labels: impl IntoIterator<Item = Label>) -> Result<Self> {
        let mut set = Self::empty(classes);
        for label in labels {
            if label.index() >= classes {
                return Err(Error::LabelOutOfRange {
                    label: label.get() as usize,
                    classes,
                });
            }
            set.members[label.index()] = true;
        }
        Ok(set)
    }

    pub fn from_mask(members: Vec<bool>) -> Self {
        LabelSet { members }
    }

    pub fn classes(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, label: Label) -> bool {
        self.members.get(label.index()).copied().unwrap_or(false)
    }

    pub fn contains_index(&self, index: usize) -> bool {
        self.members[index]
    }

    pub fn insert(&mut self, label: Label) {
        self.members[label.index()] = true;
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    pub fn is_full(&self) -> bool {
        self.members.iter().all(|&m| m)
    }

    pub fn complement(&self) -> Self {
        LabelSet {
            members: self.members.iter().map(|m| !m).collect(),
        }
    }

    pub fn with(&self, label: Label) -> Self {
        let mut out = self.clone();
        out.insert(label);
        out
    }

    pub fn as_mask(&self) -> &[bool] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| Label::from_index(i))
    }
}
