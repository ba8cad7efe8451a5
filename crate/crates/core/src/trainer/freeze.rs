use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::model::DtJrdModel;

/// Which parameters a fine-tuning run may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Linear probing: only the classification head.
    #[serde(rename = "lp")]
    LinearProbe,
    /// Full fine-tuning: everything.
    #[serde(rename = "ff")]
    FullFineTune,
    /// Distortion-aware fine-tuning: encoder blocks and head; embeddings and
    /// the final layer norm stay frozen.
    #[serde(rename = "daft")]
    DistortionAware,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::LinearProbe => "lp",
            Strategy::FullFineTune => "ff",
            Strategy::DistortionAware => "daft",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lp" => Ok(Strategy::LinearProbe),
            "ff" => Ok(Strategy::FullFineTune),
            "daft" => Ok(Strategy::DistortionAware),
            _ => Err(Error::Config(format!(
                "unknown strategy `{s}` (expected lp, ff or daft)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Embedding,
    Encoder,
    FinalNorm,
    Head,
}

fn group_of(name: &str) -> Option<Group> {
    match name {
        "patch_embed.w" | "patch_embed.b" | "class_token" | "pos_embed" => Some(Group::Embedding),
        "final_ln.scale" | "final_ln.shift" => Some(Group::FinalNorm),
        "head.w" | "head.b" => Some(Group::Head),
        _ => {
            let rest = name.strip_prefix("block")?;
            let (idx, _) = rest.split_once('.')?;
            (!idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit())).then_some(Group::Encoder)
        }
    }
}

/// Trainable flag per parameter name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    flags: BTreeMap<String, bool>,
}

impl FreezeMask {
    pub fn for_names<'a>(
        names: impl IntoIterator<Item = &'a str>,
        strategy: Strategy,
    ) -> Result<Self> {
        let mut flags = BTreeMap::new();
        for name in names {
            let group = group_of(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` has no freeze rule")))?;
            let trainable = match strategy {
                Strategy::FullFineTune => true,
                Strategy::LinearProbe => group == Group::Head,
                Strategy::DistortionAware => matches!(group, Group::Encoder | Group::Head),
            };
            flags.insert(name.to_owned(), trainable);
        }
        Ok(Self { flags })
    }

    pub fn trainable(&self, name: &str) -> Option<bool> {
        self.flags.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, bool)> {
        self.flags.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.iter().filter(|(_, t)| *t).map(|(n, _)| n)
    }

    /// Sets each parameter's trainable flag; frozen ones lose their gradient.
    pub fn apply<T: Scalar>(&self, model: &mut DtJrdModel<T>) -> Result<()> {
        for p in model.parameters_mut() {
            let t = self
                .trainable(&p.name)
                .ok_or_else(|| Error::Config(format!("mask has no entry for `{}`", p.name)))?;
            p.set_trainable(t);
        }
        Ok(())
    }
}

pub fn freeze_mask<T: Scalar>(model: &DtJrdModel<T>, strategy: Strategy) -> Result<FreezeMask> {
    FreezeMask::for_names(model.parameters().iter().map(|p| p.name.as_str()), strategy)
}
