//! Training regimes: which heads train, which captions feed each minibatch,
//! and which pairwise contrastive terms make up the objective.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::CaptionType;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Visual-text alignment first, then audio-text. Audio and visual meet
    /// only through the shared text head.
    TwoStage { frozen_text: bool },
    /// One stage over audio captions with all three pairwise terms.
    AudioClipStyle,
    /// One stage; each minibatch carries either audio or visual captions and
    /// adds the matching text term to the audio-visual term.
    SlavaMixed,
    /// One stage over audio-visual captions, with or without the explicit
    /// audio-visual term.
    SlavaAvCaptions { use_av_loss: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    /// First stage of the two-stage regime: visual and text heads.
    VisualText,
    /// Second stage of the two-stage regime: audio head (and text head
    /// unless frozen).
    AudioText,
}

/// A pairwise contrastive term. The first named modality is the `a` side of
/// the corresponding [`crate::loss::PairLoss`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pair {
    AudioVisual,
    AudioText,
    VisualText,
}

impl Pair {
    /// Summation order of a composite loss.
    pub const ALL: [Pair; 3] = [Pair::AudioVisual, Pair::AudioText, Pair::VisualText];

    pub fn short(self) -> &'static str {
        match self {
            Pair::AudioVisual => "av",
            Pair::AudioText => "at",
            Pair::VisualText => "vt",
        }
    }
}

/// How a stage picks the caption type of each minibatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaptionPolicy {
    Fixed(CaptionType),
    /// Fair coin per minibatch between audio and visual captions.
    AudioOrVisual,
}

impl CaptionPolicy {
    pub fn required_types(self) -> &'static [CaptionType] {
        match self {
            CaptionPolicy::Fixed(CaptionType::Audio) => &[CaptionType::Audio],
            CaptionPolicy::Fixed(CaptionType::Visual) => &[CaptionType::Visual],
            CaptionPolicy::Fixed(CaptionType::AudioVisual) => &[CaptionType::AudioVisual],
            CaptionPolicy::AudioOrVisual => &[CaptionType::Audio, CaptionType::Visual],
        }
    }
}

/// Which heads an optimizer may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainableHeads {
    pub visual: bool,
    pub audio: bool,
    pub text: bool,
}

impl Regime {
    /// The six configurations compared in the retrieval table, in column order.
    pub const ALL: [Regime; 6] = [
        Regime::TwoStage { frozen_text: true },
        Regime::TwoStage { frozen_text: false },
        Regime::AudioClipStyle,
        Regime::SlavaMixed,
        Regime::SlavaAvCaptions { use_av_loss: false },
        Regime::SlavaAvCaptions { use_av_loss: true },
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Regime::TwoStage { frozen_text: true } => "two-stage-frozen",
            Regime::TwoStage { frozen_text: false } => "two-stage-trainable",
            Regime::AudioClipStyle => "audioclip",
            Regime::SlavaMixed => "slava-mixed",
            Regime::SlavaAvCaptions { use_av_loss: false } => "slava-av-2loss",
            Regime::SlavaAvCaptions { use_av_loss: true } => "slava-av-3loss",
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        match self {
            Regime::TwoStage { .. } => &[Stage::VisualText, Stage::AudioText],
            _ => &[Stage::Single],
        }
    }

    fn check_stage(self, stage: Stage) -> Result<()> {
        if self.stages().contains(&stage) {
            Ok(())
        } else {
            Err(Error::RegimeMismatch(format!(
                "{} has no stage {stage:?}",
                self.tag()
            )))
        }
    }

    pub fn caption_policy(self, stage: Stage) -> Result<CaptionPolicy> {
        self.check_stage(stage)?;
        Ok(match (self, stage) {
            (Regime::TwoStage { .. }, Stage::VisualText) => CaptionPolicy::Fixed(CaptionType::Visual),
            (Regime::TwoStage { .. }, _) => CaptionPolicy::Fixed(CaptionType::Audio),
            (Regime::AudioClipStyle, _) => CaptionPolicy::Fixed(CaptionType::Audio),
            (Regime::SlavaMixed, _) => CaptionPolicy::AudioOrVisual,
            (Regime::SlavaAvCaptions { .. }, _) => CaptionPolicy::Fixed(CaptionType::AudioVisual),
        })
    }

    pub fn trainable_heads(self, stage: Stage) -> Result<TrainableHeads> {
        self.check_stage(stage)?;
        Ok(match (self, stage) {
            (Regime::TwoStage { .. }, Stage::VisualText) => TrainableHeads {
                visual: true,
                audio: false,
                text: true,
            },
            (Regime::TwoStage { frozen_text }, _) => TrainableHeads {
                visual: false,
                audio: true,
                text: !frozen_text,
            },
            _ => TrainableHeads {
                visual: true,
                audio: true,
                text: true,
            },
        })
    }

    /// The contrastive terms summed for a minibatch with the given caption
    /// type, in summation order.
    pub fn objective(self, stage: Stage, caption_type: CaptionType) -> Result<Vec<Pair>> {
        let policy = self.caption_policy(stage)?;
        if !policy.required_types().contains(&caption_type) {
            return Err(Error::RegimeMismatch(format!(
                "{} ({stage:?}) cannot train on {} captions",
                self.tag(),
                caption_type.name()
            )));
        }
        use Pair::*;
        Ok(match (self, stage, caption_type) {
            (Regime::TwoStage { .. }, Stage::VisualText, _) => vec![VisualText],
            (Regime::TwoStage { .. }, _, _) => vec![AudioText],
            (Regime::AudioClipStyle, _, _) => vec![AudioVisual, AudioText, VisualText],
            (Regime::SlavaMixed, _, CaptionType::Audio) => vec![AudioVisual, AudioText],
            (Regime::SlavaMixed, _, _) => vec![AudioVisual, VisualText],
            (Regime::SlavaAvCaptions { use_av_loss: false }, _, _) => vec![AudioText, VisualText],
            (Regime::SlavaAvCaptions { use_av_loss: true }, _, _) => {
                vec![AudioVisual, AudioText, VisualText]
            }
        })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.tag() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Regime::ALL.iter().map(|r| r.tag()).collect();
                Error::InvalidParameter(format!("unknown regime {s:?}; expected one of {known:?}"))
            })
    }
}
