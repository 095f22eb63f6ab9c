//! Documents and queries as sets of modality streams.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Text,
    Image,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Text, Modality::Image, Modality::Audio, Modality::Video];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    /// Order used to break timestamp ties when interleaving: audio < video < image.
    pub fn interleave_priority(&self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Video => 1,
            Modality::Image => 2,
            Modality::Text => u8::MAX,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidStream(format!("unknown modality {s:?}")))
    }
}

/// One timestamped feature frame of an audio, video or image stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp_s: f64,
    pub features: Vec<f32>,
}

impl Frame {
    pub fn new(timestamp_s: f64, features: Vec<f32>) -> Self {
        Self {
            timestamp_s,
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamContent {
    Tokens(Vec<u32>),
    Timeline(Vec<Frame>),
}

/// A single-modality input sequence: token ids for text, frames otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    modality: Modality,
    content: StreamContent,
}

impl Stream {
    pub fn text(token_ids: Vec<u32>) -> Self {
        Self {
            modality: Modality::Text,
            content: StreamContent::Tokens(token_ids),
        }
    }

    /// Builds a non-text stream, checking timestamps and frame widths.
    pub fn media(modality: Modality, timeline: Vec<Frame>) -> Result<Self> {
        if modality == Modality::Text {
            return Err(Error::InvalidStream(
                "text streams carry token ids, not frames".to_string(),
            ));
        }
        let mut prev = 0.0f64;
        let width = timeline.first().map(|f| f.features.len());
        for (i, frame) in timeline.iter().enumerate() {
            let t = frame.timestamp_s;
            if !t.is_finite() || t < 0.0 {
                return Err(Error::InvalidStream(format!(
                    "frame {i}: timestamp {t} must be finite and non-negative"
                )));
            }
            if t < prev {
                return Err(Error::InvalidStream(format!(
                    "frame {i}: timestamp {t} precedes {prev}"
                )));
            }
            prev = t;
            if Some(frame.features.len()) != width || frame.features.is_empty() {
                return Err(Error::InvalidStream(format!(
                    "frame {i}: width {} differs from {}",
                    frame.features.len(),
                    width.unwrap_or(0)
                )));
            }
            if let Some(j) = frame.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidStream(format!(
                    "frame {i}: non-finite feature at {j}"
                )));
            }
        }
        Ok(Self {
            modality,
            content: StreamContent::Timeline(timeline),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn content(&self) -> &StreamContent {
        &self.content
    }

    pub fn token_ids(&self) -> Option<&[u32]> {
        match &self.content {
            StreamContent::Tokens(t) => Some(t),
            StreamContent::Timeline(_) => None,
        }
    }

    pub fn timeline(&self) -> Option<&[Frame]> {
        match &self.content {
            StreamContent::Timeline(f) => Some(f),
            StreamContent::Tokens(_) => None,
        }
    }

    /// Token or frame count.
    pub fn len(&self) -> usize {
        match &self.content {
            StreamContent::Tokens(t) => t.len(),
            StreamContent::Timeline(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature width of the frames, if any.
    pub fn input_dim(&self) -> Option<usize> {
        self.timeline()
            .and_then(|f| f.first())
            .map(|f| f.features.len())
    }
}

/// A document or query: an id plus one stream per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaItem {
    id: String,
    streams: Vec<Stream>,
}

impl MediaItem {
    pub fn new(id: impl Into<String>, streams: Vec<Stream>) -> Result<Self> {
        let id = id.into();
        if streams.is_empty() {
            return Err(Error::InvalidItem {
                id,
                reason: "no streams".to_string(),
            });
        }
        for (i, s) in streams.iter().enumerate() {
            if streams[..i].iter().any(|o| o.modality == s.modality) {
                return Err(Error::InvalidItem {
                    id,
                    reason: format!("modality {} appears twice", s.modality),
                });
            }
        }
        Ok(Self { id, streams })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn stream(&self, modality: Modality) -> Option<&Stream> {
        self.streams.iter().find(|s| s.modality == modality)
    }

    pub fn is_multi_stream(&self) -> bool {
        self.streams.len() > 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame(t: f64, w: usize) -> Frame {
        Frame::new(t, vec![0.5; w])
    }

    #[test]
    fn timestamps_must_not_decrease() {
        let err = Stream::media(Modality::Audio, vec![frame(1.0, 2), frame(0.5, 2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidStream(_)));
        assert!(Stream::media(Modality::Audio, vec![frame(1.0, 2), frame(1.0, 2)]).is_ok());
        assert!(Stream::media(Modality::Audio, vec![frame(-1.0, 2)]).is_err());
    }

    #[test]
    fn frames_share_width() {
        assert!(Stream::media(Modality::Video, vec![frame(0.0, 2), frame(1.0, 3)]).is_err());
    }

    #[test]
    fn text_cannot_hold_frames() {
        assert!(Stream::media(Modality::Text, vec![frame(0.0, 2)]).is_err());
        let s = Stream::text(vec![1, 2]);
        assert_eq!(s.token_ids(), Some(&[1u32, 2][..]));
        assert!(s.timeline().is_none());
    }

    #[test]
    fn item_modalities_distinct() {
        let a = Stream::text(vec![1]);
        let err = MediaItem::new("d1", vec![a.clone(), a]).unwrap_err();
        assert!(matches!(err, Error::InvalidItem { .. }));
        assert!(MediaItem::new("d1", vec![]).is_err());
    }

    #[test]
    fn modality_round_trips_through_str() {
        for m in Modality::ALL {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        assert!("smell".parse::<Modality>().is_err());
    }
}
