//! Sequence-length estimation from processor arguments.
//!
//! The model is explicit and deliberately simple:
//!
//! | setting      | tokens |
//! |--------------|--------|
//! | text         | `text_token_count + special` |
//! | audio        | `ceil(min(duration · 16 kHz, audio_max_length) / 16 kHz · audio_tokens_per_second) + special` |
//! | video        | `ceil(duration · fps) · ceil(clamp(w·h, min_pixels, max_pixels) / patch_pixels) + special` |
//! | image        | `ceil(clamp(w·h, image_min_pixels, image_max_pixels) / patch_pixels) + special` |
//! | av separate  | audio and video reported per stream |
//! | av fused     | `audio + video − special + fused_overhead_tokens` |
//!
//! Only the relative ordering across settings and the clamp behaviour are
//! meaningful; absolute counts depend on a real backbone's processor.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;

pub const AUDIO_SAMPLE_RATE: u64 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessorArgs {
    pub min_pixels: u64,
    pub max_pixels: u64,
    /// Cap on audio samples at 16 kHz.
    pub audio_max_length: u64,
    pub image_max_pixels: u64,
    pub image_min_pixels: u64,
    pub video_fps: f64,
    pub audio_tokens_per_second: f64,
    pub patch_pixels: u64,
    pub fused_overhead_tokens: u64,
    pub per_stream_special_tokens: u64,
}

impl Default for ProcessorArgs {
    fn default() -> Self {
        Self {
            min_pixels: 32 * 14 * 14,
            max_pixels: 64 * 28 * 28,
            audio_max_length: 2_048_000,
            image_max_pixels: 2352,
            image_min_pixels: 196,
            video_fps: 1.0,
            audio_tokens_per_second: 25.0,
            patch_pixels: 28 * 28,
            fused_overhead_tokens: 0,
            per_stream_special_tokens: 2,
        }
    }
}

impl ProcessorArgs {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.min_pixels > self.max_pixels {
            return bad("min_pixels must not exceed max_pixels");
        }
        if self.image_min_pixels > self.image_max_pixels {
            return bad("image_min_pixels must not exceed image_max_pixels");
        }
        if !(self.video_fps.is_finite() && self.video_fps > 0.0) {
            return bad("video_fps must be positive");
        }
        if !(self.audio_tokens_per_second.is_finite() && self.audio_tokens_per_second > 0.0) {
            return bad("audio_tokens_per_second must be positive");
        }
        if self.patch_pixels == 0 || self.audio_max_length == 0 {
            return bad("patch_pixels and audio_max_length must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediaDescriptor {
    pub duration_s: f64,
    pub frame_width: u64,
    pub frame_height: u64,
    pub has_audio: bool,
    /// Transcript (plus OCR) length used by the text setting.
    pub text_token_count: u64,
}

impl MediaDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(Error::InvalidConfig("duration must be finite and non-negative".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Text,
    Image,
    AudioOnly,
    VideoOnly,
    AvFused,
    AvSeparate,
}

impl Setting {
    pub const ALL: [Setting; 6] = [
        Setting::Text,
        Setting::Image,
        Setting::AudioOnly,
        Setting::VideoOnly,
        Setting::AvFused,
        Setting::AvSeparate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Text => "text",
            Setting::Image => "image",
            Setting::AudioOnly => "audio_only",
            Setting::VideoOnly => "video_only",
            Setting::AvFused => "av_fused",
            Setting::AvSeparate => "av_separate",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown setting {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLengths {
    pub per_stream: Vec<(String, u64)>,
    pub total: u64,
}

// ceil that ignores float noise just above an integer (10.000000000000002)
fn ceil_u64(x: f64) -> u64 {
    let nearest = libm::round(x);
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as u64
    } else {
        math::ceil(x) as u64
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Audio tokens including the stream's special tokens.
pub fn audio_tokens(m: &MediaDescriptor, args: &ProcessorArgs) -> u64 {
    let samples = (m.duration_s * AUDIO_SAMPLE_RATE as f64).min(args.audio_max_length as f64);
    let seconds = samples / AUDIO_SAMPLE_RATE as f64;
    ceil_u64(seconds * args.audio_tokens_per_second) + args.per_stream_special_tokens
}

/// Tokens for one video frame after the pixel clamp.
pub fn tokens_per_frame(width: u64, height: u64, args: &ProcessorArgs) -> u64 {
    let pixels = (width * height).clamp(args.min_pixels, args.max_pixels);
    ceil_div(pixels, args.patch_pixels)
}

pub fn video_tokens(m: &MediaDescriptor, args: &ProcessorArgs) -> u64 {
    let frames = ceil_u64(m.duration_s * args.video_fps);
    frames * tokens_per_frame(m.frame_width, m.frame_height, args) + args.per_stream_special_tokens
}

pub fn image_tokens(m: &MediaDescriptor, args: &ProcessorArgs) -> u64 {
    let pixels = (m.frame_width * m.frame_height).clamp(args.image_min_pixels, args.image_max_pixels);
    ceil_div(pixels, args.patch_pixels) + args.per_stream_special_tokens
}

/// Token counts for `media` under `setting`.
pub fn estimate_tokens(
    media: &MediaDescriptor,
    setting: Setting,
    args: &ProcessorArgs,
) -> Result<SequenceLengths> {
    args.validate()?;
    media.validate()?;
    let needs_audio = matches!(setting, Setting::AudioOnly | Setting::AvFused | Setting::AvSeparate);
    if needs_audio && !media.has_audio {
        return Err(Error::SettingMismatch {
            setting: setting.to_string(),
            reason: "media has no audio track".to_string(),
        });
    }
    let single = |label: &str, n: u64| SequenceLengths {
        per_stream: vec![(label.to_string(), n)],
        total: n,
    };
    Ok(match setting {
        Setting::Text => single("text", media.text_token_count + args.per_stream_special_tokens),
        Setting::Image => single("image", image_tokens(media, args)),
        Setting::AudioOnly => single("audio", audio_tokens(media, args)),
        Setting::VideoOnly => single("video", video_tokens(media, args)),
        Setting::AvSeparate => {
            let (a, v) = (audio_tokens(media, args), video_tokens(media, args));
            SequenceLengths {
                per_stream: vec![("audio".to_string(), a), ("video".to_string(), v)],
                total: a + v,
            }
        }
        Setting::AvFused => {
            let n = audio_tokens(media, args) + video_tokens(media, args) + args.fused_overhead_tokens
                - args.per_stream_special_tokens;
            single("fused", n)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn media(duration_s: f64) -> MediaDescriptor {
        MediaDescriptor {
            duration_s,
            frame_width: 640,
            frame_height: 360,
            has_audio: true,
            text_token_count: 0,
        }
    }

    #[test]
    fn zero_duration_is_special_tokens_only() {
        let a = ProcessorArgs::default();
        let v = estimate_tokens(&media(0.0), Setting::VideoOnly, &a).unwrap();
        assert_eq!(v.total, 2);
        assert_eq!(estimate_tokens(&media(0.0), Setting::AudioOnly, &a).unwrap().total, 2);
    }

    #[test]
    fn ten_seconds_of_audio() {
        let out = estimate_tokens(&media(10.0), Setting::AudioOnly, &ProcessorArgs::default()).unwrap();
        // 10 s * 25 tokens/s + 2
        assert_eq!(out.total, 252);
    }

    #[test]
    fn audio_cap_applies() {
        // 2,048,000 samples = 128 s
        let a = ProcessorArgs::default();
        assert_eq!(audio_tokens(&media(128.0), &a), audio_tokens(&media(4000.0), &a));
        assert_eq!(audio_tokens(&media(4000.0), &a), 128 * 25 + 2);
    }

    #[test]
    fn separate_and_fused_structure() {
        let a = ProcessorArgs::default();
        let m = media(30.0);
        let sep = estimate_tokens(&m, Setting::AvSeparate, &a).unwrap();
        assert_eq!(sep.per_stream.len(), 2);
        let fused = estimate_tokens(&m, Setting::AvFused, &a).unwrap();
        assert_eq!(fused.total, sep.total - 2);
        assert!(fused.total <= sep.total);
    }

    #[test]
    fn audio_settings_need_audio() {
        let mut m = media(5.0);
        m.has_audio = false;
        let a = ProcessorArgs::default();
        for s in [Setting::AudioOnly, Setting::AvFused, Setting::AvSeparate] {
            assert!(matches!(estimate_tokens(&m, s, &a), Err(Error::SettingMismatch { .. })));
        }
        assert!(estimate_tokens(&m, Setting::VideoOnly, &a).is_ok());
    }

    #[test]
    fn image_clamp() {
        let a = ProcessorArgs::default();
        let mut m = media(0.0);
        m.frame_width = 4000;
        m.frame_height = 4000;
        assert_eq!(image_tokens(&m, &a), 3 + 2);
        m.frame_width = 1;
        m.frame_height = 1;
        assert_eq!(image_tokens(&m, &a), 1 + 2);
    }

    #[test]
    fn invalid_args() {
        let a = ProcessorArgs {
            min_pixels: 10,
            max_pixels: 5,
            ..Default::default()
        };
        assert!(estimate_tokens(&media(1.0), Setting::Text, &a).is_err());
        assert!(estimate_tokens(&media(-1.0), Setting::Text, &ProcessorArgs::default()).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_duration(d in 0.0f64..5000.0, extra in 0.0f64..100.0) {
            let a = ProcessorArgs::default();
            for s in [Setting::AudioOnly, Setting::VideoOnly, Setting::AvFused, Setting::AvSeparate] {
                let lo = estimate_tokens(&media(d), s, &a).unwrap().total;
                let hi = estimate_tokens(&media(d + extra), s, &a).unwrap().total;
                prop_assert!(lo <= hi);
            }
        }

        #[test]
        fn monotone_in_fps_and_pixels(fps in 0.1f64..4.0, dfps in 0.0f64..2.0, w in 1u64..300, dw in 0u64..50) {
            let base = ProcessorArgs { video_fps: fps, ..Default::default() };
            let faster = ProcessorArgs { video_fps: fps + dfps, ..Default::default() };
            let mut m = media(60.0);
            m.frame_width = w;
            m.frame_height = 100;
            prop_assert!(video_tokens(&m, &base) <= video_tokens(&m, &faster));
            let mut wider = m;
            wider.frame_width = w + dw;
            prop_assert!(video_tokens(&m, &base) <= video_tokens(&wider, &base));
        }

        #[test]
        fn per_frame_tokens_within_clamp(w in 1u64..5000, h in 1u64..5000) {
            let a = ProcessorArgs::default();
            let t = tokens_per_frame(w, h, &a);
            prop_assert!(t >= a.min_pixels.div_ceil(a.patch_pixels));
            prop_assert!(t <= a.max_pixels.div_ceil(a.patch_pixels));
        }

        #[test]
        fn fused_not_above_separate(d in 0.0f64..3000.0, overhead in 0u64..=2) {
            let a = ProcessorArgs { fused_overhead_tokens: overhead, ..Default::default() };
            let m = media(d);
            let fused = estimate_tokens(&m, Setting::AvFused, &a).unwrap().total;
            let sep = estimate_tokens(&m, Setting::AvSeparate, &a).unwrap().total;
            prop_assert!(fused <= sep);
        }
    }
}
