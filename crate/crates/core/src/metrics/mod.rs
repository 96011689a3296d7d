//! Evaluation: SSIM, a temporal-coherence score and Fréchet distances over
//! this crate's own guidance-encoder features.
//!
//! The Fréchet numbers are labelled `fid_proxy` / `fvd_proxy` everywhere:
//! they share the FID/FVD formula but not the Inception/I3D backbones, so
//! their absolute values mean nothing outside this repository.

mod frechet;
mod ssim;

use std::fmt::Write as _;

use serde::Serialize;

pub use frechet::{frechet_distance, SHRINKAGE};
pub use ssim::{ssim, ssim_masked, C1, C2, WINDOW};

use crate::dataio::VideoSequence;
use crate::error::{bail, Result};
use crate::models::{encode_guidance, GuideSource, ModelParams};
use crate::numerics::Tensor;

/// Frames sampled per clip for video-level features.
pub const VIDEO_FRAMES: usize = 4;

/// Mean over consecutive pairs of the RMS difference inside the union of the
/// two frames' masks. Without masks, or when a pair's union is empty, the
/// whole frame is used.
pub fn tc_score(frames: &[Tensor<f32>], masks: Option<&[Tensor<f32>]>) -> Result<f64> {
    let n = frames.len();
    if n < 2 {
        bail!(Contract, "temporal coherence needs at least two frames, got {n}");
    }
    if let Some(m) = masks {
        if m.len() != n {
            bail!(Contract, "{} masks for {n} frames", m.len());
        }
    }
    let mut total = 0.0;
    for t in 1..n {
        let (a, b) = (&frames[t - 1], &frames[t]);
        a.expect_same_shape(b)?;
        a.expect_rank(3, "frame")?;
        let hw = a.shape()[1] * a.shape()[2];
        let region: Vec<bool> = match masks {
            Some(m) => {
                if m[t].len() != hw || m[t - 1].len() != hw {
                    bail!(Dimension, "masks do not cover {:?} frames", a.shape());
                }
                let u: Vec<bool> = m[t - 1].data().iter().zip(m[t].data()).map(|(p, q)| *p > 0.0 || *q > 0.0).collect();
                if u.iter().any(|&x| x) {
                    u
                } else {
                    vec![true; hw]
                }
            }
            None => vec![true; hw],
        };
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, (p, q)) in a.data().iter().zip(b.data()).enumerate() {
            if region[i % hw] {
                sum += (*p as f64 - *q as f64).powi(2);
                count += 1;
            }
        }
        total += (sum / count as f64).sqrt();
    }
    Ok(total / (n - 1) as f64)
}

/// `tc_score` of a clip restricted to its own masks.
pub fn tc_video(v: &VideoSequence) -> Result<f64> {
    tc_score(v.frames(), Some(v.masks()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLevel {
    /// One `p_e` embedding per frame.
    Frame,
    /// `VIDEO_FRAMES` strided frame embeddings concatenated per clip.
    Video,
}

/// Symmetric-guide encoder embeddings of frames or clips.
pub fn extract_features(params: &ModelParams, clips: &[&[Tensor<f32>]], level: FeatureLevel) -> Result<Vec<Vec<f64>>> {
    let embed = |f: &Tensor<f32>| -> Result<Vec<f64>> {
        Ok(encode_guidance(params, f, GuideSource::Symmetric)?.data().iter().map(|&v| v as f64).collect())
    };
    let mut out = Vec::new();
    for frames in clips {
        if frames.is_empty() {
            bail!(Contract, "cannot extract features from an empty clip");
        }
        match level {
            FeatureLevel::Frame => {
                for f in frames.iter() {
                    out.push(embed(f)?);
                }
            }
            FeatureLevel::Video => {
                let n = frames.len();
                let mut v = Vec::with_capacity(VIDEO_FRAMES * params.cfg.p_e);
                for i in 0..VIDEO_FRAMES {
                    v.extend(embed(&frames[i * n / VIDEO_FRAMES])?);
                }
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// Per-clip scores. `ssim_masked` averages the windows touching occluded
/// pixels over occluded frames only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub fid_proxy: f64,
    pub ssim: f64,
    pub ssim_masked: Option<f64>,
    pub tc: f64,
    /// `tc` of the ground truth under the same masks.
    pub tc_truth: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub fid_proxy: f64,
    pub ssim: f64,
    pub ssim_masked: f64,
    pub tc: f64,
    /// Present at video level only.
    pub fvd_proxy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    /// Means over all frames pooled across clips.
    pub frame: Aggregate,
    /// Means of per-clip values, plus the clip-level Fréchet distance.
    pub video: Aggregate,
    /// FNV-1a over the encoder weights and the evaluated pixels.
    pub fingerprint: String,
}

pub struct EvalClip<'a> {
    pub name: &'a str,
    /// Inpainted output; its masks mark the restored regions.
    pub output: &'a VideoSequence,
    pub truth: &'a [Tensor<f32>],
}

fn fnv(h: &mut u64, data: &[f32]) {
    for v in data {
        for b in v.to_bits().to_le_bytes() {
            *h ^= b as u64;
            *h = h.wrapping_mul(0x100000001b3);
        }
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Score inpainted clips against their ground truth.
pub fn evaluate(params: &ModelParams, clips: &[EvalClip<'_>]) -> Result<MetricReport> {
    if clips.is_empty() {
        bail!(Contract, "nothing to evaluate");
    }
    let mut h: u64 = 0xcbf29ce484222325;
    for (_, p) in params.store.iter().filter(|(_, p)| p.name.starts_with(GuideSource::Symmetric.encoder_prefix())) {
        fnv(&mut h, p.value.data());
    }
    let mut rows = Vec::with_capacity(clips.len());
    let (mut frame_ssim, mut frame_masked) = (Vec::new(), Vec::new());
    let (mut all_out, mut all_truth) = (Vec::new(), Vec::new());
    for c in clips {
        let v = c.output;
        if v.len() != c.truth.len() {
            bail!(Contract, "clip {}: {} output frames vs {} truth frames", c.name, v.len(), c.truth.len());
        }
        let mut ss = Vec::with_capacity(v.len());
        let mut sm = Vec::new();
        for t in 0..v.len() {
            fnv(&mut h, v.frame(t).data());
            fnv(&mut h, c.truth[t].data());
            ss.push(ssim(v.frame(t), &c.truth[t])?);
            if v.is_occluded(t) {
                if let Some(s) = ssim_masked(v.frame(t), &c.truth[t], v.mask(t))? {
                    sm.push(s);
                }
            }
        }
        let fo = extract_features(params, &[v.frames()], FeatureLevel::Frame)?;
        let ft = extract_features(params, &[c.truth], FeatureLevel::Frame)?;
        let row = ClipMetrics {
            clip: c.name.to_string(),
            fid_proxy: frechet_distance(&fo, &ft)?,
            ssim: mean(ss.iter().copied()),
            ssim_masked: if sm.is_empty() { None } else { Some(mean(sm.iter().copied())) },
            tc: tc_video(v)?,
            tc_truth: tc_score(c.truth, Some(v.masks()))?,
        };
        frame_ssim.extend(ss);
        frame_masked.extend(sm);
        all_out.extend(fo);
        all_truth.extend(ft);
        rows.push(row);
    }
    let outs: Vec<&[Tensor<f32>]> = clips.iter().map(|c| c.output.frames()).collect();
    let truths: Vec<&[Tensor<f32>]> = clips.iter().map(|c| c.truth).collect();
    let vo = extract_features(params, &outs, FeatureLevel::Video)?;
    let vt = extract_features(params, &truths, FeatureLevel::Video)?;
    let frame = Aggregate {
        fid_proxy: frechet_distance(&all_out, &all_truth)?,
        ssim: mean(frame_ssim),
        ssim_masked: mean(frame_masked),
        tc: mean(rows.iter().map(|r| r.tc)),
        fvd_proxy: None,
    };
    let video = Aggregate {
        fid_proxy: mean(rows.iter().map(|r| r.fid_proxy)),
        ssim: mean(rows.iter().map(|r| r.ssim)),
        ssim_masked: mean(rows.iter().filter_map(|r| r.ssim_masked)),
        tc: mean(rows.iter().map(|r| r.tc)),
        fvd_proxy: Some(frechet_distance(&vo, &vt)?),
    };
    Ok(MetricReport { clips: rows, frame, video, fingerprint: format!("{h:016x}") })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl MetricReport {
    /// Per-clip rows followed by `frame` and `video` aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip,fid_proxy,ssim,ssim_masked,tc,tc_truth,fvd_proxy\n");
        for r in &self.clips {
            writeln!(s, "{},{:.6},{:.6},{},{:.6},{:.6},", r.clip, r.fid_proxy, r.ssim, opt(r.ssim_masked), r.tc, r.tc_truth)
                .expect("string write");
        }
        for (name, a) in [("frame", &self.frame), ("video", &self.video)] {
            writeln!(s, "{name},{:.6},{:.6},{:.6},{:.6},,{}", a.fid_proxy, a.ssim, a.ssim_masked, a.tc, opt(a.fvd_proxy))
                .expect("string write");
        }
        s
    }

    /// Frame-level then video-level rows: fid, ssim, masked ssim, tc, fvd.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<10} {:>10} {:>8} {:>8} {:>8} {:>10}", "level", "fid_proxy", "ssim", "ssim_m", "tc", "fvd_proxy")
            .expect("string write");
        for (name, a) in [("frame", &self.frame), ("video", &self.video)] {
            writeln!(
                s,
                "{:<10} {:>10.4} {:>8.4} {:>8.4} {:>8.4} {:>10}",
                name,
                a.fid_proxy,
                a.ssim,
                a.ssim_masked,
                a.tc,
                a.fvd_proxy.map_or("-".into(), |v| format!("{v:.4}"))
            )
            .expect("string write");
        }
        writeln!(s, "fingerprint {}", self.fingerprint).expect("string write");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_clip, CoverageSchedule, SynthConfig};
    use crate::models::ModelConfig;
    use crate::numerics::Rng;

    fn synth(seed: u64) -> VideoSequence {
        generate_clip(&SynthConfig {
            p: 16,
            frames: 6,
            coverage: CoverageSchedule::Fixed(vec![0.0, 0.2, 0.3, 0.0, 0.25, 0.0]),
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn params() -> ModelParams {
        ModelParams::new(ModelConfig { p: 16, ..Default::default() }, 5).unwrap()
    }

    #[test]
    fn static_video_scores_zero() {
        let f = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut Rng::new(1));
        assert_eq!(tc_score(&vec![f.clone(); 5], None).unwrap(), 0.0);
        let m = vec![Tensor::full(&[1, 8, 8], 1.0f32); 5];
        assert_eq!(tc_score(&vec![f; 5], Some(&m)).unwrap(), 0.0);
    }

    #[test]
    fn four_pixel_union_hand_case() {
        let a = Tensor::zeros(&[1, 4, 4]);
        let mut b = Tensor::zeros(&[1, 4, 4]);
        let (mut m0, mut m1) = (Tensor::zeros(&[1, 4, 4]), Tensor::zeros(&[1, 4, 4]));
        for (y, x) in [(0, 0), (0, 1)] {
            m0.set(&[0, y, x], 1.0);
        }
        for (y, x) in [(1, 0), (1, 1)] {
            m1.set(&[0, y, x], 1.0);
        }
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            b.set(&[0, y, x], 0.5);
        }
        // Pixels outside the union change too but must not count.
        b.set(&[0, 3, 3], 1.0);
        assert!((tc_score(&[a, b], Some(&[m0, m1])).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tc_contracts() {
        let f = Tensor::zeros(&[1, 4, 4]);
        assert!(matches!(tc_score(std::slice::from_ref(&f), None), Err(crate::Error::Contract(_))));
        assert!(matches!(tc_score(&[f.clone(), f.clone()], Some(std::slice::from_ref(&f))), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn independent_noise_raises_tc() {
        let mut wins = 0;
        for seed in 0..100u64 {
            let v = synth(seed);
            let truth = v.truth().unwrap();
            let mut rng = Rng::new(1000 + seed);
            let noisy: Vec<Tensor<f32>> = truth
                .iter()
                .map(|f| {
                    let n = Tensor::<f32>::randn(f.shape(), &mut rng).scale(0.05);
                    f.add(&n).unwrap().map(|x| x.clamp(0.0, 1.0))
                })
                .collect();
            if tc_score(truth, Some(v.masks())).unwrap() <= tc_score(&noisy, Some(v.masks())).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }

    #[test]
    fn features_shapes_and_determinism() {
        let p = params();
        let v = synth(1);
        let fr = extract_features(&p, &[v.frames()], FeatureLevel::Frame).unwrap();
        assert_eq!(fr.len(), 6);
        assert!(fr.iter().all(|f| f.len() == p.cfg.p_e));
        let vid = extract_features(&p, &[v.frames(), v.frames()], FeatureLevel::Video).unwrap();
        assert_eq!(vid.len(), 2);
        assert_eq!(vid[0].len(), VIDEO_FRAMES * p.cfg.p_e);
        assert_eq!(vid[0], vid[1]);
        assert_eq!(fr, extract_features(&p, &[v.frames()], FeatureLevel::Frame).unwrap());
    }

    #[test]
    fn real_halves_are_closer_than_noise() {
        let p = params();
        let clips: Vec<VideoSequence> = (0..12).map(synth).collect();
        let real: Vec<&[Tensor<f32>]> = clips.iter().map(|c| c.truth().unwrap()).collect();
        let feats = extract_features(&p, &real, FeatureLevel::Frame).unwrap();
        let (a, b) = feats.split_at(feats.len() / 2);
        let mut rng = Rng::new(9);
        let noise: Vec<Tensor<f32>> = (0..36).map(|_| Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng)).collect();
        let nf = extract_features(&p, &[&noise], FeatureLevel::Frame).unwrap();
        let halves = frechet_distance(a, b).unwrap();
        let vs_noise = frechet_distance(a, &nf).unwrap();
        assert!(halves < vs_noise, "{halves} vs {vs_noise}");
    }

    #[test]
    fn evaluate_truth_against_itself() {
        let p = params();
        let clips: Vec<VideoSequence> = (0..3).map(synth).collect();
        let perfect: Vec<VideoSequence> = clips.iter().map(|c| c.with_frames(c.truth().unwrap().to_vec()).unwrap()).collect();
        let inputs: Vec<EvalClip> = perfect
            .iter()
            .zip(&clips)
            .enumerate()
            .map(|(i, (o, c))| EvalClip { name: ["a", "b", "c"][i], output: o, truth: c.truth().unwrap() })
            .collect();
        let r = evaluate(&p, &inputs).unwrap();
        assert_eq!(r.frame.ssim, 1.0);
        assert_eq!(r.frame.ssim_masked, 1.0);
        assert!(r.frame.fid_proxy < 1e-6);
        assert!(r.video.fvd_proxy.unwrap() < 1e-6);
        for c in &r.clips {
            assert_eq!(c.tc, c.tc_truth);
        }
        let again = evaluate(&p, &inputs).unwrap();
        assert_eq!(r, again);
        assert_eq!(r.to_csv(), again.to_csv());
        assert_eq!(r.to_csv().lines().count(), 1 + 3 + 2);
        assert!(r.to_table().contains("fvd_proxy"));

        // Zero-filling the occluded region scores strictly worse.
        let zeroed: Vec<VideoSequence> = clips
            .iter()
            .map(|c| {
                let frames = c
                    .truth()
                    .unwrap()
                    .iter()
                    .zip(c.masks())
                    .map(|(f, m)| {
                        let hw = m.len();
                        Tensor::from_fn(f.shape(), |i| if m.data()[i % hw] > 0.0 { 0.0 } else { f.data()[i] })
                    })
                    .collect();
                c.with_frames(frames).unwrap()
            })
            .collect();
        let zin: Vec<EvalClip> =
            zeroed.iter().zip(&clips).map(|(o, c)| EvalClip { name: "z", output: o, truth: c.truth().unwrap() }).collect();
        let z = evaluate(&p, &zin).unwrap();
        assert!(z.frame.ssim < r.frame.ssim);
        assert!(z.frame.ssim_masked < r.frame.ssim_masked);
        assert_ne!(z.fingerprint, r.fingerprint);
    }

    #[test]
    fn misaligned_lengths_are_contract_errors() {
        let p = params();
        let v = synth(2);
        let short = &v.truth().unwrap()[..3];
        let r = evaluate(&p, &[EvalClip { name: "x", output: &v, truth: short }]);
        assert!(matches!(r, Err(crate::Error::Contract(_))));
        assert!(matches!(evaluate(&p, &[]), Err(crate::Error::Contract(_))));
    }
}
