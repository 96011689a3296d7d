//! End-to-end behaviour through the public API at toy scale.

use diffmvr_core::dataio::{generate_clip, load_clip, save_clip, CoverageSchedule, SynthConfig, VideoSequence};
use diffmvr_core::diffusion::{inpaint_clip, prepare_clip, train, GuidanceMode, InpaintConfig, ScheduleSpec, TrainConfig};
use diffmvr_core::metrics::{evaluate, EvalClip};
use diffmvr_core::models::{load_checkpoint, pretrain_vae, save_checkpoint, ModelConfig, ModelParams, VaeTrainConfig};
use diffmvr_core::preprocess::make_masked_frame;

fn clip(seed: u64) -> VideoSequence {
    generate_clip(&SynthConfig {
        p: 16,
        frames: 4,
        coverage: CoverageSchedule::Fixed(vec![0.0, 0.2, 0.0, 0.3]),
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn trained() -> (ModelParams, Vec<VideoSequence>) {
    let clips: Vec<_> = (0..4).map(clip).collect();
    let mut p = ModelParams::new(ModelConfig { p: 16, ..Default::default() }, 1).unwrap();
    let frames: Vec<_> = clips.iter().flat_map(|c| c.frames().to_vec()).collect();
    pretrain_vae(&mut p, &frames, &VaeTrainConfig { steps: 20, ..Default::default() }).unwrap();
    let data: Vec<_> = clips.iter().map(|c| prepare_clip(&p, c, GuidanceMode::Dual, 0.01).unwrap()).collect();
    let sched = ScheduleSpec::scaled(8).build().unwrap();
    train(&data, &mut p, &sched, &TrainConfig { steps: 12, ..Default::default() }).unwrap();
    p.schedule = Some(sched.spec);
    (p, clips)
}

#[test]
fn inpainting_only_touches_occluded_pixels() {
    let (p, clips) = trained();
    let sched = ScheduleSpec::scaled(8).build().unwrap();
    for mode in GuidanceMode::ALL {
        let out = inpaint_clip(&clips[0], &p, &sched, &InpaintConfig { mode, ..Default::default() }).unwrap();
        for t in 0..clips[0].len() {
            let (a, b, m) = (clips[0].frame(t), out.video.frame(t), clips[0].mask(t));
            let hw = m.len();
            for i in 0..a.len() {
                if m.data()[i % hw] == 0.0 {
                    assert_eq!(a.data()[i].to_bits(), b.data()[i].to_bits(), "{mode:?} frame {t}");
                }
            }
            assert_eq!(out.guides[t].is_some(), clips[0].is_occluded(t));
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let (p, clips) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path).unwrap();
    assert_eq!(q.alpha(), p.alpha());
    assert_eq!(q.schedule, p.schedule);
    let sched = ScheduleSpec::scaled(8).build().unwrap();
    let cfg = InpaintConfig { seed: 5, ..Default::default() };
    let a = inpaint_clip(&clips[1], &p, &sched, &cfg).unwrap();
    let b = inpaint_clip(&clips[1], &q, &sched, &cfg).unwrap();
    assert_eq!(a.video.frames(), b.video.frames());
}

#[test]
fn stored_clips_evaluate_like_in_memory_ones() {
    let (p, clips) = trained();
    let dir = tempfile::tempdir().unwrap();
    save_clip(&clips[2], dir.path()).unwrap();
    let back = load_clip(dir.path()).unwrap();
    assert_eq!(back.masks(), clips[2].masks());
    assert_eq!(back.truth(), clips[2].truth());

    let truth = clips[2].truth().unwrap();
    let zero_filled =
        clips[2].with_frames((0..4).map(|t| make_masked_frame(clips[2].frame(t), clips[2].mask(t)).unwrap().context).collect()).unwrap();
    let r = evaluate(
        &p,
        &[
            EvalClip { name: "truth", output: &clips[2].with_frames(truth.to_vec()).unwrap(), truth },
            EvalClip { name: "zero", output: &zero_filled, truth },
        ],
    )
    .unwrap();
    assert_eq!(r.clips[0].ssim, 1.0);
    assert!(r.clips[1].ssim < 1.0);
    assert!(r.clips[1].ssim_masked.unwrap() < r.clips[0].ssim_masked.unwrap());
}
